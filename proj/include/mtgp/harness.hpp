#ifndef MTGP_HARNESS_HPP
#define MTGP_HARNESS_HPP

#include <Eigen/Dense>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtgp/baselines.hpp"
#include "mtgp/common.hpp"
#include "mtgp/data.hpp"
#include "mtgp/datagen.hpp"
#include "mtgp/grouped.hpp"
#include "mtgp/metrics.hpp"

namespace mtgp {

struct ExperimentConfig {
  std::string dataset = "synthetic";      // synthetic | glucose | path to a dataset file
  std::vector<std::string> methods{"mtvar"};
  std::vector<int> m_sweep{10};
  int reps = 10;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  GroupedModelConfig model;
  SyntheticSpec synthetic;
  GlucoseSpec glucose;
  std::vector<std::pair<std::string, std::string>> echo;  // parsed key/value pairs

  void validate() const {
    if (reps < 1) throw std::invalid_argument("config: reps must be >= 1");
    if (m_sweep.empty()) throw std::invalid_argument("config: empty m sweep");
    for (std::size_t a = 0; a < m_sweep.size(); ++a) {
      if (m_sweep[a] < 1) throw std::invalid_argument("config: m values must be >= 1");
      for (std::size_t b = a + 1; b < m_sweep.size(); ++b)
        if (m_sweep[a] == m_sweep[b])
          throw std::invalid_argument("config: duplicate m value");
    }
    if (methods.empty()) throw std::invalid_argument("config: no methods");
    for (const auto& m : methods)
      if (m != "mtvar" && m != "direct" && m != "mtsd" && m != "mtpp")
        throw UnknownParameter("config: unknown method " + m);
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

// Parses the key=value experiment-config format ('#' starts a comment).
// Unknown keys are rejected so typos cannot silently change an experiment.
inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) continue;
    cfg.echo.emplace_back(key, val);

    if (key == "dataset") cfg.dataset = val;
    else if (key == "methods" || key == "method") cfg.methods = detail::split_list(val);
    else if (key == "m") {
      cfg.m_sweep.clear();
      for (const auto& t : detail::split_list(val)) cfg.m_sweep.push_back(std::stoi(t));
    }
    else if (key == "reps") cfg.reps = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "out") cfg.out_dir = val;
    else if (key == "model.num_centers") cfg.model.num_centers = std::stoi(val);
    else if (key == "model.restarts") cfg.model.restarts = std::stoi(val);
    else if (key == "model.em_max_iters") cfg.model.em_max_iters = std::stoi(val);
    else if (key == "model.mstep_max_iters") cfg.model.mstep_max_iters = std::stoi(val);
    else if (key == "model.alpha0") cfg.model.alpha0 = parse_double(val);
    else if (key == "model.warm_start") cfg.model.warm_start = val == "1" || val == "true";
    else if (key == "synthetic.num_tasks") cfg.synthetic.num_tasks = std::stoi(val);
    else if (key == "synthetic.points_per_task") cfg.synthetic.points_per_task = std::stoi(val);
    else if (key == "synthetic.num_centers") cfg.synthetic.num_centers = std::stoi(val);
    else if (key == "synthetic.noise_variance") cfg.synthetic.noise_variance = parse_double(val);
    else if (key == "synthetic.fixed_signal_variance")
      cfg.synthetic.fixed_signal_variance = parse_double(val);
    else if (key == "synthetic.random_signal_variance")
      cfg.synthetic.random_signal_variance = parse_double(val);
    else if (key == "synthetic.x_min") cfg.synthetic.x_min = parse_double(val);
    else if (key == "synthetic.x_max") cfg.synthetic.x_max = parse_double(val);
    else if (key == "synthetic.test_grid") cfg.synthetic.test_grid = std::stoi(val);
    else if (key == "glucose.num_subjects") cfg.glucose.num_subjects = std::stoi(val);
    else if (key == "glucose.train_points") cfg.glucose.train_points = std::stoi(val);
    else if (key == "glucose.test_points") cfg.glucose.test_points = std::stoi(val);
    else if (key == "glucose.noise_variance") cfg.glucose.noise_variance = parse_double(val);
    else throw UnknownParameter("config: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

inline std::string config_echo_string(const ExperimentConfig& cfg) {
  std::ostringstream out;
  for (const auto& [k, v] : cfg.echo) out << k << " = " << v << "\n";
  return out.str();
}

// ---- method dispatch ------------------------------------------------------

struct FittedMethod {
  std::string name;
  double objective = 0.0;  // bound or log-likelihood
  std::function<PredictiveDistribution(std::size_t, const Eigen::MatrixXd&, bool)> predict;
};

inline FittedMethod fit_method(const std::string& method, const std::vector<Task>& tasks,
                               int m, std::uint64_t seed, const GroupedModelConfig& base) {
  FittedMethod out;
  out.name = method;
  if (method == "direct") {
    auto model = std::make_shared<DirectModel>(direct_fit(tasks, seed));
    out.objective = model->loglik;
    out.predict = [model](std::size_t j, const Eigen::MatrixXd& x, bool add_noise) {
      return direct_predict(j, x, model->tasks, model->hyper, add_noise);
    };
    return out;
  }
  GroupedModel fitted;
  if (method == "mtsd") fitted = mtsd_fit(tasks, m, seed, base);
  else if (method == "mtpp") fitted = mtpp_fit(tasks, m, seed, base);
  else if (method == "mtvar") {
    GroupedModelConfig cfg = base;
    cfg.m_per_center = m;
    cfg.seed = seed;
    fitted = fit_grouped(tasks, cfg);
  } else {
    throw UnknownParameter("fit_method: unknown method " + method);
  }
  auto model = std::make_shared<GroupedModel>(std::move(fitted));
  out.objective = model->bound;
  out.predict = [model](std::size_t j, const Eigen::MatrixXd& x, bool add_noise) {
    return predict_existing(*model, j, x, add_noise);
  };
  return out;
}

// Per-task SMSE/MSLL of a fitted method on a dataset's held-out points. The
// trivial model for MSLL uses the task's training targets, falling back to
// the pooled training targets when a task has fewer than two.
inline MetricsReport evaluate_method(const FittedMethod& method, const Dataset& ds,
                                     std::uint64_t seed) {
  Eigen::VectorXd pooled;
  {
    Eigen::Index n = 0;
    for (const auto& t : ds.tasks) n += t.y.size();
    pooled.resize(n);
    Eigen::Index off = 0;
    for (const auto& t : ds.tasks) {
      pooled.segment(off, t.y.size()) = t.y;
      off += t.y.size();
    }
  }
  MetricsReport rep;
  rep.method = method.name;
  rep.seed = seed;
  for (std::size_t j = 0; j < ds.tasks.size(); ++j) {
    if (j >= ds.test_X.size() || ds.test_X[j].rows() == 0) continue;
    PredictiveDistribution p = method.predict(j, ds.test_X[j], ds.test_noisy);
    const Eigen::VectorXd& y_train =
        ds.tasks[j].y.size() >= 2 ? ds.tasks[j].y : pooled;
    rep.task_smse.push_back(smse(p.mean, ds.test_y[j]));
    rep.task_msll.push_back(msll(p.mean, p.var, ds.test_y[j], y_train));
  }
  rep.finalize();
  return rep;
}

// ---- experiment orchestration ---------------------------------------------

struct SweepRow {
  std::string method;
  int m = 0;
  int rep = 0;
  double smse = 0.0;
  double msll = 0.0;
  double objective = 0.0;
  double fit_seconds = 0.0;
};

struct Manifest {
  std::vector<std::pair<std::string, std::uint64_t>> files;  // path, content hash
  std::vector<SweepRow> rows;
  std::vector<std::string> failures;
};

inline Dataset make_dataset(const ExperimentConfig& cfg, std::uint64_t data_seed) {
  if (cfg.dataset == "synthetic") {
    SyntheticSpec s = cfg.synthetic;
    s.seed = data_seed;
    return sample_mixed_effect(s);
  }
  if (cfg.dataset == "glucose") {
    GlucoseSpec s = cfg.glucose;
    s.seed = data_seed;
    return simulate_glucose(s);
  }
  return read_dataset(cfg.dataset);
}

inline void write_text_artifact(Manifest& man, const std::string& path,
                                const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << content;
  man.files.emplace_back(path, fnv1a(content));
}

inline Manifest run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  Manifest man;
  write_text_artifact(man, cfg.out_dir + "/config_echo.txt", config_echo_string(cfg));

  for (int rep = 0; rep < cfg.reps; ++rep) {
    const std::uint64_t data_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep));
    Dataset ds;
    try {
      ds = make_dataset(cfg, data_seed);
    } catch (const std::exception& e) {
      man.failures.push_back("rep " + std::to_string(rep) + " datagen: " + e.what());
      continue;
    }
    for (const std::string& method : cfg.methods) {
      for (int m : cfg.m_sweep) {
        try {
          const std::uint64_t fit_seed =
              derive_seed(cfg.seed, 1000ULL + static_cast<std::uint64_t>(rep));
          const auto t0 = std::chrono::steady_clock::now();
          FittedMethod fitted = fit_method(method, ds.tasks, m, fit_seed, cfg.model);
          const auto t1 = std::chrono::steady_clock::now();
          MetricsReport rep_metrics = evaluate_method(fitted, ds, fit_seed);
          SweepRow row;
          row.method = method;
          row.m = m;
          row.rep = rep;
          row.smse = rep_metrics.mean_smse;
          row.msll = rep_metrics.mean_msll;
          row.objective = fitted.objective;
          row.fit_seconds = std::chrono::duration<double>(t1 - t0).count();
          man.rows.push_back(row);
        } catch (const std::exception& e) {
          man.failures.push_back("rep " + std::to_string(rep) + " " + method + " m=" +
                                 std::to_string(m) + ": " + e.what());
        }
      }
    }
  }

  // per-repetition results
  std::ostringstream res;
  res << "rep,method,m,smse,msll,objective,fit_seconds\n";
  for (const auto& r : man.rows)
    res << r.rep << ',' << r.method << ',' << r.m << ',' << format_double(r.smse) << ','
        << format_double(r.msll) << ',' << format_double(r.objective) << ','
        << format_double(r.fit_seconds) << "\n";
  write_text_artifact(man, cfg.out_dir + "/results.csv", res.str());

  // mean +- sd summary per (method, m)
  std::map<std::pair<std::string, int>, std::vector<const SweepRow*>> groups;
  for (const auto& r : man.rows) groups[{r.method, r.m}].push_back(&r);
  std::ostringstream sum;
  sum << "method,m,smse_mean,smse_sd,msll_mean,msll_sd,fit_seconds_mean\n";
  for (const auto& [key, rows] : groups) {
    auto stats = [&](auto getter) {
      double mean = 0.0;
      for (const auto* r : rows) mean += getter(*r);
      mean /= static_cast<double>(rows.size());
      double var = 0.0;
      for (const auto* r : rows) var += (getter(*r) - mean) * (getter(*r) - mean);
      var /= static_cast<double>(rows.size());
      return std::make_pair(mean, std::sqrt(var));
    };
    auto [sm, ss] = stats([](const SweepRow& r) { return r.smse; });
    auto [lm, lsd] = stats([](const SweepRow& r) { return r.msll; });
    auto [tm, tsd] = stats([](const SweepRow& r) { return r.fit_seconds; });
    (void)tsd;
    sum << key.first << ',' << key.second << ',' << format_double(sm) << ','
        << format_double(ss) << ',' << format_double(lm) << ',' << format_double(lsd)
        << ',' << format_double(tm) << "\n";
  }
  write_text_artifact(man, cfg.out_dir + "/sweep.csv", sum.str());

  if (!man.failures.empty()) {
    std::ostringstream fl;
    for (const auto& f : man.failures) fl << f << "\n";
    write_text_artifact(man, cfg.out_dir + "/failures.txt", fl.str());
  }

  // manifest last: lists every artifact with its content hash
  std::ostringstream mf;
  mf << "path,fnv1a\n";
  for (const auto& [path, hash] : man.files) mf << path << ',' << hash << "\n";
  {
    std::ofstream f(cfg.out_dir + "/manifest.csv", std::ios::binary);
    if (!f) throw IoError("cannot write manifest");
    f << mf.str();
  }
  return man;
}

}  // namespace mtgp

#endif
