#ifndef MTGP_DATA_HPP
#define MTGP_DATA_HPP

#include <Eigen/Dense>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtgp/common.hpp"

namespace mtgp {

// One time series: input locations, targets, optional per-task noise override.
struct Task {
  Eigen::MatrixXd X;  // N_j x d
  Eigen::VectorXd y;  // N_j
  std::optional<double> noise_variance;

  void validate() const {
    if (X.rows() < 1) throw EmptyTask("task has no observations");
    if (X.rows() != y.size()) throw DimensionMismatch("task: |X| != |y|");
    if (!X.allFinite() || !y.allFinite())
      throw std::invalid_argument("task: non-finite inputs or targets");
  }
};

struct Dataset {
  static constexpr int kSchemaVersion = 1;

  std::vector<Task> tasks;
  std::vector<Eigen::MatrixXd> test_X;  // per task, may be empty
  std::vector<Eigen::VectorXd> test_y;
  std::vector<int> labels;              // true center per task, -1 if unknown
  bool test_noisy = false;              // whether test targets carry observation noise
  int d = 1;
  std::string spec_echo;                // one-line echo of the generating spec

  std::size_t num_tasks() const { return tasks.size(); }
};

inline std::string write_dataset_string(const Dataset& ds) {
  std::ostringstream out;
  out << "# mtgp-dataset v" << Dataset::kSchemaVersion << "\n";
  out << "# d " << ds.d << "\n";
  out << "# test_noisy " << (ds.test_noisy ? 1 : 0) << "\n";
  if (!ds.spec_echo.empty()) out << "# spec " << ds.spec_echo << "\n";
  if (!ds.labels.empty()) {
    out << "# labels";
    for (int l : ds.labels) out << ' ' << l;
    out << "\n";
  }
  for (std::size_t j = 0; j < ds.tasks.size(); ++j) {
    if (ds.tasks[j].noise_variance) {
      out << "# noisevar " << j << ' ' << format_double(*ds.tasks[j].noise_variance) << "\n";
    }
  }
  out << "# columns: task split x.. y\n";
  auto emit = [&](std::size_t j, const char* split, const Eigen::MatrixXd& X,
                  const Eigen::VectorXd& y) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      out << j << ' ' << split;
      for (Eigen::Index q = 0; q < X.cols(); ++q) out << ' ' << format_double(X(i, q));
      out << ' ' << format_double(y[i]) << "\n";
    }
  };
  for (std::size_t j = 0; j < ds.tasks.size(); ++j) {
    emit(j, "train", ds.tasks[j].X, ds.tasks[j].y);
    if (j < ds.test_X.size() && ds.test_X[j].rows() > 0)
      emit(j, "test", ds.test_X[j], ds.test_y[j]);
  }
  return out.str();
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << write_dataset_string(ds);
  if (!f) throw IoError("write failed: " + path);
}

inline Dataset read_dataset_string(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file");
  {
    std::istringstream h(line);
    std::string hash, magic, ver;
    h >> hash >> magic >> ver;
    if (hash != "#" || magic != "mtgp-dataset")
      throw IoError("not a dataset file");
    if (ver != "v1")
      throw SchemaVersionMismatch("unsupported dataset schema version: " + ver);
  }
  Dataset ds;
  std::vector<std::pair<std::size_t, double>> noise_overrides;
  struct Rows {
    std::vector<std::vector<double>> train_x, test_x;
    std::vector<double> train_y, test_y;
  };
  std::vector<Rows> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "d") ls >> ds.d;
      else if (key == "test_noisy") { int v; ls >> v; ds.test_noisy = v != 0; }
      else if (key == "spec") {
        std::string rest;
        std::getline(ls, rest);
        if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
        ds.spec_echo = rest;
      } else if (key == "labels") {
        int l;
        while (ls >> l) ds.labels.push_back(l);
      } else if (key == "noisevar") {
        std::size_t j; std::string v;
        ls >> j >> v;
        noise_overrides.emplace_back(j, parse_double(v));
      }
      continue;
    }
    std::size_t j;
    std::string split;
    ls >> j >> split;
    std::vector<double> x(ds.d);
    std::string tok;
    for (int q = 0; q < ds.d; ++q) { ls >> tok; x[q] = parse_double(tok); }
    ls >> tok;
    double y = parse_double(tok);
    if (j >= rows.size()) rows.resize(j + 1);
    if (split == "train") {
      rows[j].train_x.push_back(x);
      rows[j].train_y.push_back(y);
    } else if (split == "test") {
      rows[j].test_x.push_back(x);
      rows[j].test_y.push_back(y);
    } else {
      throw IoError("unknown split tag: " + split);
    }
  }
  auto to_matrix = [&](const std::vector<std::vector<double>>& xs) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(xs.size()), ds.d);
    for (std::size_t i = 0; i < xs.size(); ++i)
      for (int q = 0; q < ds.d; ++q) m(static_cast<Eigen::Index>(i), q) = xs[i][q];
    return m;
  };
  for (auto& r : rows) {
    Task t;
    t.X = to_matrix(r.train_x);
    t.y = Eigen::Map<Eigen::VectorXd>(r.train_y.data(), static_cast<Eigen::Index>(r.train_y.size()));
    ds.tasks.push_back(std::move(t));
    ds.test_X.push_back(to_matrix(r.test_x));
    ds.test_y.push_back(Eigen::Map<Eigen::VectorXd>(r.test_y.data(), static_cast<Eigen::Index>(r.test_y.size())));
  }
  for (auto [j, v] : noise_overrides) {
    if (j < ds.tasks.size()) ds.tasks[j].noise_variance = v;
  }
  return ds;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return read_dataset_string(buf.str());
}

}  // namespace mtgp

#endif
