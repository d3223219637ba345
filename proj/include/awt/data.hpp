#pragma once

// Labelled datasets and time-indexed metric traces.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "awt/numerics.hpp"

namespace awt {

/// Inputs one per row, regression/one-hot targets aligned with them, and the
/// integer class of each example (used for accuracy).
struct Dataset {
  Matrix inputs;
  Matrix targets;
  std::vector<int> labels;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  bool empty() const { return inputs.rows() == 0; }

  void validate() const {
    if (targets.rows() != inputs.rows() || labels.size() != size())
      throw std::invalid_argument("dataset: inputs, targets and labels disagree in length");
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d{Matrix(static_cast<Eigen::Index>(idx.size()), inputs.cols()),
              Matrix(static_cast<Eigen::Index>(idx.size()), targets.cols()),
              std::vector<int>(idx.size())};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(idx[i]);
      d.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(r);
      d.targets.row(static_cast<Eigen::Index>(i)) = targets.row(r);
      d.labels[i] = labels[idx[i]];
    }
    return d;
  }
};

/// One-hot rows for classes 0..k-1.
inline Matrix one_hot(const std::vector<int>& labels, std::size_t k) {
  Matrix Y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(k));
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= k)
      throw std::invalid_argument("label out of range");
    Y(static_cast<Eigen::Index>(n), labels[n]) = 1.0;
  }
  return Y;
}

inline Matrix gather_rows(const Matrix& M, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), M.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = M.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Ordered records of named metrics. Indices must strictly increase and values
/// must be finite; a record may carry any subset of the metric names.
class MetricsTrace {
 public:
  struct Record {
    std::size_t index = 0;
    std::vector<std::pair<std::string, double>> values;

    std::optional<double> get(const std::string& name) const {
      for (const auto& [k, v] : values)
        if (k == name) return v;
      return std::nullopt;
    }
  };

  void add(std::size_t index, std::vector<std::pair<std::string, double>> values) {
    if (!records_.empty() && index <= records_.back().index)
      throw std::invalid_argument("metrics trace: indices must strictly increase");
    for (const auto& [k, v] : values) {
      if (!std::isfinite(v)) throw std::invalid_argument("metrics trace: non-finite " + k);
      if (std::find(names_.begin(), names_.end(), k) == names_.end()) names_.push_back(k);
    }
    records_.push_back({index, std::move(values)});
  }

  const std::vector<Record>& records() const { return records_; }
  const std::vector<std::string>& names() const { return names_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

  /// Every recorded value of one metric, in index order.
  std::vector<double> series(const std::string& name) const {
    std::vector<double> out;
    for (const auto& r : records_)
      if (auto v = r.get(name)) out.push_back(*v);
    return out;
  }

 private:
  std::vector<Record> records_;
  std::vector<std::string> names_;  // in order of first appearance
};

}  // namespace awt
