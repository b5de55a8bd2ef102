#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmssl/tensor.hpp"

namespace mmssl {

double accuracy(std::span<const Index> predictions, std::span<const Index> labels);

/// Unweighted mean of per-class F1 over classes 0..classes-1. A class with
/// zero precision or recall denominator scores 0.
double macro_f1(std::span<const Index> predictions, std::span<const Index> labels, Index classes);

struct MetricRow {
  std::size_t epoch = 0;
  std::string split;  ///< "train" or "test"
  double loss = 0.0;
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
};

struct RunMetrics {
  std::string method;
  std::optional<double> fraction;  ///< label fraction; empty for pre-training
  std::vector<MetricRow> rows;

  /// Rows of one split, in epoch order.
  std::vector<MetricRow> split(const std::string& name) const;
  /// Last row of a split; throws if the split is absent.
  const MetricRow& final_row(const std::string& name) const;
};

inline constexpr const char* kMetricsHeader = "method,fraction,epoch,split,loss,accuracy,macro_f1";

/// Shortest round-trip decimal form.
std::string format_double(double v);

void write_metrics_csv(std::ostream& out, std::span<const RunMetrics> runs);

/// Element-wise mean of runs that share method, fraction and row layout.
RunMetrics average_runs(std::span<const RunMetrics> runs);

}  // namespace mmssl
