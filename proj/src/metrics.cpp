#include "mmssl/metrics.hpp"

#include <charconv>
#include <ostream>

namespace mmssl {

namespace {

void require_same_length(std::span<const Index> a, std::span<const Index> b) {
  if (a.size() != b.size()) {
    throw DimensionError("metrics: " + std::to_string(a.size()) + " predictions for " + std::to_string(b.size()) +
                         " labels");
  }
}

}  // namespace

double accuracy(std::span<const Index> predictions, std::span<const Index> labels) {
  require_same_length(predictions, labels);
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double macro_f1(std::span<const Index> predictions, std::span<const Index> labels, Index classes) {
  require_same_length(predictions, labels);
  if (classes <= 0) throw ConfigError("macro_f1: class count must be positive");
  std::vector<double> tp(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> fp(tp), fn(tp);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Index p = predictions[i], y = labels[i];
    if (p < 0 || p >= classes || y < 0 || y >= classes) throw IndexError("macro_f1: class index out of range");
    if (p == y) {
      tp[static_cast<std::size_t>(p)] += 1;
    } else {
      fp[static_cast<std::size_t>(p)] += 1;
      fn[static_cast<std::size_t>(y)] += 1;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const double precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    total += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return total / static_cast<double>(classes);
}

std::vector<MetricRow> RunMetrics::split(const std::string& name) const {
  std::vector<MetricRow> out;
  for (const auto& r : rows) {
    if (r.split == name) out.push_back(r);
  }
  return out;
}

const MetricRow& RunMetrics::final_row(const std::string& name) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->split == name) return *it;
  }
  throw ContractError("metrics: no rows for split '" + name + "'");
}

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_metrics_csv(std::ostream& out, std::span<const RunMetrics> runs) {
  out << kMetricsHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("-"); };
  for (const auto& run : runs) {
    for (const auto& r : run.rows) {
      out << run.method << ',' << opt(run.fraction) << ',' << r.epoch << ',' << r.split << ','
          << format_double(r.loss) << ',' << opt(r.accuracy) << ',' << opt(r.macro_f1) << '\n';
    }
  }
}

RunMetrics average_runs(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw ContractError("average_runs: no runs");
  RunMetrics avg = runs.front();
  const double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < avg.rows.size(); ++i) {
    double loss = 0, acc = 0, f1 = 0;
    for (const auto& run : runs) {
      if (run.rows.size() != avg.rows.size() || run.rows[i].epoch != avg.rows[i].epoch ||
          run.rows[i].split != avg.rows[i].split) {
        throw ContractError("average_runs: runs have different row layouts");
      }
      loss += run.rows[i].loss;
      acc += run.rows[i].accuracy.value_or(0.0);
      f1 += run.rows[i].macro_f1.value_or(0.0);
    }
    avg.rows[i].loss = loss / n;
    if (avg.rows[i].accuracy) avg.rows[i].accuracy = acc / n;
    if (avg.rows[i].macro_f1) avg.rows[i].macro_f1 = f1 / n;
  }
  return avg;
}

}  // namespace mmssl
