#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace ef {

/// Square count table, rows = truth, columns = prediction, classes 0-based.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const noexcept { return n_; }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * n_ + predicted]; }

  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t predicted) const;

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
};

struct Metrics {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  /// Empty for classes with no truth samples; those are left out of AA.
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> undefined_classes;
};

/// OA = trace/total, AA = mean per-class recall, kappa = (p_o - p_e) / (1 - p_e).
/// Throws ArgumentError on an empty matrix.
Metrics compute_metrics(const ConfusionMatrix& confusion);

struct EvalReport {
  ConfusionMatrix confusion;
  Metrics metrics;
  double train_time_seconds = 0.0;
};

/// Summary row plus one row per class.
void write_report_csv(const EvalReport& report, std::ostream& out);

}  // namespace ef
