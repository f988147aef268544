#include "energyformer/metrics.hpp"

#include <ostream>

#include "energyformer/error.hpp"

namespace ef {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t count) {
  if (truth >= n_ || predicted >= n_) throw BoundsError("confusion index out of range");
  counts_[truth * n_ + predicted] += count;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t t = 0;
  for (std::size_t j = 0; j < n_; ++j) t += at(truth, j);
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n_; ++i) t += at(i, predicted);
  return t;
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw DimensionError("confusion matrix must be square");
    for (std::size_t j = 0; j < rows.size(); ++j) m.at(i, j) = rows[i][j];
  }
  return m;
}

Metrics compute_metrics(const ConfusionMatrix& confusion) {
  const std::uint64_t total = confusion.total();
  if (total == 0) throw ArgumentError("confusion matrix is empty");
  const std::size_t n = confusion.classes();
  const double N = static_cast<double>(total);
  Metrics m;
  std::uint64_t diag = 0;
  double chance = 0.0;
  double aa_sum = 0.0;
  std::size_t aa_count = 0;
  m.per_class.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    diag += confusion.at(c, c);
    const std::uint64_t row = confusion.row_sum(c);
    chance += static_cast<double>(row) * static_cast<double>(confusion.col_sum(c));
    if (row == 0) {
      m.undefined_classes.push_back(c);
      continue;
    }
    const double acc = static_cast<double>(confusion.at(c, c)) / static_cast<double>(row);
    m.per_class[c] = acc;
    aa_sum += acc;
    ++aa_count;
  }
  m.oa = static_cast<double>(diag) / N;
  m.aa = aa_sum / static_cast<double>(aa_count);
  const double pe = chance / (N * N);
  // p_e == 1 only when truth and prediction are the same single class.
  m.kappa = pe < 1.0 ? (m.oa - pe) / (1.0 - pe) : 1.0;
  return m;
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  const Metrics& m = report.metrics;
  out.precision(10);
  out << "metric,value\n";
  out << "oa," << m.oa << "\naa," << m.aa << "\nkappa," << m.kappa << "\ntrain_time_s," << report.train_time_seconds
      << "\n";
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    out << "class_" << (c + 1) << "_acc,";
    if (m.per_class[c])
      out << *m.per_class[c];
    else
      out << "undefined";
    out << '\n';
  }
  out << "confusion";
  for (std::size_t j = 0; j < report.confusion.classes(); ++j) out << ",pred_" << (j + 1);
  out << '\n';
  for (std::size_t i = 0; i < report.confusion.classes(); ++i) {
    out << "true_" << (i + 1);
    for (std::size_t j = 0; j < report.confusion.classes(); ++j) out << ',' << report.confusion.at(i, j);
    out << '\n';
  }
}

}  // namespace ef
