#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ecgx {

/// counts[prediction][truth], the layout of the published tables.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 4);
  /// rows[p][t]
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows);

  std::size_t classes() const { return n_; }
  void add(int truth, int prediction);
  std::size_t at(std::size_t prediction, std::size_t truth) const { return counts_[prediction * n_ + truth]; }
  std::size_t& at(std::size_t prediction, std::size_t truth) { return counts_[prediction * n_ + truth]; }

  /// P_c: records whose ground truth is c.
  std::size_t truth_count(std::size_t c) const;
  /// p_c: records predicted as c.
  std::size_t predicted_count(std::size_t c) const;
  std::size_t total() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

/// 2 TP_c / (P_c + p_c); 0 with a warning when the class never occurs.
double f1_per_class(const ConfusionMatrix& cm, std::size_t c);
std::vector<double> f1_all(const ConfusionMatrix& cm);
/// Mean of the AF, N and O scores (the first three classes); Noisy is excluded.
double overall_f1(std::span<const double> per_class);

struct F1Report {
  std::vector<std::string> class_names{"AF", "N", "O", "~"};
  std::vector<std::vector<double>> fold_class_f1;  // [fold][class]
  std::vector<double> fold_overall;
  std::vector<double> class_mean, class_std;
  double overall_mean = 0.0;
  double overall_std = 0.0;
  ConfusionMatrix summed;
  std::vector<ConfusionMatrix> folds;
};

/// Sample standard deviation (n-1); 0 for a single value.
double sample_std(std::span<const double> values);

F1Report make_report(std::span<const ConfusionMatrix> folds);

/// Two-sided paired t-test p-value. Zero variance of the differences gives
/// p = 1 when the means agree and p = 0 otherwise.
double paired_t_test(std::span<const double> a, std::span<const double> b);

std::string report_json(const F1Report& report, const std::string& model_name = "");
/// Paper-style table: one row with per-class and overall F1 (mean ± std).
std::string report_table(const F1Report& report, const std::string& model_name = "");
std::string confusion_table(const ConfusionMatrix& cm, std::span<const std::string> names);

}  // namespace ecgx
