#include "ecgx/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "ecgx/errors.hpp"

namespace ecgx {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (rows[p].size() != rows.size()) throw ShapeError("confusion matrix rows must be square");
    for (std::size_t t = 0; t < rows.size(); ++t) cm.at(p, t) = rows[p][t];
  }
  return cm;
}

void ConfusionMatrix::add(int truth, int prediction) {
  if (truth < 0 || prediction < 0 || static_cast<std::size_t>(truth) >= n_ || static_cast<std::size_t>(prediction) >= n_) {
    throw std::out_of_range("confusion matrix: class index out of range");
  }
  ++at(static_cast<std::size_t>(prediction), static_cast<std::size_t>(truth));
}

std::size_t ConfusionMatrix::truth_count(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(p, c);
  return s;
}

std::size_t ConfusionMatrix::predicted_count(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += at(c, t);
  return s;
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeError("cannot add confusion matrices with different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

double f1_per_class(const ConfusionMatrix& cm, std::size_t c) {
  const std::size_t denom = cm.truth_count(c) + cm.predicted_count(c);
  if (denom == 0) {
    warn("F1 for class " + std::to_string(c) + " is undefined (no true or predicted records); using 0");
    return 0.0;
  }
  return 2.0 * static_cast<double>(cm.at(c, c)) / static_cast<double>(denom);
}

std::vector<double> f1_all(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.classes());
  for (std::size_t c = 0; c < cm.classes(); ++c) out[c] = f1_per_class(cm, c);
  return out;
}

double overall_f1(std::span<const double> per_class) {
  if (per_class.size() < 3) throw ShapeError("overall F1 needs the AF, N and O scores");
  return (per_class[0] + per_class[1] + per_class[2]) / 3.0;
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

F1Report make_report(std::span<const ConfusionMatrix> folds) {
  if (folds.empty()) throw ConfigError("F1 report needs at least one fold");
  F1Report r;
  const std::size_t C = folds[0].classes();
  if (C != r.class_names.size()) {
    r.class_names.clear();
    for (std::size_t c = 0; c < C; ++c) r.class_names.push_back(std::to_string(c));
  }
  r.summed = ConfusionMatrix(C);
  for (const auto& cm : folds) {
    r.folds.push_back(cm);
    r.summed += cm;
    r.fold_class_f1.push_back(f1_all(cm));
    r.fold_overall.push_back(C >= 3 ? overall_f1(r.fold_class_f1.back()) : 0.0);
  }
  r.class_mean.assign(C, 0.0);
  r.class_std.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> col;
    for (const auto& f : r.fold_class_f1) col.push_back(f[c]);
    r.class_mean[c] = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    r.class_std[c] = sample_std(col);
  }
  r.overall_mean = std::accumulate(r.fold_overall.begin(), r.fold_overall.end(), 0.0) /
                   static_cast<double>(r.fold_overall.size());
  r.overall_std = sample_std(r.fold_overall);
  return r;
}

double paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("paired t-test: score vectors differ in length");
  if (a.size() < 2) throw ConfigError("paired t-test needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  const double sd = sample_std(d);
  if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / (sd / std::sqrt(n));
  const boost::math::students_t dist(n - 1.0);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

std::string report_json(const F1Report& report, const std::string& model_name) {
  using nlohmann::json;
  json j;
  if (!model_name.empty()) j["model"] = model_name;
  j["classes"] = report.class_names;
  json folds = json::array();
  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    json fold;
    fold["fold"] = f;
    for (std::size_t c = 0; c < report.class_names.size(); ++c) fold["f1"][report.class_names[c]] = report.fold_class_f1[f][c];
    fold["overall_f1"] = report.fold_overall[f];
    json rows = json::array();
    const auto& cm = report.folds[f];
    for (std::size_t p = 0; p < cm.classes(); ++p) {
      json row = json::array();
      for (std::size_t t = 0; t < cm.classes(); ++t) row.push_back(cm.at(p, t));
      rows.push_back(row);
    }
    fold["confusion"] = rows;
    folds.push_back(fold);
  }
  j["folds"] = folds;
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    j["aggregate"]["f1_mean"][report.class_names[c]] = report.class_mean[c];
    j["aggregate"]["f1_std"][report.class_names[c]] = report.class_std[c];
  }
  j["aggregate"]["overall_f1_mean"] = report.overall_mean;
  j["aggregate"]["overall_f1_std"] = report.overall_std;
  json summed = json::array();
  for (std::size_t p = 0; p < report.summed.classes(); ++p) {
    json row = json::array();
    for (std::size_t t = 0; t < report.summed.classes(); ++t) row.push_back(report.summed.at(p, t));
    summed.push_back(row);
  }
  j["aggregate"]["confusion_rows_prediction_cols_truth"] = summed;
  return j.dump(2) + "\n";
}

std::string report_table(const F1Report& report, const std::string& model_name) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(28) << "Model";
  for (const auto& n : report.class_names) out << std::setw(14) << ("F1 " + n);
  out << "Overall F1\n";
  out << std::setw(28) << (model_name.empty() ? "-" : model_name);
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(2) << report.class_mean[c] << "±" << report.class_std[c];
    // setw counts bytes and the plus-minus sign takes two
    out << cell.str() << std::string(cell.str().size() < 15 ? 15 - cell.str().size() : 1, ' ');
  }
  out << report.overall_mean << "±" << report.overall_std << "\n";
  return out.str();
}

std::string confusion_table(const ConfusionMatrix& cm, std::span<const std::string> names) {
  std::ostringstream out;
  out << std::setw(10) << "pred\\true";
  for (std::size_t t = 0; t < cm.classes(); ++t) out << std::setw(8) << (t < names.size() ? names[t] : std::to_string(t));
  out << std::setw(8) << "Total" << '\n';
  for (std::size_t p = 0; p < cm.classes(); ++p) {
    out << std::setw(10) << (p < names.size() ? names[p] : std::to_string(p));
    for (std::size_t t = 0; t < cm.classes(); ++t) out << std::setw(8) << cm.at(p, t);
    out << std::setw(8) << cm.predicted_count(p) << '\n';
  }
  out << std::setw(10) << "Total";
  for (std::size_t t = 0; t < cm.classes(); ++t) out << std::setw(8) << cm.truth_count(t);
  out << std::setw(8) << cm.total() << '\n';
  return out.str();
}

}  // namespace ecgx
