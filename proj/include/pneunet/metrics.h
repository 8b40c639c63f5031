#ifndef PNEUNET_METRICS_H_
#define PNEUNET_METRICS_H_

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace pneunet {

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Prediction is positive when score >= threshold. Throws ShapeError on a
// length mismatch, ConfigError on empty input or a label outside {0,1}.
ConfusionMatrix confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold);

// Zero denominators yield 0.
double precision(const ConfusionMatrix& cm);
double recall(const ConfusionMatrix& cm);
double f1_score(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);
double specificity(const ConfusionMatrix& cm);

// Names of the metrics whose denominator was zero ("precision", "recall",
// "f1", "accuracy").
std::vector<std::string> undefined_metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr;
  double tpr;
  // Scores >= threshold are called positive; the first point uses +inf.
  double threshold;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

// One point per distinct score in descending order, preceded by (0,0,+inf).
// Tied scores move together, so the last point is always (1,1). Throws
// ConfigError unless both classes are present.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

// Trapezoidal area under the curve over FPR.
double auc(const std::vector<RocPoint>& curve);

struct EvalReport {
  ConfusionMatrix cm;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double threshold = 0.5;
  std::size_t n = 0;
  std::vector<std::string> undefined;
  std::vector<RocPoint> roc;

  // {accuracy, precision, recall, f1, auc, threshold, n, cm:{tp,fp,tn,fn}}
  // plus "undefined" when any metric hit a zero denominator.
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// AUC is 0 (and listed as undefined) when only one class is present.
EvalReport make_report(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold);

// "fpr,tpr,threshold" then one row per point, 6 decimals; +inf as "inf".
std::string roc_to_csv(const std::vector<RocPoint>& curve);
std::vector<RocPoint> roc_from_csv(const std::string& text);

// Writes report.json and roc.csv into dir.
void export_report(const EvalReport& report, const std::filesystem::path& dir);
EvalReport import_report(const std::filesystem::path& dir);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Line chart with one polyline per series, axes and a legend.
std::string render_svg_chart(const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<Series>& series);

}  // namespace pneunet

#endif  // PNEUNET_METRICS_H_
