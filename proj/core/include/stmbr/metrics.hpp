#pragma once

#include <optional>
#include <span>
#include <string>

#include "stmbr/tensor.hpp"

namespace stmbr {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
};

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth,
                          int positive_class);

/// Detection metrics in percent (MCC in [-1,1]). A metric whose denominator
/// is zero is reported as an explicit "undefined" (empty optional), never as
/// a silent NaN.
struct DetectionReport {
  std::optional<double> accuracy, precision, recall, specificity, f_score, mcc;
  std::optional<double> roc_auc, pr_auc;  // filled by curve_auc when scores exist
};

DetectionReport detection_metrics(const ConfusionCounts& c);

double f_score_percent(double precision_pct, double recall_pct);

enum class CurveKind { kRoc, kPr };

struct CurvePoint {
  double x, y;  // ROC: (FPR, TPR); PR: (recall, precision)
};

struct Curve {
  std::vector<CurvePoint> points;
  double auc = 0;
};

/// Threshold sweep over unique scores (descending, ties grouped); AUC by the
/// trapezoidal rule. Labels are binary with 1 = positive.
Curve curve_auc(std::span<const double> scores, std::span<const int> labels, CurveKind kind);

struct ClassSegMetrics {
  std::optional<double> dice, iou, class_accuracy, boundary_f;  // ratios in [0,1]
};

struct SegReport {
  ClassSegMetrics infected, background;
  std::optional<double> global_acc, mean_acc, mean_iou, weighted_iou, mean_bfs;
};

/// Per-pair segmentation metrics over binary (H,W) masks; boundary F-score
/// matches boundary pixels within Euclidean distance `boundary_tol`.
SegReport segmentation_metrics(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt,
                               double boundary_tol = 2.0);

/// Accumulates a SegReport over many mask pairs: pixel counts are pooled,
/// boundary F-scores are averaged per image.
class SegAccumulator {
 public:
  void add(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt, double boundary_tol = 2.0);
  SegReport report() const;

 private:
  ConfusionCounts infected_;  // positive = infected
  int64_t gt_infected_ = 0, gt_background_ = 0;
  double bf_infected_sum_ = 0, bf_background_sum_ = 0;
  int64_t bf_count_ = 0;
};

struct PcaResult {
  Tensor<double> projected;               // (N, k)
  std::vector<double> explained_ratio;    // non-increasing, sums to <= 1
};

/// Mean-centered projection onto the top-k covariance eigenvectors.
PcaResult pca_project(const Tensor<double>& features, int k = 3);

// Report emission: UTF-8 CSV and line-delimited key=value text. Percent
// values are printed with 2 decimals, ratios with 4.
std::string detection_report_csv(const DetectionReport& r);
std::string detection_report_kv(const DetectionReport& r);
std::string seg_report_csv(const SegReport& r);
std::string seg_report_kv(const SegReport& r);
std::string curve_csv(const Curve& c, CurveKind kind);

}  // namespace stmbr
