#include "stmbr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace stmbr {

namespace {

std::optional<double> ratio(int64_t num, int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(std::optional<double> v, int decimals) {
  if (!v) return "undefined";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  os << *v;
  return os.str();
}

std::string fmt_pct(std::optional<double> v) { return fmt(v, 2); }
std::string fmt_ratio(std::optional<double> v) { return fmt(v, 4); }

}  // namespace

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth,
                          int positive_class) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("confusion: prediction/label length mismatch");
  if (predicted.empty()) throw std::invalid_argument("confusion: empty input");
  ConfusionCounts c;
  for (size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == positive_class;
    const bool t = truth[i] == positive_class;
    if (p && t)
      ++c.tp;
    else if (p && !t)
      ++c.fp;
    else if (!p && t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

DetectionReport detection_metrics(const ConfusionCounts& c) {
  DetectionReport r;
  if (auto a = ratio(c.tp + c.tn, c.total())) r.accuracy = 100.0 * *a;
  if (auto p = ratio(c.tp, c.tp + c.fp)) r.precision = 100.0 * *p;
  if (auto rec = ratio(c.tp, c.tp + c.fn)) r.recall = 100.0 * *rec;
  if (auto s = ratio(c.tn, c.tn + c.fp)) r.specificity = 100.0 * *s;
  if (r.precision && r.recall && (*r.precision + *r.recall) > 0)
    r.f_score = f_score_percent(*r.precision, *r.recall);
  const double denom = std::sqrt(static_cast<double>(c.tp + c.fp)) *
                       std::sqrt(static_cast<double>(c.tp + c.fn)) *
                       std::sqrt(static_cast<double>(c.tn + c.fp)) *
                       std::sqrt(static_cast<double>(c.tn + c.fn));
  if (denom > 0)
    r.mcc = (static_cast<double>(c.tp) * c.tn - static_cast<double>(c.fp) * c.fn) / denom;
  return r;
}

double f_score_percent(double precision_pct, double recall_pct) {
  return 2.0 * precision_pct * recall_pct / (precision_pct + recall_pct);
}

Curve curve_auc(std::span<const double> scores, std::span<const int> labels, CurveKind kind) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("curve_auc: scores/labels mismatch");
  int64_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0) throw std::invalid_argument("curve_auc: need both classes present");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  Curve c;
  int64_t tp = 0, fp = 0;
  if (kind == CurveKind::kRoc)
    c.points.push_back({0.0, 0.0});
  else
    c.points.push_back({0.0, 1.0});

  size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    // Consume every sample tied at this threshold before emitting a point.
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    if (kind == CurveKind::kRoc) {
      c.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
    } else {
      const double recall = static_cast<double>(tp) / pos;
      const double precision = static_cast<double>(tp) / (tp + fp);
      c.points.push_back({recall, precision});
    }
  }

  double auc = 0;
  for (size_t j = 1; j < c.points.size(); ++j) {
    const auto& a = c.points[j - 1];
    const auto& b = c.points[j];
    auc += (b.x - a.x) * (a.y + b.y) * 0.5;
  }
  c.auc = auc;
  return c;
}

namespace {

struct ClassCounts {
  int64_t tp = 0, fp = 0, fn = 0;
};

ClassCounts count_class(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt, uint8_t cls) {
  ClassCounts c;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] == cls;
    const bool t = gt.data[i] == cls;
    if (p && t)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (t)
      ++c.fn;
  }
  return c;
}

// A perfect match of an empty class counts as 1.0 by convention.
std::optional<double> safe_overlap(int64_t num, int64_t den) {
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

ClassSegMetrics class_metrics(const ClassCounts& c) {
  ClassSegMetrics m;
  m.iou = safe_overlap(c.tp, c.tp + c.fp + c.fn);
  m.dice = safe_overlap(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.class_accuracy = safe_overlap(c.tp, c.tp + c.fn);
  return m;
}

std::vector<std::pair<int, int>> boundary_pixels(const Tensor<uint8_t>& mask, uint8_t cls) {
  const int h = mask.shape[0], w = mask.shape[1];
  std::vector<std::pair<int, int>> pts;
  auto at = [&](int y, int x) -> bool {
    if (y < 0 || y >= h || x < 0 || x >= w) return false;  // outside = background
    return mask.data[static_cast<size_t>(y) * w + x] == cls;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.data[static_cast<size_t>(y) * w + x] != cls) continue;
      if (!at(y - 1, x) || !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1)) pts.push_back({y, x});
    }
  return pts;
}

double match_fraction(const std::vector<std::pair<int, int>>& from,
                      const std::vector<std::pair<int, int>>& to, double tol) {
  if (from.empty()) return 1.0;
  if (to.empty()) return 0.0;
  const double tol2 = tol * tol;
  int64_t matched = 0;
  for (const auto& [y, x] : from) {
    for (const auto& [ty, tx] : to) {
      const double dy = y - ty, dx = x - tx;
      if (dy * dy + dx * dx <= tol2) {
        ++matched;
        break;
      }
    }
  }
  return static_cast<double>(matched) / static_cast<double>(from.size());
}

double boundary_f_score(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt, uint8_t cls,
                        double tol) {
  const auto pb = boundary_pixels(pred, cls);
  const auto gb = boundary_pixels(gt, cls);
  if (pb.empty() && gb.empty()) return 1.0;
  const double precision = match_fraction(pb, gb, tol);
  const double recall = match_fraction(gb, pb, tol);
  if (precision + recall == 0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

void check_masks(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt) {
  if (pred.ndim() != 2 || pred.shape != gt.shape)
    throw std::invalid_argument("segmentation_metrics: masks must be equal-shape (H,W)");
  for (size_t i = 0; i < pred.data.size(); ++i)
    if (pred.data[i] > 1 || gt.data[i] > 1)
      throw std::invalid_argument("segmentation_metrics: masks must be binary");
}

SegReport assemble_report(const ClassCounts& inf, int64_t gt_inf, int64_t gt_bg, int64_t correct,
                          int64_t total, std::optional<double> bf_inf,
                          std::optional<double> bf_bg) {
  // Background counts follow from the infected ones on binary masks.
  ClassCounts bg;
  bg.tp = total - inf.tp - inf.fp - inf.fn;
  bg.fp = inf.fn;
  bg.fn = inf.fp;

  SegReport r;
  r.infected = class_metrics(inf);
  r.background = class_metrics(bg);
  r.infected.boundary_f = bf_inf;
  r.background.boundary_f = bf_bg;
  r.global_acc = safe_overlap(correct, total);
  if (r.infected.class_accuracy && r.background.class_accuracy)
    r.mean_acc = (*r.infected.class_accuracy + *r.background.class_accuracy) / 2;
  if (r.infected.iou && r.background.iou) {
    r.mean_iou = (*r.infected.iou + *r.background.iou) / 2;
    // Weighted by ground-truth class pixel frequency.
    r.weighted_iou = (static_cast<double>(gt_inf) * *r.infected.iou +
                      static_cast<double>(gt_bg) * *r.background.iou) /
                     static_cast<double>(gt_inf + gt_bg);
  }
  if (bf_inf && bf_bg) r.mean_bfs = (*bf_inf + *bf_bg) / 2;
  return r;
}

}  // namespace

SegReport segmentation_metrics(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt,
                               double boundary_tol) {
  check_masks(pred, gt);
  const ClassCounts inf = count_class(pred, gt, 1);
  int64_t correct = 0, gt_inf = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    if (pred.data[i] == gt.data[i]) ++correct;
    if (gt.data[i] == 1) ++gt_inf;
  }
  const int64_t total = static_cast<int64_t>(pred.data.size());
  return assemble_report(inf, gt_inf, total - gt_inf, correct, total,
                         boundary_f_score(pred, gt, 1, boundary_tol),
                         boundary_f_score(pred, gt, 0, boundary_tol));
}

void SegAccumulator::add(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt,
                         double boundary_tol) {
  check_masks(pred, gt);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] == 1;
    const bool t = gt.data[i] == 1;
    if (p && t)
      ++infected_.tp;
    else if (p)
      ++infected_.fp;
    else if (t)
      ++infected_.fn;
    else
      ++infected_.tn;
    (t ? gt_infected_ : gt_background_)++;
  }
  bf_infected_sum_ += boundary_f_score(pred, gt, 1, boundary_tol);
  bf_background_sum_ += boundary_f_score(pred, gt, 0, boundary_tol);
  ++bf_count_;
}

SegReport SegAccumulator::report() const {
  if (bf_count_ == 0) throw std::runtime_error("SegAccumulator: no mask pairs added");
  ClassCounts inf{infected_.tp, infected_.fp, infected_.fn};
  return assemble_report(inf, gt_infected_, gt_background_, infected_.tp + infected_.tn,
                         infected_.total(), bf_infected_sum_ / bf_count_,
                         bf_background_sum_ / bf_count_);
}

PcaResult pca_project(const Tensor<double>& features, int k) {
  if (features.ndim() != 2) throw std::invalid_argument("pca_project: expected (N,D) features");
  const int n = features.shape[0], d = features.shape[1];
  if (n < 2) throw std::invalid_argument("pca_project: need at least 2 samples");
  if (k < 1 || k > std::min(n, d)) throw std::invalid_argument("pca_project: k out of range");

  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += features.at2(r, c);
  for (auto& m : mean) m /= n;

  // Covariance (D x D), normalized by N-1.
  std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
  for (int r = 0; r < n; ++r)
    for (int a = 0; a < d; ++a) {
      const double va = features.at2(r, a) - mean[static_cast<size_t>(a)];
      for (int b = a; b < d; ++b)
        cov[static_cast<size_t>(a) * d + b] += va * (features.at2(r, b) - mean[static_cast<size_t>(b)]);
    }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      cov[static_cast<size_t>(a) * d + b] /= (n - 1);
      cov[static_cast<size_t>(b) * d + a] = cov[static_cast<size_t>(a) * d + b];
    }

  // Cyclic Jacobi eigendecomposition; vectors accumulate in `vec` columns.
  std::vector<double> vec(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) vec[static_cast<size_t>(i) * d + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += std::abs(cov[static_cast<size_t>(p) * d + q]);
    if (off < 1e-14) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        const double apq = cov[static_cast<size_t>(p) * d + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = cov[static_cast<size_t>(p) * d + p];
        const double aqq = cov[static_cast<size_t>(q) * d + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1.0 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (int i = 0; i < d; ++i) {
          const double aip = cov[static_cast<size_t>(i) * d + p];
          const double aiq = cov[static_cast<size_t>(i) * d + q];
          cov[static_cast<size_t>(i) * d + p] = c * aip - s * aiq;
          cov[static_cast<size_t>(i) * d + q] = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          const double api = cov[static_cast<size_t>(p) * d + i];
          const double aqi = cov[static_cast<size_t>(q) * d + i];
          cov[static_cast<size_t>(p) * d + i] = c * api - s * aqi;
          cov[static_cast<size_t>(q) * d + i] = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          const double vip = vec[static_cast<size_t>(i) * d + p];
          const double viq = vec[static_cast<size_t>(i) * d + q];
          vec[static_cast<size_t>(i) * d + p] = c * vip - s * viq;
          vec[static_cast<size_t>(i) * d + q] = s * vip + c * viq;
        }
      }
  }

  std::vector<std::pair<double, int>> eig(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) eig[static_cast<size_t>(i)] = {cov[static_cast<size_t>(i) * d + i], i};
  std::sort(eig.begin(), eig.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  double total_var = 0;
  for (const auto& [v, idx] : eig) total_var += std::max(v, 0.0);

  PcaResult res;
  res.projected = Tensor<double>({n, k});
  res.explained_ratio.resize(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    const int col = eig[static_cast<size_t>(j)].second;
    res.explained_ratio[static_cast<size_t>(j)] =
        total_var > 0 ? std::max(eig[static_cast<size_t>(j)].first, 0.0) / total_var : 0.0;
    for (int r = 0; r < n; ++r) {
      double acc = 0;
      for (int c = 0; c < d; ++c)
        acc += (features.at2(r, c) - mean[static_cast<size_t>(c)]) * vec[static_cast<size_t>(c) * d + col];
      res.projected.at2(r, j) = acc;
    }
  }
  return res;
}

std::string detection_report_csv(const DetectionReport& r) {
  std::ostringstream os;
  os << "accuracy,precision,recall,specificity,f_score,mcc,roc_auc,pr_auc\n";
  os << fmt_pct(r.accuracy) << "," << fmt_pct(r.precision) << "," << fmt_pct(r.recall) << ","
     << fmt_pct(r.specificity) << "," << fmt_pct(r.f_score) << "," << fmt_ratio(r.mcc) << ","
     << fmt_ratio(r.roc_auc) << "," << fmt_ratio(r.pr_auc) << "\n";
  return os.str();
}

std::string detection_report_kv(const DetectionReport& r) {
  std::ostringstream os;
  os << "accuracy=" << fmt_pct(r.accuracy) << "\nprecision=" << fmt_pct(r.precision)
     << "\nrecall=" << fmt_pct(r.recall) << "\nspecificity=" << fmt_pct(r.specificity)
     << "\nf_score=" << fmt_pct(r.f_score) << "\nmcc=" << fmt_ratio(r.mcc)
     << "\nroc_auc=" << fmt_ratio(r.roc_auc) << "\npr_auc=" << fmt_ratio(r.pr_auc) << "\n";
  return os.str();
}

namespace {

std::optional<double> pct(std::optional<double> ratio01) {
  if (!ratio01) return std::nullopt;
  return 100.0 * *ratio01;
}

}  // namespace

std::string seg_report_csv(const SegReport& r) {
  std::ostringstream os;
  os << "row,dice,s_acc,iou,bfs,global_acc,mean_acc,mean_iou,weighted_iou,mean_bfs\n";
  os << "infected," << fmt_pct(pct(r.infected.dice)) << "," << fmt_pct(pct(r.infected.class_accuracy))
     << "," << fmt_pct(pct(r.infected.iou)) << "," << fmt_pct(pct(r.infected.boundary_f)) << ",,,,,\n";
  os << "background," << fmt_pct(pct(r.background.dice)) << ","
     << fmt_pct(pct(r.background.class_accuracy)) << "," << fmt_pct(pct(r.background.iou)) << ","
     << fmt_pct(pct(r.background.boundary_f)) << ",,,,,\n";
  os << "aggregate,,,,," << fmt_pct(pct(r.global_acc)) << "," << fmt_pct(pct(r.mean_acc)) << ","
     << fmt_pct(pct(r.mean_iou)) << "," << fmt_pct(pct(r.weighted_iou)) << ","
     << fmt_pct(pct(r.mean_bfs)) << "\n";
  return os.str();
}

std::string seg_report_kv(const SegReport& r) {
  std::ostringstream os;
  os << "infected.dice=" << fmt_pct(pct(r.infected.dice))
     << "\ninfected.s_acc=" << fmt_pct(pct(r.infected.class_accuracy))
     << "\ninfected.iou=" << fmt_pct(pct(r.infected.iou))
     << "\ninfected.bfs=" << fmt_pct(pct(r.infected.boundary_f))
     << "\nbackground.dice=" << fmt_pct(pct(r.background.dice))
     << "\nbackground.s_acc=" << fmt_pct(pct(r.background.class_accuracy))
     << "\nbackground.iou=" << fmt_pct(pct(r.background.iou))
     << "\nbackground.bfs=" << fmt_pct(pct(r.background.boundary_f))
     << "\nglobal_acc=" << fmt_pct(pct(r.global_acc)) << "\nmean_acc=" << fmt_pct(pct(r.mean_acc))
     << "\nmean_iou=" << fmt_pct(pct(r.mean_iou))
     << "\nweighted_iou=" << fmt_pct(pct(r.weighted_iou))
     << "\nmean_bfs=" << fmt_pct(pct(r.mean_bfs)) << "\n";
  return os.str();
}

std::string curve_csv(const Curve& c, CurveKind kind) {
  std::ostringstream os;
  os << (kind == CurveKind::kRoc ? "fpr,tpr\n" : "recall,precision\n");
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& p : c.points) os << p.x << "," << p.y << "\n";
  return os.str();
}

}  // namespace stmbr
