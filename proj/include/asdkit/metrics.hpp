#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "asdkit/common.hpp"

// Threshold-free evaluation: ROC, AUC (Mann-Whitney), standardized pAUC, and
// the per-machine minimum AUC.
namespace asdkit::metrics {

/// Scores with binary labels (1 = anomaly, 0 = normal).
struct LabeledScores {
  std::vector<double> score;
  std::vector<int> label;

  void add(double s, int l) {
    score.push_back(s);
    label.push_back(l);
  }
  size_t size() const { return score.size(); }
};

namespace detail {

struct ClassCounts {
  int64_t pos = 0, neg = 0;
};

inline ClassCounts count_classes(const LabeledScores& s, const char* op) {
  ClassCounts c;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s.score[i])) throw ContractError(std::string(op) + ": non-finite score");
    (s.label[i] ? c.pos : c.neg) += 1;
  }
  if (c.pos == 0 || c.neg == 0)
    throw ContractError(std::string(op) + ": need both classes present (got " +
                        std::to_string(c.pos) + " anomalies, " + std::to_string(c.neg) +
                        " normals)");
  return c;
}

}  // namespace detail

/// Exact Mann-Whitney statistic by pair enumeration: P(anomaly > normal) with
/// half credit for ties. Quadratic; intended for n*m <= 1e6 and as the oracle
/// for the ROC-integration route.
inline double auc_pair_counting(const LabeledScores& s) {
  auto c = detail::count_classes(s, "auc");
  double wins = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!s.label[i]) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (s.label[j]) continue;
      if (s.score[i] > s.score[j])
        wins += 1.0;
      else if (s.score[i] == s.score[j])
        wins += 0.5;
    }
  }
  return wins / (double(c.pos) * double(c.neg));
}

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
};

/// ROC vertices from (0,0) to (1,1). Tied scores collapse into a single
/// diagonal segment, which makes the trapezoidal area match the
/// Mann-Whitney tie convention.
inline std::vector<RocPoint> roc_curve(const LabeledScores& s) {
  auto c = detail::count_classes(s, "roc");
  std::vector<size_t> idx(s.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&s](size_t a, size_t b) { return s.score[a] > s.score[b]; });
  std::vector<RocPoint> pts;
  pts.push_back({0.0, 0.0});
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < idx.size()) {
    const double v = s.score[idx[i]];
    while (i < idx.size() && s.score[idx[i]] == v) {
      (s.label[idx[i]] ? tp : fp) += 1;
      ++i;
    }
    pts.push_back({double(fp) / double(c.neg), double(tp) / double(c.pos)});
  }
  return pts;
}

inline double auc_trapezoid(const LabeledScores& s) {
  const auto pts = roc_curve(s);
  double area = 0.0;
  for (size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  return area;
}

/// AUC. Uses exact pair counting when the pair count is small enough,
/// trapezoidal ROC integration otherwise; the two agree to rounding.
inline double auc(const LabeledScores& s) {
  auto c = detail::count_classes(s, "auc");
  if (c.pos * c.neg <= 1000000) return auc_pair_counting(s);
  return auc_trapezoid(s);
}

/// Partial AUC over FPR in [0, p], McClish-standardized to [0,1]:
/// 0.5 * (1 + (A - p^2/2) / (p - p^2/2)). pauc(s, 1) == auc(s).
inline double pauc(const LabeledScores& s, double p = 0.1) {
  if (!(p > 0.0 && p <= 1.0)) throw ContractError("pauc: p must be in (0,1]");
  const auto pts = roc_curve(s);
  double area = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) {
    const RocPoint& a = pts[i - 1];
    const RocPoint& b = pts[i];
    if (a.fpr >= p) break;
    if (b.fpr <= p) {
      area += (b.fpr - a.fpr) * (b.tpr + a.tpr) * 0.5;
    } else {
      // linear interpolation of the ROC segment at fpr = p
      const double t = (p - a.fpr) / (b.fpr - a.fpr);
      const double tpr_p = a.tpr + t * (b.tpr - a.tpr);
      area += (p - a.fpr) * (tpr_p + a.tpr) * 0.5;
      break;
    }
  }
  const double amin = 0.5 * p * p;
  const double amax = p;
  return 0.5 * (1.0 + (area - amin) / (amax - amin));
}

/// Minimum per-group AUC (worst individual machine of a type).
inline double mauc(const std::vector<std::pair<std::string, LabeledScores>>& groups) {
  if (groups.empty()) throw ContractError("mauc: no groups");
  double worst = 2.0;
  for (const auto& [name, scores] : groups) {
    try {
      worst = std::min(worst, auc(scores));
    } catch (const ContractError& e) {
      throw ContractError("mauc: group '" + name + "': " + e.what());
    }
  }
  return worst;
}

struct Histogram {
  double lo = 0.0, hi = 1.0;  // score range before min-max normalization
  int bins = 0;
  bool degenerate = false;  // all scores equal; single catch-all bin
  std::vector<int64_t> normal, anomaly;
};

/// Min-max normalize scores over the union of both classes and bin them on
/// [0,1]. A degenerate range (all scores equal) yields one bin holding
/// everything.
inline Histogram make_histogram(const LabeledScores& s, int bins) {
  if (bins < 2) throw ContractError("histogram: bins must be >= 2");
  if (s.size() == 0) throw ContractError("histogram: no scores");
  Histogram h;
  h.lo = *std::min_element(s.score.begin(), s.score.end());
  h.hi = *std::max_element(s.score.begin(), s.score.end());
  if (h.lo == h.hi) {
    h.degenerate = true;
    h.bins = 1;
    h.normal.assign(1, 0);
    h.anomaly.assign(1, 0);
    for (size_t i = 0; i < s.size(); ++i) (s.label[i] ? h.anomaly : h.normal)[0] += 1;
    return h;
  }
  h.bins = bins;
  h.normal.assign(size_t(bins), 0);
  h.anomaly.assign(size_t(bins), 0);
  for (size_t i = 0; i < s.size(); ++i) {
    const double x = (s.score[i] - h.lo) / (h.hi - h.lo);
    int b = int(x * bins);
    if (b >= bins) b = bins - 1;
    if (b < 0) b = 0;
    (s.label[i] ? h.anomaly : h.normal)[size_t(b)] += 1;
  }
  return h;
}

}  // namespace asdkit::metrics
