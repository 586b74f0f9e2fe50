#pragma once

// Independent reference implementations used only by tests. None of these
// call into the library code paths they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "btcxr/core.hpp"
#include "btcxr/matrix.hpp"

namespace oracle {

/// IoU by counting cell centers of a grid_side x grid_side raster.
inline double raster_iou(const btcxr::Box& a, const btcxr::Box& b, int grid_side) {
  long inter = 0, uni = 0;
  for (int i = 0; i < grid_side; ++i) {
    const double y = (i + 0.5) / grid_side;
    for (int j = 0; j < grid_side; ++j) {
      const double x = (j + 0.5) / grid_side;
      const bool in_a = x >= a.x_min() && x <= a.x_max() && y >= a.y_min() && y <= a.y_max();
      const bool in_b = x >= b.x_min() && x <= b.x_max() && y >= b.y_min() && y <= b.y_max();
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// raster_iou counted one axis at a time. Cells of an axis-aligned box form
/// a product of centre runs, so the counts agree exactly with the full grid.
inline double raster_iou_separable(const btcxr::Box& a, const btcxr::Box& b, int grid_side) {
  const auto run = [grid_side](double lo0, double hi0, double lo1, double hi1) {
    long n0 = 0, n1 = 0, both = 0;
    for (int i = 0; i < grid_side; ++i) {
      const double c = (i + 0.5) / grid_side;
      const bool in0 = c >= lo0 && c <= hi0, in1 = c >= lo1 && c <= hi1;
      n0 += in0;
      n1 += in1;
      both += in0 && in1;
    }
    return std::array<long, 3>{n0, n1, both};
  };
  const auto x = run(a.x_min(), a.x_max(), b.x_min(), b.x_max());
  const auto y = run(a.y_min(), a.y_max(), b.y_min(), b.y_max());
  const long inter = x[2] * y[2];
  const long uni = x[0] * y[0] + x[1] * y[1] - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Worst-case gap between raster_iou and the exact value. Cell-centre
/// sampling miscounts a w x h rectangle by at most (w + h) * n + 1 cells.
inline double raster_error_bound(const btcxr::Box& a, const btcxr::Box& b, int grid_side) {
  const double n = grid_side;
  const auto slack = [n](double w, double h) { return (w + h) * n + 1.0; };
  const double iw = std::max(0.0, std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min()));
  const double ih = std::max(0.0, std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min()));
  const double da = slack(a.width(), a.height()), db = slack(b.width(), b.height()), di = slack(iw, ih);
  const double uni = (a.width() * a.height() + b.width() * b.height() - iw * ih) * n * n;
  const double du = da + db + di;
  if (uni <= du) return 1.0;
  return (di + du) / (uni - du);
}

/// Same 1-D span logic written directly on coordinates.
inline double plain_iou(double ax0, double ay0, double ax1, double ay1, double bx0, double by0, double bx1, double by1) {
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  if (inter <= 0) return 0.0;
  return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter);
}

// ---------------------------------------------------------------------------
// WBF greedy replay

struct OracleBox {
  int cls;
  double x0, y0, x1, y1, score, weight;
};

struct OracleCluster {
  int cls;
  std::vector<std::size_t> members;  // indices into the input
  double x0, y0, x1, y1, score;
};

/// Replays the greedy sequential fusion rule one step at a time: pick the
/// highest remaining effective score (earliest on ties), compare against
/// every existing cluster's current fused box, join the best strictly above
/// the threshold, then recompute that cluster from scratch. Scores are the
/// plain member mean.
inline std::vector<OracleCluster> wbf_replay(const std::vector<OracleBox>& boxes, double thr) {
  std::vector<bool> done(boxes.size(), false);
  std::vector<OracleCluster> clusters;
  for (std::size_t step = 0; step < boxes.size(); ++step) {
    std::size_t pick = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (done[i]) continue;
      if (pick == boxes.size() || boxes[i].score * boxes[i].weight > boxes[pick].score * boxes[pick].weight) pick = i;
    }
    done[pick] = true;
    const auto& b = boxes[pick];
    int best = -1;
    double best_iou = 0;
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      const auto& c = clusters[k];
      if (c.cls != b.cls) continue;
      const double v = plain_iou(c.x0, c.y0, c.x1, c.y1, b.x0, b.y0, b.x1, b.y1);
      if (v > thr && (best < 0 || v > best_iou)) {
        best = static_cast<int>(k);
        best_iou = v;
      }
    }
    if (best < 0) {
      clusters.push_back({b.cls, {}, 0, 0, 0, 0, 0});
      best = static_cast<int>(clusters.size() - 1);
    }
    auto& c = clusters[static_cast<std::size_t>(best)];
    c.members.push_back(pick);
    double w = 0, x0 = 0, y0 = 0, x1 = 0, y1 = 0, s = 0;
    for (auto m : c.members) {
      const auto& mb = boxes[m];
      const double wi = mb.score * mb.weight;
      w += wi;
      x0 += wi * mb.x0;
      y0 += wi * mb.y0;
      x1 += wi * mb.x1;
      y1 += wi * mb.y1;
      s += mb.score;
    }
    c.x0 = x0 / w;
    c.y0 = y0 / w;
    c.x1 = x1 / w;
    c.y1 = y1 / w;
    c.score = s / static_cast<double>(c.members.size());
  }
  return clusters;
}

/// Connected components of the "same class and IoU above threshold" graph.
inline std::size_t connected_groups(const std::vector<btcxr::Box>& boxes, double thr) {
  std::vector<std::size_t> parent(boxes.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  std::function<std::size_t(std::size_t)> find = [&](std::size_t i) { return parent[i] == i ? i : parent[i] = find(parent[i]); };
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      const auto& a = boxes[i];
      const auto& b = boxes[j];
      if (a.class_id() == b.class_id() &&
          plain_iou(a.x_min(), a.y_min(), a.x_max(), a.y_max(), b.x_min(), b.y_min(), b.x_max(), b.y_max()) > thr) {
        parent[find(i)] = find(j);
      }
    }
  }
  std::set<std::size_t> roots;
  for (std::size_t i = 0; i < boxes.size(); ++i) roots.insert(find(i));
  return roots.size();
}

// ---------------------------------------------------------------------------
// Average precision by explicit PR enumeration

struct SceneBox {
  int image;
  int cls;
  double x0, y0, x1, y1;
  double score;  // detections only
};

/// AP of one class. Matching: within each image, detections in descending
/// score (earlier input first on ties) claim the unmatched ground truth of
/// highest IoU (earliest on ties) when IoU >= thr. Then, for each cutoff k
/// of the global ranking, precision and recall are computed from scratch,
/// and AP sums (r_k - r_{k-1}) * max_{j >= k} p_j. nullopt without ground truth.
inline std::optional<double> enumerated_ap(const std::vector<SceneBox>& gts, const std::vector<SceneBox>& dets, int cls,
                                           double thr, bool points101 = false) {
  std::size_t n_gt = 0;
  for (const auto& g : gts) n_gt += g.cls == cls;
  if (n_gt == 0) return std::nullopt;

  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].cls == cls) idx.push_back(i);
  }
  std::vector<bool> tp(dets.size(), false);
  std::set<int> images;
  for (auto i : idx) images.insert(dets[i].image);
  for (int im : images) {
    std::vector<std::size_t> mine;
    for (auto i : idx) {
      if (dets[i].image == im) mine.push_back(i);
    }
    // selection-sort style: repeatedly take the best remaining detection
    std::vector<bool> taken(mine.size(), false), gt_used(gts.size(), false);
    for (std::size_t step = 0; step < mine.size(); ++step) {
      std::size_t best = mine.size();
      for (std::size_t k = 0; k < mine.size(); ++k) {
        if (taken[k]) continue;
        if (best == mine.size() || dets[mine[k]].score > dets[mine[best]].score) best = k;
      }
      taken[best] = true;
      const auto& d = dets[mine[best]];
      int g_best = -1;
      double g_iou = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].image != im || gts[g].cls != cls || gt_used[g]) continue;
        const double v = plain_iou(gts[g].x0, gts[g].y0, gts[g].x1, gts[g].y1, d.x0, d.y0, d.x1, d.y1);
        if (v > g_iou) {
          g_iou = v;
          g_best = static_cast<int>(g);
        }
      }
      if (g_best >= 0 && g_iou >= thr) {
        gt_used[static_cast<std::size_t>(g_best)] = true;
        tp[mine[best]] = true;
      }
    }
  }

  std::vector<std::size_t> ranked = idx;
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  const std::size_t m = ranked.size();
  std::vector<double> p(m), r(m);
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j <= k; ++j) hits += tp[ranked[j]];
    p[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    r[k] = static_cast<double>(hits) / static_cast<double>(n_gt);
  }
  const auto envelope_at = [&](std::size_t k) {
    double best = 0;
    for (std::size_t j = k; j < m; ++j) best = std::max(best, p[j]);
    return best;
  };
  if (points101) {
    double sum = 0;
    for (int t = 0; t <= 100; ++t) {
      const double target = t / 100.0;
      double best = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (r[j] >= target) best = std::max(best, p[j]);
      }
      sum += best;
    }
    return sum / 101.0;
  }
  double ap = 0, prev = 0;
  for (std::size_t k = 0; k < m; ++k) {
    ap += (r[k] - prev) * envelope_at(k);
    prev = r[k];
  }
  return ap;
}

// ---------------------------------------------------------------------------
// AUC by pairwise counting

inline double pairwise_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  double concordant = 0, ties = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) ++pos;
    else ++neg;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) ++concordant;
      else if (scores[i] == scores[j]) ++ties;
    }
  }
  return (concordant + 0.5 * ties) / (pos * neg);
}

// ---------------------------------------------------------------------------
// Cross-correlation, element by element

inline btcxr::Matrix elementwise_correlation(const btcxr::Matrix& za, const btcxr::Matrix& zb, double eps) {
  const std::size_t n = za.rows(), d = za.cols();
  btcxr::Matrix c(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double ma = 0, mb = 0;
      for (std::size_t k = 0; k < n; ++k) {
        ma += za(k, i);
        mb += zb(k, j);
      }
      ma /= static_cast<double>(n);
      mb /= static_cast<double>(n);
      double va = 0, vb = 0, cov = 0;
      for (std::size_t k = 0; k < n; ++k) {
        va += (za(k, i) - ma) * (za(k, i) - ma);
        vb += (zb(k, j) - mb) * (zb(k, j) - mb);
      }
      const double sa = std::sqrt(va / static_cast<double>(n)) + eps;
      const double sb = std::sqrt(vb / static_cast<double>(n)) + eps;
      for (std::size_t k = 0; k < n; ++k) cov += ((za(k, i) - ma) / sa) * ((zb(k, j) - mb) / sb);
      c(i, j) = cov / static_cast<double>(n);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Central finite differences

/// Gradient of f at x by central differences with step h.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric, double floor) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace oracle
