#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "btcxr/core.hpp"
#include "btcxr/error.hpp"
#include "btcxr/manifest.hpp"
#include "btcxr/parallel.hpp"

namespace btcxr::wbf {

enum class ScoreMode { mean, mean_scaled_by_rater_count };

constexpr std::string_view to_string(ScoreMode m) noexcept {
  return m == ScoreMode::mean ? "mean" : "mean_scaled_by_rater_count";
}

struct FusionConfig {
  double iou_threshold = 0.4;
  std::map<std::string, double> rater_weights;  // missing raters weigh 1.0
  ScoreMode score_mode = ScoreMode::mean;

  void validate() const {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "iou_threshold must lie in (0,1]");
    }
    for (const auto& [id, w] : rater_weights) {
      if (!(w > 0.0) || !std::isfinite(w)) {
        throw Error(ErrorCode::InvalidArgument, "rater weight must be positive", id);
      }
    }
  }

  double weight_of(const Box& b) const {
    if (!b.rater_id()) return 1.0;
    const auto it = rater_weights.find(*b.rater_id());
    return it == rater_weights.end() ? 1.0 : it->second;
  }
};

struct FusedCluster {
  std::vector<Box> members;
  Box fused;
};

namespace detail {

/// Weighted mean of member coordinates with w = score * rater weight. Falls
/// back to the plain mean when every weight is zero.
inline Box fuse_members(const std::vector<Box>& members, const std::vector<double>& weights,
                        const FusionConfig& cfg, std::size_t distinct_raters) {
  if (members.size() == 1 && cfg.score_mode == ScoreMode::mean) return members.front();
  double wsum = 0, x0 = 0, y0 = 0, x1 = 0, y1 = 0, ssum = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& b = members[i];
    const double w = weights[i];
    wsum += w;
    x0 += w * b.x_min();
    y0 += w * b.y_min();
    x1 += w * b.x_max();
    y1 += w * b.y_max();
    ssum += b.score();
  }
  if (wsum == 0.0) {
    x0 = y0 = x1 = y1 = 0;
    for (const auto& b : members) {
      x0 += b.x_min();
      y0 += b.y_min();
      x1 += b.x_max();
      y1 += b.y_max();
    }
    wsum = static_cast<double>(members.size());
  }
  double score = ssum / static_cast<double>(members.size());
  if (cfg.score_mode == ScoreMode::mean_scaled_by_rater_count) {
    const double r = static_cast<double>(std::max<std::size_t>(distinct_raters, 1));
    score *= std::min(static_cast<double>(members.size()), r) / r;
  }
  const auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return Box(members.front().class_id(), c(x0 / wsum), c(y0 / wsum), c(x1 / wsum), c(y1 / wsum),
             std::clamp(score, 0.0, 1.0));
}

}  // namespace detail

/// Weighted box fusion of one image's boxes, per class.
///
/// Boxes are visited in descending score * rater weight (ties by input
/// order). Each box joins the same-class cluster whose current fused box has
/// the highest IoU with it, provided that IoU exceeds the threshold
/// (strictly); otherwise it opens a new cluster. The fused box is recomputed
/// from all members after every join. Clusters are returned by descending
/// fused score, ties in creation order with classes ascending.
inline std::vector<FusedCluster> fuse_image(const std::vector<Box>& boxes, const FusionConfig& cfg) {
  cfg.validate();

  std::set<std::string> raters;
  for (const auto& b : boxes) {
    if (b.rater_id()) raters.insert(*b.rater_id());
  }

  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> eff(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) eff[i] = boxes[i].score() * cfg.weight_of(boxes[i]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eff[a] > eff[b]; });

  struct Working {
    std::vector<Box> members;
    std::vector<double> weights;
    Box fused;
  };
  std::map<int, std::vector<Working>> by_class;

  for (std::size_t idx : order) {
    const Box& b = boxes[idx];
    auto& clusters = by_class[b.class_id()];
    std::optional<std::size_t> best;
    double best_iou = cfg.iou_threshold;
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      const double v = iou(clusters[k].fused, b);
      if (v > best_iou) {
        best_iou = v;
        best = k;
      }
    }
    if (best) {
      auto& c = clusters[*best];
      c.members.push_back(b);
      c.weights.push_back(eff[idx]);
      c.fused = detail::fuse_members(c.members, c.weights, cfg, raters.size());
    } else {
      Working w{{b}, {eff[idx]}, b};
      w.fused = detail::fuse_members(w.members, w.weights, cfg, raters.size());
      clusters.push_back(std::move(w));
    }
  }

  std::vector<FusedCluster> out;
  for (auto& [cls, clusters] : by_class) {
    for (auto& c : clusters) out.push_back(FusedCluster{std::move(c.members), std::move(c.fused)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const FusedCluster& a, const FusedCluster& b) { return a.fused.score() > b.fused.score(); });
  return out;
}

inline ojson config_to_json(const FusionConfig& cfg) {
  ojson j = ojson::object();
  j["iou_threshold"] = cfg.iou_threshold;
  j["score_mode"] = std::string(to_string(cfg.score_mode));
  ojson w = ojson::object();
  for (const auto& [id, v] : cfg.rater_weights) w[id] = v;
  j["rater_weights"] = std::move(w);
  j["per_class"] = true;
  return j;
}

/// Replaces every image's boxes by its fused boxes (rater ids cleared).
/// Images are independent and may be fused on `threads` workers; output
/// order always follows the input.
inline DatasetManifest fuse_manifest(const DatasetManifest& m, const FusionConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  DatasetManifest out = m;
  parallel_for(m.images.size(), threads, [&](std::size_t i) {
    const auto& src = m.images[i];
    if (src.boxes.empty()) return;
    auto clusters = fuse_image(src.boxes, cfg);
    auto& dst = out.images[i].boxes;
    dst.clear();
    dst.reserve(clusters.size());
    for (auto& c : clusters) dst.push_back(c.fused.without_rater());
  });
  out.provenance["wbf"] = config_to_json(cfg);
  return out;
}

inline std::size_t box_count(const DatasetManifest& m) {
  std::size_t n = 0;
  for (const auto& im : m.images) n += im.boxes.size();
  return n;
}

}  // namespace btcxr::wbf
