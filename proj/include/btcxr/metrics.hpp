#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "btcxr/core.hpp"
#include "btcxr/error.hpp"
#include "btcxr/manifest.hpp"
#include "btcxr/parallel.hpp"
#include "btcxr/rng.hpp"

namespace btcxr::metrics {

struct Detection {
  std::string image_id;
  Box box;  // score is the model confidence
};

enum class ApMode { continuous, points101 };
enum class EmptyClassPolicy { exclude, zero };

constexpr std::string_view to_string(ApMode m) noexcept { return m == ApMode::continuous ? "continuous" : "points101"; }
constexpr std::string_view to_string(EmptyClassPolicy p) noexcept { return p == EmptyClassPolicy::exclude ? "exclude" : "zero"; }

// ---------------------------------------------------------------------------
// Detection scoring

/// One scored detection after per-image matching.
struct MatchedDetection {
  double score;
  std::size_t seq;  // position in the caller's detection list
  bool true_positive;
};

/// Per-image, per-class matching results. Matching never looks across
/// images, so these flags are fixed under any resampling of images.
struct ImageMatches {
  std::map<int, std::size_t> gt_count;
  std::map<int, std::vector<MatchedDetection>> dets;
};

/// Matches one image's detections of every class against its ground truth.
/// Within a class, detections are visited by descending score (ties by
/// seq); each takes the still-unmatched ground truth with the highest IoU
/// (ties: earliest ground truth) if that IoU reaches iou_thr.
inline ImageMatches match_image(const std::vector<Box>& gts, const std::vector<std::pair<Box, std::size_t>>& dets,
                                double iou_thr) {
  ImageMatches out;
  std::map<int, std::vector<const Box*>> gt_by_class;
  for (const auto& g : gts) gt_by_class[g.class_id()].push_back(&g);
  for (const auto& [cls, v] : gt_by_class) out.gt_count[cls] = v.size();

  std::map<int, std::vector<std::size_t>> det_by_class;
  for (std::size_t i = 0; i < dets.size(); ++i) det_by_class[dets[i].first.class_id()].push_back(i);

  for (auto& [cls, idx] : det_by_class) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (dets[a].first.score() != dets[b].first.score()) return dets[a].first.score() > dets[b].first.score();
      return dets[a].second < dets[b].second;
    });
    const auto it = gt_by_class.find(cls);
    const std::vector<const Box*> empty;
    const auto& cand = it == gt_by_class.end() ? empty : it->second;
    std::vector<bool> used(cand.size(), false);
    auto& bucket = out.dets[cls];
    for (std::size_t i : idx) {
      const Box& d = dets[i].first;
      std::optional<std::size_t> best;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < cand.size(); ++g) {
        if (used[g]) continue;
        const double v = iou(*cand[g], d);
        if (v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
      const bool tp = best && best_iou >= iou_thr;
      if (tp) used[*best] = true;
      bucket.push_back({d.score(), dets[i].second, tp});
    }
  }
  return out;
}

/// Area under the precision envelope of a score-sorted TP/FP sequence.
inline double ap_from_sorted(const std::vector<bool>& tp, std::size_t n_gt, ApMode mode) {
  const std::size_t m = tp.size();
  std::vector<double> recall(m), precision(m);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tp[i]) ++hits;
    recall[i] = static_cast<double>(hits) / static_cast<double>(n_gt);
    precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  // envelope[i] = max precision at index >= i (recall is non-decreasing)
  std::vector<double> envelope(precision);
  for (std::size_t i = m; i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);

  if (mode == ApMode::continuous) {
    double area = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (recall[i] > prev_recall) {
        area += (recall[i] - prev_recall) * envelope[i];
        prev_recall = recall[i];
      }
    }
    return area;
  }
  double sum = 0.0;
  std::size_t j = 0;
  for (int t = 0; t <= 100; ++t) {
    const double r = t / 100.0;
    while (j < m && recall[j] < r) ++j;
    if (j < m) sum += envelope[j];
  }
  return sum / 101.0;
}

/// Matched detections of a whole test set, ready for repeated AP evaluation
/// over arbitrary multisets of images.
class DetectionIndex {
 public:
  DetectionIndex(const DatasetManifest& gt, const std::vector<Detection>& dets, double iou_thr) {
    const auto where = gt.index();
    std::vector<std::vector<std::pair<Box, std::size_t>>> per_image(gt.images.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto it = where.find(dets[i].image_id);
      if (it == where.end()) {
        throw Error(ErrorCode::UnknownImage, "detection references unknown image_id '" + dets[i].image_id + "'",
                    dets[i].image_id);
      }
      per_image[it->second].emplace_back(dets[i].box, i);
    }
    images_.reserve(gt.images.size());
    for (std::size_t i = 0; i < gt.images.size(); ++i) {
      images_.push_back(match_image(gt.images[i].boxes, per_image[i], iou_thr));
    }
  }

  std::size_t size() const noexcept { return images_.size(); }

  /// AP of one class over the listed images (repeats allowed). nullopt when
  /// the class has no ground truth there.
  std::optional<double> average_precision(std::span<const std::size_t> images, int cls, ApMode mode) const {
    std::size_t n_gt = 0;
    std::vector<MatchedDetection> all;
    for (std::size_t i : images) {
      const auto& im = images_[i];
      if (auto g = im.gt_count.find(cls); g != im.gt_count.end()) n_gt += g->second;
      if (auto d = im.dets.find(cls); d != im.dets.end()) all.insert(all.end(), d->second.begin(), d->second.end());
    }
    if (n_gt == 0) return std::nullopt;
    std::stable_sort(all.begin(), all.end(), [](const MatchedDetection& a, const MatchedDetection& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.seq < b.seq;
    });
    std::vector<bool> tp(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) tp[i] = all[i].true_positive;
    return ap_from_sorted(tp, n_gt, mode);
  }

  std::vector<std::size_t> all_images() const {
    std::vector<std::size_t> v(images_.size());
    std::iota(v.begin(), v.end(), 0);
    return v;
  }

 private:
  std::vector<ImageMatches> images_;
};

struct MapResult {
  std::vector<std::optional<double>> per_class;  // parallel to the class list
  std::optional<double> map;
};

inline MapResult mean_ap_over(const DetectionIndex& index, std::span<const std::size_t> images,
                              std::span<const int> classes, ApMode mode, EmptyClassPolicy policy) {
  MapResult r;
  double sum = 0;
  std::size_t n = 0, defined = 0;
  for (int c : classes) {
    auto ap = index.average_precision(images, c, mode);
    r.per_class.push_back(ap);
    if (ap) {
      sum += *ap;
      ++n;
      ++defined;
    } else if (policy == EmptyClassPolicy::zero) {
      ++n;
    }
  }
  if (defined > 0) r.map = sum / static_cast<double>(n);
  return r;
}

/// AP of `class_id` over the whole test set; nullopt when it has no ground truth.
inline std::optional<double> average_precision(const DatasetManifest& gts, const std::vector<Detection>& dets,
                                               int class_id, double iou_thr = 0.5,
                                               ApMode mode = ApMode::continuous) {
  DetectionIndex index(gts, dets, iou_thr);
  const auto all = index.all_images();
  return index.average_precision(all, class_id, mode);
}

/// Unweighted mean of the defined per-class APs. Throws NoGroundTruth when
/// no listed class has ground truth.
inline double mean_ap(const DatasetManifest& gts, const std::vector<Detection>& dets, std::span<const int> classes,
                      double iou_thr = 0.5, ApMode mode = ApMode::continuous,
                      EmptyClassPolicy policy = EmptyClassPolicy::exclude) {
  DetectionIndex index(gts, dets, iou_thr);
  const auto all = index.all_images();
  const auto r = mean_ap_over(index, all, classes, mode, policy);
  if (!r.map) throw Error(ErrorCode::NoGroundTruth, "no class has ground-truth boxes");
  return *r.map;
}

// ---------------------------------------------------------------------------
// Classification scoring

/// Mann-Whitney AUC, or nullopt when either class is absent. Ties count 1/2.
inline std::optional<double> try_roc_auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error(ErrorCode::ShapeMismatch, "labels and scores differ in length");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the concordance count keeps every intermediate an exact integer.
  std::uint64_t twice_concordant = 0, neg_below = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? pos : neg) += 1;
      ++j;
    }
    twice_concordant += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return static_cast<double>(twice_concordant) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double roc_auc(std::span<const int> labels, std::span<const double> scores) {
  auto v = try_roc_auc(labels, scores);
  if (!v) throw Error(ErrorCode::SingleClassOnly, "ROC AUC needs at least one positive and one negative");
  return *v;
}

// ---------------------------------------------------------------------------
// Bootstrap

/// Linear interpolation between order statistics of a sorted sample, at
/// position p * (n - 1).
inline double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of empty sample");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// The index multiset of bootstrap replicate `r`: n draws with replacement
/// from a SplitMix64 stream seeded with derive_seed(seed, r).
inline std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed, std::size_t r) {
  SplitMix64 rng(derive_seed(seed, r));
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
  return idx;
}

/// Evaluates fn on B resamples. Results come back in replicate order no
/// matter how many threads run them.
template <typename Fn>
auto bootstrap_replicates(std::size_t n, std::size_t replicates, std::uint64_t seed, unsigned threads, Fn&& fn) {
  using R = std::invoke_result_t<Fn&, std::span<const std::size_t>>;
  std::vector<R> out(replicates);
  parallel_for(replicates, threads, [&](std::size_t r) {
    const auto idx = resample_indices(n, seed, r);
    out[r] = fn(std::span<const std::size_t>(idx));
  });
  return out;
}

struct BootstrapCI {
  double lo = 0, hi = 0;
  std::size_t used = 0;
  std::size_t skipped = 0;  // replicates where the metric was undefined
};

inline constexpr std::size_t kMinReplicates = 100;

/// 95% percentile interval from already-computed replicate values.
inline BootstrapCI percentile_ci(const std::vector<std::optional<double>>& values) {
  std::vector<double> v;
  v.reserve(values.size());
  for (const auto& x : values) {
    if (x) v.push_back(*x);
  }
  BootstrapCI ci;
  ci.used = v.size();
  ci.skipped = values.size() - v.size();
  if (v.empty()) throw Error(ErrorCode::AllResamplesUndefined, "metric undefined on every bootstrap resample");
  std::sort(v.begin(), v.end());
  ci.lo = percentile_sorted(v, 0.025);
  ci.hi = percentile_sorted(v, 0.975);
  return ci;
}

using ImageMetric = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Percentile bootstrap over images: B resamples with replacement, metric
/// recomputed on each, 2.5th and 97.5th percentiles of the defined values.
inline BootstrapCI bootstrap_ci(const ImageMetric& metric, std::size_t n_images, std::size_t replicates,
                                std::uint64_t seed, unsigned threads = 1) {
  if (replicates < kMinReplicates) {
    throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least 100 replicates");
  }
  if (n_images == 0) throw Error(ErrorCode::EmptyDataset, "bootstrap over an empty image set");
  return percentile_ci(bootstrap_replicates(n_images, replicates, seed, threads, metric));
}

// ---------------------------------------------------------------------------
// Reports

struct ClassResult {
  int id = 0;
  std::string name;
  std::optional<double> value;
  double lo = 0, hi = 0;
};

struct EvalReport {
  std::string metric_name;
  double overall = 0;
  double lo = 0, hi = 0;
  std::vector<ClassResult> per_class;
  std::size_t n_images = 0;
  std::size_t bootstrap_skipped = 0;
  ojson config = ojson::object();

  std::vector<std::string> undefined_classes() const {
    std::vector<std::string> v;
    for (const auto& c : per_class) {
      if (!c.value) v.push_back(c.name);
    }
    return v;
  }
};

/// Widens an interval so it contains the point estimate. A percentile
/// interval can exclude it for biased statistics such as AP.
inline std::pair<double, double> cover(double value, double lo, double hi) {
  return {std::min(lo, value), std::max(hi, value)};
}

struct DetEvalConfig {
  double iou_thr = 0.5;
  ApMode mode = ApMode::continuous;
  EmptyClassPolicy empty_class = EmptyClassPolicy::exclude;
  std::size_t bootstrap = 1000;  // 0 disables the interval
  std::uint64_t seed = 7;
  unsigned threads = 1;
};

struct ClsEvalConfig {
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 7;
  unsigned threads = 1;
};

namespace detail {

inline void check_replicates(std::size_t b) {
  if (b != 0 && b < kMinReplicates) {
    throw Error(ErrorCode::InvalidArgument, "bootstrap needs 0 (disabled) or at least 100 replicates");
  }
}

inline std::pair<double, double> component_ci(const std::vector<std::vector<std::optional<double>>>& reps,
                                              std::size_t k, double value) {
  std::vector<std::optional<double>> col;
  col.reserve(reps.size());
  for (const auto& r : reps) col.push_back(r[k]);
  try {
    const auto ci = percentile_ci(col);
    return cover(value, ci.lo, ci.hi);
  } catch (const Error&) {
    return {value, value};
  }
}

}  // namespace detail

/// mAP@iou_thr over all classes in gt.label_names, with per-class APs and
/// image-bootstrap intervals.
inline EvalReport evaluate_detection(const DatasetManifest& gt, const std::vector<Detection>& dets,
                                     const DetEvalConfig& cfg) {
  detail::check_replicates(cfg.bootstrap);
  DetectionIndex index(gt, dets, cfg.iou_thr);
  std::vector<int> classes(gt.label_names.size());
  std::iota(classes.begin(), classes.end(), 0);

  const auto all = index.all_images();
  const auto full = mean_ap_over(index, all, classes, cfg.mode, cfg.empty_class);
  if (!full.map) throw Error(ErrorCode::NoGroundTruth, "no class has ground-truth boxes");

  EvalReport rep;
  rep.metric_name = "mAP@" + std::to_string(static_cast<int>(std::lround(cfg.iou_thr * 100)));
  rep.overall = *full.map;
  rep.lo = rep.hi = rep.overall;
  rep.n_images = gt.images.size();
  for (std::size_t k = 0; k < classes.size(); ++k) {
    ClassResult c{classes[k], gt.label_names[k], full.per_class[k], 0, 0};
    if (c.value) c.lo = c.hi = *c.value;
    rep.per_class.push_back(std::move(c));
  }

  if (cfg.bootstrap > 0) {
    // Component 0 is mAP, 1.. are the per-class APs.
    auto reps = bootstrap_replicates(index.size(), cfg.bootstrap, cfg.seed, cfg.threads,
                                     [&](std::span<const std::size_t> idx) {
                                       auto r = mean_ap_over(index, idx, classes, cfg.mode, cfg.empty_class);
                                       std::vector<std::optional<double>> v{r.map};
                                       v.insert(v.end(), r.per_class.begin(), r.per_class.end());
                                       return v;
                                     });
    std::vector<std::optional<double>> overall;
    for (const auto& r : reps) overall.push_back(r[0]);
    const auto ci = percentile_ci(overall);
    std::tie(rep.lo, rep.hi) = cover(rep.overall, ci.lo, ci.hi);
    rep.bootstrap_skipped = ci.skipped;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      auto& c = rep.per_class[k];
      if (c.value) std::tie(c.lo, c.hi) = detail::component_ci(reps, k + 1, *c.value);
    }
  }

  rep.config["iou_thr"] = cfg.iou_thr;
  rep.config["mode"] = std::string(to_string(cfg.mode));
  rep.config["empty_class"] = std::string(to_string(cfg.empty_class));
  rep.config["bootstrap"] = cfg.bootstrap;
  rep.config["seed"] = cfg.seed;
  rep.config["ci_level"] = 0.95;
  return rep;
}

struct ClassificationScores {
  std::string image_id;
  std::vector<double> scores;  // one per label
};

/// Per-label AUCs and macro AUC (mean of defined labels) over an index multiset.
inline std::vector<std::optional<double>> label_aucs(const std::vector<std::vector<int>>& truth,
                                                     const std::vector<std::vector<double>>& scores,
                                                     std::span<const std::size_t> images, std::size_t n_labels) {
  std::vector<std::optional<double>> out(n_labels + 1);
  std::vector<int> y(images.size());
  std::vector<double> s(images.size());
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t l = 0; l < n_labels; ++l) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      y[i] = truth[images[i]][l];
      s[i] = scores[images[i]][l];
    }
    out[l + 1] = try_roc_auc(y, s);
    if (out[l + 1]) {
      sum += *out[l + 1];
      ++n;
    }
  }
  if (n > 0) out[0] = sum / static_cast<double>(n);
  return out;
}

/// Macro ROC-AUC over every label of gt.label_names.
inline EvalReport evaluate_classification(const DatasetManifest& gt, const std::vector<ClassificationScores>& preds,
                                          const ClsEvalConfig& cfg) {
  detail::check_replicates(cfg.bootstrap);
  const std::size_t n_labels = gt.label_names.size();
  const auto where = gt.index();
  std::vector<std::vector<double>> scores(gt.images.size());
  std::vector<bool> seen(gt.images.size(), false);
  for (const auto& p : preds) {
    const auto it = where.find(p.image_id);
    if (it == where.end()) {
      throw Error(ErrorCode::UnknownImage, "prediction references unknown image_id '" + p.image_id + "'", p.image_id);
    }
    if (p.scores.size() != n_labels) {
      throw Error(ErrorCode::ShapeMismatch, "score vector length differs from label count", p.image_id);
    }
    if (seen[it->second]) throw Error(ErrorCode::InvalidArgument, "duplicate prediction", p.image_id);
    seen[it->second] = true;
    scores[it->second] = p.scores;
  }
  for (std::size_t i = 0; i < gt.images.size(); ++i) {
    if (!seen[i]) throw Error(ErrorCode::InvalidArgument, "image has no prediction", gt.images[i].image_id);
  }
  std::vector<std::vector<int>> truth(gt.images.size(), std::vector<int>(n_labels, 0));
  for (std::size_t i = 0; i < gt.images.size(); ++i) {
    for (int l : gt.images[i].labels) truth[i][static_cast<std::size_t>(l)] = 1;
  }

  std::vector<std::size_t> all(gt.images.size());
  std::iota(all.begin(), all.end(), 0);
  const auto full = label_aucs(truth, scores, all, n_labels);
  if (!full[0]) throw Error(ErrorCode::SingleClassOnly, "no label has both positive and negative images");

  EvalReport rep;
  rep.metric_name = "macro_auc";
  rep.overall = *full[0];
  rep.lo = rep.hi = rep.overall;
  rep.n_images = gt.images.size();
  for (std::size_t l = 0; l < n_labels; ++l) {
    ClassResult c{static_cast<int>(l), gt.label_names[l], full[l + 1], 0, 0};
    if (c.value) c.lo = c.hi = *c.value;
    rep.per_class.push_back(std::move(c));
  }
  if (cfg.bootstrap > 0) {
    auto reps = bootstrap_replicates(gt.images.size(), cfg.bootstrap, cfg.seed, cfg.threads,
                                     [&](std::span<const std::size_t> idx) { return label_aucs(truth, scores, idx, n_labels); });
    std::vector<std::optional<double>> overall;
    for (const auto& r : reps) overall.push_back(r[0]);
    const auto ci = percentile_ci(overall);
    std::tie(rep.lo, rep.hi) = cover(rep.overall, ci.lo, ci.hi);
    rep.bootstrap_skipped = ci.skipped;
    for (std::size_t l = 0; l < n_labels; ++l) {
      auto& c = rep.per_class[l];
      if (c.value) std::tie(c.lo, c.hi) = detail::component_ci(reps, l + 1, *c.value);
    }
  }
  rep.config["bootstrap"] = cfg.bootstrap;
  rep.config["seed"] = cfg.seed;
  rep.config["ci_level"] = 0.95;
  return rep;
}

inline ojson report_to_json(const EvalReport& r) {
  ojson j = ojson::object();
  j["version"] = "1";
  j["metric_name"] = r.metric_name;
  j["overall"] = r.overall;
  j["overall_ci"] = {r.lo, r.hi};
  ojson per = ojson::array();
  for (const auto& c : r.per_class) {
    ojson e = ojson::object();
    e["id"] = c.id;
    e["name"] = c.name;
    if (c.value) {
      e["value"] = *c.value;
      e["ci"] = {c.lo, c.hi};
    } else {
      e["value"] = nullptr;
      e["ci"] = nullptr;
    }
    per.push_back(std::move(e));
  }
  j["per_class"] = std::move(per);
  j["undefined_classes"] = r.undefined_classes();
  j["n_images"] = r.n_images;
  j["bootstrap_skipped"] = r.bootstrap_skipped;
  j["config"] = r.config;
  return j;
}

inline EvalReport report_from_json(const ojson& j) {
  try {
    if (j.at("version").get<std::string>() != "1") {
      throw Error(ErrorCode::SchemaVersionMismatch, "unsupported report version");
    }
    EvalReport r;
    r.metric_name = j.at("metric_name").get<std::string>();
    r.overall = j.at("overall").get<double>();
    r.lo = j.at("overall_ci").at(0).get<double>();
    r.hi = j.at("overall_ci").at(1).get<double>();
    for (const auto& e : j.at("per_class")) {
      ClassResult c;
      c.id = e.at("id").get<int>();
      c.name = e.at("name").get<std::string>();
      if (!e.at("value").is_null()) {
        c.value = e.at("value").get<double>();
        c.lo = e.at("ci").at(0).get<double>();
        c.hi = e.at("ci").at(1).get<double>();
      }
      r.per_class.push_back(std::move(c));
    }
    r.n_images = j.at("n_images").get<std::size_t>();
    r.bootstrap_skipped = j.at("bootstrap_skipped").get<std::size_t>();
    r.config = j.at("config");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("report schema error: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// JSON-lines inputs

namespace detail {

template <typename Fn>
void for_each_json_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (csv::trim(line).empty()) continue;
    try {
      fn(ojson::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRow, std::string("bad JSON line: ") + e.what(), "line " + std::to_string(line_no));
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), "line " + std::to_string(line_no));
    }
  }
}

}  // namespace detail

/// {image_id, class_id, x_min, y_min, x_max, y_max, score} per line.
inline std::vector<Detection> parse_detections_jsonl(std::string_view text) {
  std::vector<Detection> out;
  detail::for_each_json_line(text, [&](const ojson& j) {
    out.push_back(Detection{j.at("image_id").get<std::string>(),
                            Box(j.at("class_id").get<int>(), j.at("x_min").get<double>(), j.at("y_min").get<double>(),
                                j.at("x_max").get<double>(), j.at("y_max").get<double>(), j.at("score").get<double>())});
  });
  return out;
}

/// {image_id, scores: [...]} per line.
inline std::vector<ClassificationScores> parse_scores_jsonl(std::string_view text) {
  std::vector<ClassificationScores> out;
  detail::for_each_json_line(text, [&](const ojson& j) {
    ClassificationScores s{j.at("image_id").get<std::string>(), j.at("scores").get<std::vector<double>>()};
    for (double v : s.scores) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite score", s.image_id);
    }
    out.push_back(std::move(s));
  });
  return out;
}

}  // namespace btcxr::metrics
