#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "btcxr/error.hpp"
#include "btcxr/manifest.hpp"
#include "btcxr/rng.hpp"

namespace btcxr::stratify {

struct SplitSpec {
  std::vector<std::string> fold_names;
  std::vector<double> fold_fractions;
  std::uint64_t seed = 0;

  void validate() const {
    if (fold_names.size() < 2) throw Error(ErrorCode::InvalidSpec, "at least two folds are required");
    if (fold_names.size() != fold_fractions.size()) {
      throw Error(ErrorCode::InvalidSpec, "fold_names and fold_fractions differ in length");
    }
    if (std::set<std::string>(fold_names.begin(), fold_names.end()).size() != fold_names.size()) {
      throw Error(ErrorCode::InvalidSpec, "fold names must be unique");
    }
    double sum = 0;
    for (double f : fold_fractions) {
      if (!(f > 0.0 && f < 1.0)) throw Error(ErrorCode::InvalidSpec, "fold fractions must lie in (0,1)");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::InvalidSpec, "fold fractions must sum to 1");
  }

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

struct SplitAssignment {
  SplitSpec spec;
  std::vector<std::string> image_ids;  // manifest order
  std::vector<std::size_t> fold_of;    // parallel to image_ids
  std::vector<std::vector<std::size_t>> per_label_counts;  // [fold][label]

  const std::string& fold_name(std::size_t image) const { return spec.fold_names[fold_of[image]]; }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> s(spec.fold_names.size(), 0);
    for (auto f : fold_of) ++s[f];
    return s;
  }
};

/// Iterative stratification over per-example label sets.
///
/// Desired totals start at c_k = f_k * |D| per fold and c_kl = f_k * |D_l|
/// per fold and label. Repeatedly take the label with the fewest unassigned
/// examples (ties: lower label id) and hand each unassigned example carrying
/// it, in input order, to the fold with the largest remaining c_kl; ties go
/// to the largest remaining c_k, then to a uniform draw from a SplitMix64
/// stream seeded with spec.seed. Each assignment decrements c_k and c_kl for
/// every label of the example. Unlabeled examples go last, by largest c_k.
///
/// Returns the fold index of every example.
inline std::vector<std::size_t> stratify_labels(const std::vector<std::vector<int>>& labels,
                                                std::size_t n_labels, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = labels.size();
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "cannot split an empty dataset");
  const std::size_t k = spec.fold_fractions.size();

  std::vector<std::vector<std::size_t>> carriers(n_labels);
  for (std::size_t i = 0; i < n; ++i) {
    for (int l : labels[i]) {
      if (l < 0 || static_cast<std::size_t>(l) >= n_labels) {
        throw Error(ErrorCode::InvalidArgument, "label id out of range", std::to_string(l));
      }
      carriers[static_cast<std::size_t>(l)].push_back(i);
    }
  }

  std::vector<double> desired(k);
  std::vector<std::vector<double>> desired_label(k, std::vector<double>(n_labels));
  for (std::size_t f = 0; f < k; ++f) {
    desired[f] = spec.fold_fractions[f] * static_cast<double>(n);
    for (std::size_t l = 0; l < n_labels; ++l) {
      desired_label[f][l] = spec.fold_fractions[f] * static_cast<double>(carriers[l].size());
    }
  }

  std::vector<std::size_t> remaining(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l) remaining[l] = carriers[l].size();

  constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> fold_of(n, kUnassigned);
  SplitMix64 rng(spec.seed);

  const auto pick = [&](std::vector<std::size_t>& tied) {
    if (tied.size() == 1) return tied.front();
    return tied[static_cast<std::size_t>(rng.below(tied.size()))];
  };

  const auto assign = [&](std::size_t i, std::size_t f) {
    fold_of[i] = f;
    desired[f] -= 1.0;
    for (int l : labels[i]) {
      desired_label[f][static_cast<std::size_t>(l)] -= 1.0;
      --remaining[static_cast<std::size_t>(l)];
    }
  };

  std::vector<std::size_t> tied;
  while (true) {
    std::size_t label = n_labels;
    for (std::size_t l = 0; l < n_labels; ++l) {
      if (remaining[l] > 0 && (label == n_labels || remaining[l] < remaining[label])) label = l;
    }
    if (label == n_labels) break;

    for (std::size_t i : carriers[label]) {
      if (fold_of[i] != kUnassigned) continue;
      double best_label = -std::numeric_limits<double>::infinity();
      for (std::size_t f = 0; f < k; ++f) best_label = std::max(best_label, desired_label[f][label]);
      double best_total = -std::numeric_limits<double>::infinity();
      for (std::size_t f = 0; f < k; ++f) {
        if (desired_label[f][label] == best_label) best_total = std::max(best_total, desired[f]);
      }
      tied.clear();
      for (std::size_t f = 0; f < k; ++f) {
        if (desired_label[f][label] == best_label && desired[f] == best_total) tied.push_back(f);
      }
      assign(i, pick(tied));
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (fold_of[i] != kUnassigned) continue;
    double best_total = -std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < k; ++f) best_total = std::max(best_total, desired[f]);
    tied.clear();
    for (std::size_t f = 0; f < k; ++f) {
      if (desired[f] == best_total) tied.push_back(f);
    }
    assign(i, pick(tied));
  }
  return fold_of;
}

inline std::vector<std::vector<int>> manifest_labels(const DatasetManifest& m) {
  std::vector<std::vector<int>> labels;
  labels.reserve(m.images.size());
  for (const auto& im : m.images) labels.push_back(effective_labels(im));
  return labels;
}

inline std::size_t label_space(const DatasetManifest& m, const std::vector<std::vector<int>>& labels) {
  std::size_t n = m.label_names.size();
  for (const auto& ls : labels) {
    for (int l : ls) n = std::max(n, static_cast<std::size_t>(l) + 1);
  }
  return n;
}

inline SplitAssignment stratified_split(const DatasetManifest& m, const SplitSpec& spec) {
  const auto labels = manifest_labels(m);
  const std::size_t n_labels = label_space(m, labels);

  SplitAssignment out;
  out.spec = spec;
  out.fold_of = stratify_labels(labels, n_labels, spec);
  out.image_ids.reserve(m.images.size());
  for (const auto& im : m.images) out.image_ids.push_back(im.image_id);
  out.per_label_counts.assign(spec.fold_names.size(), std::vector<std::size_t>(n_labels, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (int l : labels[i]) ++out.per_label_counts[out.fold_of[i]][static_cast<std::size_t>(l)];
  }
  return out;
}

/// Indices (ascending) of a stratified subsample holding `fraction` of the
/// examples. fraction 1 returns every index.
inline std::vector<std::size_t> subsample_indices(const std::vector<std::vector<int>>& labels,
                                                  std::size_t n_labels, double fraction, std::uint64_t seed) {
  if (labels.empty()) throw Error(ErrorCode::EmptyDataset, "cannot subsample an empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "subsample fraction must lie in (0,1]");
  }
  std::vector<std::size_t> out;
  if (fraction == 1.0) {
    out.resize(labels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }
  if (fraction * static_cast<double>(labels.size()) < 1.0) {
    throw Error(ErrorCode::FractionTooSmall, "fraction selects less than one example");
  }
  SplitSpec spec{{"selected", "rest"}, {fraction, 1.0 - fraction}, seed};
  const auto fold_of = stratify_labels(labels, n_labels, spec);
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == 0) out.push_back(i);
  }
  if (out.empty()) throw Error(ErrorCode::FractionTooSmall, "selected fold is empty");
  return out;
}

inline std::vector<std::string> stratified_subsample(const DatasetManifest& m, double fraction, std::uint64_t seed) {
  const auto labels = manifest_labels(m);
  const auto idx = subsample_indices(labels, label_space(m, labels), fraction, seed);
  std::vector<std::string> ids;
  ids.reserve(idx.size());
  for (auto i : idx) ids.push_back(m.images[i].image_id);
  return ids;
}

inline ojson spec_to_json(const SplitSpec& s) {
  ojson j = ojson::object();
  j["fold_names"] = s.fold_names;
  j["fold_fractions"] = s.fold_fractions;
  j["seed"] = s.seed;
  return j;
}

inline ojson split_to_json(const SplitAssignment& a) {
  ojson j = ojson::object();
  j["version"] = "1";
  j["spec"] = spec_to_json(a.spec);
  ojson asg = ojson::object();
  for (std::size_t i = 0; i < a.image_ids.size(); ++i) asg[a.image_ids[i]] = a.fold_name(i);
  j["assignment"] = std::move(asg);
  return j;
}

}  // namespace btcxr::stratify
