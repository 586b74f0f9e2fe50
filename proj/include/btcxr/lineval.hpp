#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "btcxr/error.hpp"
#include "btcxr/fileio.hpp"
#include "btcxr/manifest.hpp"
#include "btcxr/matrix.hpp"
#include "btcxr/metrics.hpp"
#include "btcxr/parallel.hpp"
#include "btcxr/rng.hpp"
#include "btcxr/stratify.hpp"

namespace btcxr::lineval {

/// Frozen-backbone features with multi-label targets.
struct FeatureSet {
  Matrix features;                  // N x D
  std::vector<std::uint8_t> labels;  // N x L, row-major, values 0/1
  std::size_t n_labels = 0;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  int label(std::size_t i, std::size_t l) const noexcept { return labels[i * n_labels + l]; }

  void validate() const {
    const std::size_t n = features.rows();
    if (n_labels == 0) throw Error(ErrorCode::ShapeMismatch, "feature set needs at least one label column");
    if (labels.size() != n * n_labels || ids.size() != n) {
      throw Error(ErrorCode::ShapeMismatch, "feature, label and id row counts disagree");
    }
    for (auto v : labels) {
      if (v > 1) throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    }
    if (!all_finite(features)) throw Error(ErrorCode::InvalidArgument, "features contain non-finite values");
  }

  /// Label columns that lack positives or negatives.
  std::vector<std::size_t> degenerate_columns() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < n_labels; ++l) {
      std::size_t pos = 0;
      for (std::size_t i = 0; i < size(); ++i) pos += static_cast<std::size_t>(label(i, l));
      if (pos == 0 || pos == size()) out.push_back(l);
    }
    return out;
  }

  std::vector<std::vector<int>> label_sets() const {
    std::vector<std::vector<int>> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t l = 0; l < n_labels; ++l) {
        if (label(i, l)) out[i].push_back(static_cast<int>(l));
      }
    }
    return out;
  }

  FeatureSet subset(const std::vector<std::size_t>& rows) const {
    FeatureSet out;
    out.features = Matrix(rows.size(), dim());
    out.n_labels = n_labels;
    out.labels.reserve(rows.size() * n_labels);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = features.row(rows[r]);
      std::copy(src.begin(), src.end(), out.features.row(r).begin());
      for (std::size_t l = 0; l < n_labels; ++l) out.labels.push_back(labels[rows[r] * n_labels + l]);
      out.ids.push_back(ids[rows[r]]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// BTFX feature file:
//   "BTFX" | u32 version (1) | u64 N | u64 D | u64 L      (little-endian)
//   N*D f64 features, row-major
//   N*L bytes of 0/1 labels, row-major
//   image ids joined by '\n' (UTF-8)

inline constexpr std::uint32_t kBtfxVersion = 1;

inline std::string encode_btfx(const FeatureSet& fs) {
  fs.validate();
  std::string out = "BTFX";
  io::put_u32(out, kBtfxVersion);
  io::put_u64(out, fs.size());
  io::put_u64(out, fs.dim());
  io::put_u64(out, fs.n_labels);
  for (double v : fs.features.data()) io::put_f64(out, v);
  for (auto v : fs.labels) out.push_back(static_cast<char>(v));
  for (std::size_t i = 0; i < fs.ids.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += fs.ids[i];
  }
  return out;
}

inline FeatureSet decode_btfx(std::string_view bytes, const std::string& what = "features") {
  io::ByteReader r(bytes, what);
  if (r.bytes(4) != "BTFX") throw Error(ErrorCode::IoError, "not a BTFX feature file", what);
  const auto version = r.u32();
  if (version != kBtfxVersion) {
    throw Error(ErrorCode::SchemaVersionMismatch, "unsupported BTFX version " + std::to_string(version), what);
  }
  const std::size_t n = r.u64(), d = r.u64(), l = r.u64();
  FeatureSet fs;
  fs.n_labels = l;
  std::vector<double> feats(n * d);
  for (auto& v : feats) v = r.f64();
  fs.features = Matrix(n, d, std::move(feats));
  const auto lab = r.bytes(n * l);
  fs.labels.assign(lab.begin(), lab.end());
  std::string_view rest = r.rest();
  if (!rest.empty() && rest.back() == '\n') rest.remove_suffix(1);
  if (n > 0) {
    while (true) {
      const auto nl = rest.find('\n');
      fs.ids.emplace_back(rest.substr(0, nl));
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  fs.validate();
  return fs;
}

inline FeatureSet load_btfx(const std::filesystem::path& p) { return decode_btfx(io::read_file(p), p.string()); }

// ---------------------------------------------------------------------------
// Linear head

struct HeadConfig {
  double lr = 0.1;
  std::size_t epochs = 500;
  double l2 = 1e-4;
  std::uint64_t seed = 0;  // unused by full-batch training from zero init
};

struct LinearHead {
  Matrix weights;  // D x L
  std::vector<double> bias;
  HeadConfig config;

  /// Sigmoid probabilities, N x L.
  Matrix predict(const Matrix& features) const {
    if (features.cols() != weights.rows()) throw Error(ErrorCode::ShapeMismatch, "feature width differs from head");
    Matrix p = matmul(features, weights);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      for (std::size_t l = 0; l < p.cols(); ++l) p(i, l) = 1.0 / (1.0 + std::exp(-(p(i, l) + bias[l])));
    }
    return p;
  }
};

/// Mean per-element sigmoid cross-entropy plus l2 * ||W||^2.
inline double head_loss(const FeatureSet& fs, const Matrix& w, const std::vector<double>& b, double l2) {
  const Matrix z = matmul(fs.features, w);
  double sum = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t l = 0; l < z.cols(); ++l) {
      const double x = z(i, l) + b[l];
      // log(1 + e^x) - y x, evaluated without overflow
      sum += std::max(x, 0.0) - x * fs.label(i, l) + std::log1p(std::exp(-std::abs(x)));
    }
  }
  double reg = 0;
  for (double v : w.data()) reg += v * v;
  return sum / static_cast<double>(z.rows() * z.cols()) + l2 * reg;
}

struct HeadGradient {
  Matrix d_weights;
  std::vector<double> d_bias;
};

inline HeadGradient head_gradient(const FeatureSet& fs, const Matrix& w, const std::vector<double>& b, double l2) {
  Matrix r = matmul(fs.features, w);
  const double scale = 1.0 / static_cast<double>(r.rows() * r.cols());
  HeadGradient g{Matrix(), std::vector<double>(b.size(), 0.0)};
  for (std::size_t i = 0; i < r.rows(); ++i) {
    for (std::size_t l = 0; l < r.cols(); ++l) {
      const double p = 1.0 / (1.0 + std::exp(-(r(i, l) + b[l])));
      r(i, l) = (p - fs.label(i, l)) * scale;
      g.d_bias[l] += r(i, l);
    }
  }
  g.d_weights = matmul_tn(fs.features, r);
  for (std::size_t k = 0; k < w.data().size(); ++k) g.d_weights.data()[k] += 2.0 * l2 * w.data()[k];
  return g;
}

/// Full-batch gradient descent from zero weights.
inline LinearHead train_linear_head(const FeatureSet& fs, const HeadConfig& cfg) {
  fs.validate();
  if (fs.size() < 2) throw Error(ErrorCode::InvalidArgument, "linear head needs at least two samples");
  if (fs.degenerate_columns().size() == fs.n_labels) {
    throw Error(ErrorCode::DegenerateLabels, "no label column has both positive and negative samples");
  }
  if (!(cfg.lr > 0.0) || !(cfg.l2 >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lr must be > 0 and l2 >= 0");
  LinearHead head{Matrix(fs.dim(), fs.n_labels), std::vector<double>(fs.n_labels, 0.0), cfg};
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto g = head_gradient(fs, head.weights, head.bias, cfg.l2);
    for (std::size_t k = 0; k < g.d_weights.data().size(); ++k) head.weights.data()[k] -= cfg.lr * g.d_weights.data()[k];
    for (std::size_t l = 0; l < fs.n_labels; ++l) head.bias[l] -= cfg.lr * g.d_bias[l];
  }
  if (!all_finite(head.weights)) throw Error(ErrorCode::DivergenceDetected, "linear head weights became non-finite");
  return head;
}

struct AucResult {
  std::optional<double> macro;
  std::vector<std::optional<double>> per_label;
};

inline AucResult score_head(const LinearHead& head, const FeatureSet& test) {
  const Matrix p = head.predict(test.features);
  AucResult r;
  std::vector<int> y(test.size());
  std::vector<double> s(test.size());
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t l = 0; l < test.n_labels; ++l) {
    for (std::size_t i = 0; i < test.size(); ++i) {
      y[i] = test.label(i, l);
      s[i] = p(i, l);
    }
    r.per_label.push_back(metrics::try_roc_auc(y, s));
    if (r.per_label.back()) {
      sum += *r.per_label.back();
      ++n;
    }
  }
  if (n > 0) r.macro = sum / static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// Protocol

struct ProtocolConfig {
  std::vector<double> fractions{0.01, 0.1, 1.0};
  std::size_t repeats = 5;
  HeadConfig head{};
  std::uint64_t seed = 3;
  unsigned threads = 1;
};

struct Cell {
  double fraction;
  std::size_t repeat;
  std::uint64_t seed;
  std::size_t n_train;
  double macro_auc;
  std::vector<std::optional<double>> per_label;
};

struct FractionSummary {
  double fraction;
  double mean, min, max;
};

struct ProtocolReport {
  std::vector<double> fractions;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  HeadConfig head{};
  std::size_t n_train = 0, n_test = 0;
  std::vector<std::size_t> excluded_labels;
  std::vector<Cell> cells;  // fraction-major, then repeat
  std::vector<FractionSummary> summary;
};

/// Seed of cell (fraction index f, repeat r).
inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t f, std::size_t r) {
  return derive_seed(derive_seed(seed, f), r);
}

/// For every fraction and repeat: stratified subsample of the training
/// features, fit a head, macro AUC on the full test set. Cells are
/// independent and may run on cfg.threads workers.
inline ProtocolReport evaluate_protocol(const FeatureSet& train, const FeatureSet& test, const ProtocolConfig& cfg) {
  train.validate();
  test.validate();
  if (train.dim() != test.dim() || train.n_labels != test.n_labels) {
    throw Error(ErrorCode::ShapeMismatch, "train and test feature sets differ in width or label count");
  }
  if (cfg.repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be at least 1");
  if (cfg.fractions.empty()) throw Error(ErrorCode::InvalidArgument, "no fractions given");
  for (double f : cfg.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fractions must lie in (0,1]");
  }

  ProtocolReport rep;
  rep.fractions = cfg.fractions;
  rep.repeats = cfg.repeats;
  rep.seed = cfg.seed;
  rep.head = cfg.head;
  rep.n_train = train.size();
  rep.n_test = test.size();
  rep.excluded_labels = test.degenerate_columns();
  if (rep.excluded_labels.size() == test.n_labels) {
    throw Error(ErrorCode::SingleClassOnly, "no test label column has both classes");
  }

  const auto label_sets = train.label_sets();
  const std::size_t n_cells = cfg.fractions.size() * cfg.repeats;
  rep.cells.resize(n_cells);
  parallel_for(n_cells, cfg.threads, [&](std::size_t c) {
    const std::size_t f = c / cfg.repeats, r = c % cfg.repeats;
    const std::uint64_t seed = cell_seed(cfg.seed, f, r);
    const auto rows = stratify::subsample_indices(label_sets, train.n_labels, cfg.fractions[f], seed);
    const auto head = train_linear_head(train.subset(rows), cfg.head);
    auto auc = score_head(head, test);
    rep.cells[c] = Cell{cfg.fractions[f], r, seed, rows.size(), *auc.macro, std::move(auc.per_label)};
  });

  for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
    FractionSummary s{cfg.fractions[f], 0, 0, 0};
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      const double v = rep.cells[f * cfg.repeats + r].macro_auc;
      s.mean += v;
      s.min = r == 0 ? v : std::min(s.min, v);
      s.max = r == 0 ? v : std::max(s.max, v);
    }
    s.mean /= static_cast<double>(cfg.repeats);
    rep.summary.push_back(s);
  }
  return rep;
}

inline ojson protocol_to_json(const ProtocolReport& r) {
  ojson j = ojson::object();
  j["version"] = "1";
  j["fractions"] = r.fractions;
  j["repeats"] = r.repeats;
  j["seed"] = r.seed;
  j["head"] = {{"lr", r.head.lr}, {"epochs", r.head.epochs}, {"l2", r.head.l2}};
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["excluded_labels"] = r.excluded_labels;
  ojson cells = ojson::array();
  for (const auto& c : r.cells) {
    ojson e = ojson::object();
    e["fraction"] = c.fraction;
    e["repeat"] = c.repeat;
    e["seed"] = c.seed;
    e["n_train"] = c.n_train;
    e["macro_auc"] = c.macro_auc;
    ojson per = ojson::array();
    for (const auto& v : c.per_label) per.push_back(v ? ojson(*v) : ojson(nullptr));
    e["per_label_auc"] = std::move(per);
    cells.push_back(std::move(e));
  }
  j["cells"] = std::move(cells);
  ojson summary = ojson::array();
  for (const auto& s : r.summary) {
    summary.push_back({{"fraction", s.fraction}, {"mean_macro_auc", s.mean}, {"min", s.min}, {"max", s.max}});
  }
  j["summary"] = std::move(summary);
  return j;
}

inline ProtocolReport protocol_from_json(const ojson& j) {
  try {
    if (j.at("version").get<std::string>() != "1") {
      throw Error(ErrorCode::SchemaVersionMismatch, "unsupported protocol report version");
    }
    ProtocolReport r;
    r.fractions = j.at("fractions").get<std::vector<double>>();
    r.repeats = j.at("repeats").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.head.lr = j.at("head").at("lr").get<double>();
    r.head.epochs = j.at("head").at("epochs").get<std::size_t>();
    r.head.l2 = j.at("head").at("l2").get<double>();
    r.n_train = j.at("n_train").get<std::size_t>();
    r.n_test = j.at("n_test").get<std::size_t>();
    r.excluded_labels = j.at("excluded_labels").get<std::vector<std::size_t>>();
    for (const auto& e : j.at("cells")) {
      Cell c{e.at("fraction").get<double>(), e.at("repeat").get<std::size_t>(), e.at("seed").get<std::uint64_t>(),
             e.at("n_train").get<std::size_t>(), e.at("macro_auc").get<double>(), {}};
      for (const auto& v : e.at("per_label_auc")) {
        c.per_label.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      }
      r.cells.push_back(std::move(c));
    }
    for (const auto& s : j.at("summary")) {
      r.summary.push_back({s.at("fraction").get<double>(), s.at("mean_macro_auc").get<double>(),
                           s.at("min").get<double>(), s.at("max").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("protocol report schema error: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic features

/// Gaussian features with labels from noisy linear rules: label l is on when
/// x . w_l + noise * e > t_l, with unit directions w_l and thresholds chosen
/// so prevalences spread over roughly 10%..50%. Few training samples give a
/// noisy estimate of each w_l, so probe quality grows with training size.
inline std::pair<FeatureSet, FeatureSet> make_feature_fixture(std::size_t n_train = 4000, std::size_t n_test = 1000,
                                                              std::size_t dim = 32, std::size_t n_labels = 5,
                                                              double noise = 1.0, std::uint64_t seed = 11) {
  SplitMix64 rng(seed);
  Matrix dirs(n_labels, dim);
  std::vector<double> thresholds(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l) {
    double norm = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      dirs(l, k) = rng.normal();
      norm += dirs(l, k) * dirs(l, k);
    }
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < dim; ++k) dirs(l, k) /= norm;
    thresholds[l] = 0.15 * static_cast<double>(l) * std::sqrt(1.0 + noise * noise);
  }
  const auto make = [&](std::size_t n, const std::string& prefix) {
    FeatureSet fs;
    fs.features = Matrix(n, dim);
    fs.n_labels = n_labels;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < dim; ++k) fs.features(i, k) = rng.normal();
      for (std::size_t l = 0; l < n_labels; ++l) {
        double s = 0;
        for (std::size_t k = 0; k < dim; ++k) s += fs.features(i, k) * dirs(l, k);
        s += noise * rng.normal();
        fs.labels.push_back(s > thresholds[l] ? 1 : 0);
      }
      fs.ids.push_back(prefix + std::to_string(i));
    }
    return fs;
  };
  auto train = make(n_train, "train_");
  auto test = make(n_test, "test_");
  return {std::move(train), std::move(test)};
}

}  // namespace btcxr::lineval
