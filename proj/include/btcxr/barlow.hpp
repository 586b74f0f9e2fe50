#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "btcxr/error.hpp"
#include "btcxr/fileio.hpp"
#include "btcxr/matrix.hpp"
#include "btcxr/rng.hpp"

namespace btcxr::barlow {

inline constexpr double kDefaultLambda = 5e-3;
inline constexpr double kDefaultEps = 1e-9;

/// Cross-correlation of two embedding batches and its loss decomposition.
struct CrossCorrelation {
  Matrix c;
  double lambda = 0;
  double loss_diag = 0;     // sum_i (1 - C_ii)^2
  double loss_offdiag = 0;  // sum_{i != j} C_ij^2
  double loss_total = 0;    // loss_diag + lambda * loss_offdiag
};

/// Column-standardized batch: zhat = (z - mean) / (sigma + eps) with the
/// population (1/N) standard deviation.
struct Standardized {
  Matrix zhat;
  Matrix centered;
  std::vector<double> sigma;
  double eps = 0;
};

inline void check_pair(const Matrix& za, const Matrix& zb) {
  if (!za.same_shape(zb)) throw Error(ErrorCode::ShapeMismatch, "embedding batches differ in shape");
  if (za.rows() < 2) throw Error(ErrorCode::ShapeMismatch, "embedding batch needs at least two rows");
  if (za.cols() == 0) throw Error(ErrorCode::ShapeMismatch, "embedding batch has no columns");
  if (!all_finite(za) || !all_finite(zb)) throw Error(ErrorCode::InvalidArgument, "embedding batch has non-finite entries");
}

inline Standardized standardize(const Matrix& z, double eps) {
  const std::size_t n = z.rows(), d = z.cols();
  Standardized s{Matrix(n, d), Matrix(n, d), std::vector<double>(d), eps};
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += z(i, j);
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = z(i, j) - mean;
      s.centered(i, j) = x;
      var += x * x;
    }
    s.sigma[j] = std::sqrt(var / static_cast<double>(n));
    const double scale = s.sigma[j] + eps;
    for (std::size_t i = 0; i < n; ++i) s.zhat(i, j) = s.centered(i, j) / scale;
  }
  return s;
}

/// C = zhat_aᵀ zhat_b / N.
inline Matrix cross_correlation(const Matrix& za, const Matrix& zb, double eps = kDefaultEps) {
  check_pair(za, zb);
  const auto a = standardize(za, eps);
  const auto b = standardize(zb, eps);
  Matrix c = matmul_tn(a.zhat, b.zhat);
  const double inv_n = 1.0 / static_cast<double>(za.rows());
  for (auto& v : c.data()) v *= inv_n;
  return c;
}

inline CrossCorrelation loss_from_correlation(Matrix c, double lambda) {
  CrossCorrelation out;
  out.lambda = lambda;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      if (i == j) {
        const double r = 1.0 - c(i, j);
        out.loss_diag += r * r;
      } else {
        out.loss_offdiag += c(i, j) * c(i, j);
      }
    }
  }
  out.loss_total = out.loss_diag + lambda * out.loss_offdiag;
  out.c = std::move(c);
  return out;
}

/// Barlow Twins redundancy-reduction loss.
inline CrossCorrelation bt_loss(const Matrix& za, const Matrix& zb, double lambda = kDefaultLambda,
                                double eps = kDefaultEps) {
  return loss_from_correlation(cross_correlation(za, zb, eps), lambda);
}

struct LossGradient {
  CrossCorrelation loss;
  Matrix d_za;
  Matrix d_zb;
};

namespace detail {

// Backward pass through column standardization. For one column with
// centered values x, s = sigma + eps and upstream gradient g:
//   dL/dz_k = (g_k - mean(g)) / s - x_k * sum_n(g_n x_n) / (N sigma s^2)
// The second term is dropped for a constant column (sigma = 0, x = 0).
inline Matrix standardize_backward(const Standardized& s, const Matrix& g) {
  const std::size_t n = g.rows(), d = g.cols();
  const double dn = static_cast<double>(n);
  Matrix out(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    double gmean = 0, gx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      gmean += g(i, j);
      gx += g(i, j) * s.centered(i, j);
    }
    gmean /= dn;
    const double scale = s.sigma[j] + s.eps;
    const double coef = s.sigma[j] > 0.0 ? gx / (dn * s.sigma[j] * scale * scale) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out(i, j) = (g(i, j) - gmean) / scale - s.centered(i, j) * coef;
    }
  }
  return out;
}

}  // namespace detail

/// Loss and its exact gradient with respect to both raw embedding batches.
///
/// With G = dL/dC (G_ii = -2(1 - C_ii), G_ij = 2 lambda C_ij):
///   dL/dzhat_a = zhat_b Gᵀ / N,   dL/dzhat_b = zhat_a G / N,
/// then each is pulled back through its standardization.
inline LossGradient bt_loss_gradient(const Matrix& za, const Matrix& zb, double lambda = kDefaultLambda,
                                     double eps = kDefaultEps) {
  check_pair(za, zb);
  const auto a = standardize(za, eps);
  const auto b = standardize(zb, eps);
  const double inv_n = 1.0 / static_cast<double>(za.rows());
  Matrix c = matmul_tn(a.zhat, b.zhat);
  for (auto& v : c.data()) v *= inv_n;

  const std::size_t d = c.rows();
  Matrix g(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      g(i, j) = i == j ? -2.0 * (1.0 - c(i, j)) : 2.0 * lambda * c(i, j);
    }
  }
  Matrix g_zhat_a = matmul_nt(b.zhat, g);  // N x D: sum_j zhat_b(n,j) G(i,j)
  Matrix g_zhat_b = matmul(a.zhat, g);     // N x D: sum_i zhat_a(n,i) G(i,j)
  for (auto& v : g_zhat_a.data()) v *= inv_n;
  for (auto& v : g_zhat_b.data()) v *= inv_n;

  LossGradient out;
  out.d_za = detail::standardize_backward(a, g_zhat_a);
  out.d_zb = detail::standardize_backward(b, g_zhat_b);
  out.loss = loss_from_correlation(std::move(c), lambda);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentationSpec {
  double crop_scale_lo = 0.6;  // crop area as a fraction of the image
  double crop_scale_hi = 1.0;
  double flip_probability = 0.5;
  double noise_sigma = 0.15;
  double brightness_jitter = 0.1;
  double contrast_jitter = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi && crop_scale_hi <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "crop scale range must satisfy 0 < lo <= hi <= 1");
    }
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "flip probability must lie in [0,1]");
    }
    if (!(noise_sigma >= 0.0 && brightness_jitter >= 0.0 && contrast_jitter >= 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "augmentation magnitudes must be non-negative");
    }
  }

  static AugmentationSpec identity(std::uint64_t seed = 0) { return {1.0, 1.0, 0.0, 0.0, 0.0, 0.0, seed}; }
};

inline constexpr std::size_t kMinImageSide = 8;

namespace detail {

inline double bilinear(const Matrix& im, double y, double x) {
  const double ymax = static_cast<double>(im.rows() - 1), xmax = static_cast<double>(im.cols() - 1);
  y = std::clamp(y, 0.0, ymax);
  x = std::clamp(x, 0.0, xmax);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, im.rows() - 1), x1 = std::min(x0 + 1, im.cols() - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = (1.0 - fx) * im(y0, x0) + fx * im(y0, x1);
  const double bot = (1.0 - fx) * im(y1, x0) + fx * im(y1, x1);
  return (1.0 - fy) * top + fy * bot;
}

// Draw order per view: crop scale, crop y offset, crop x offset, flip,
// brightness, contrast, then H*W noise samples when noise_sigma > 0.
inline Matrix augment_view(const Matrix& im, const AugmentationSpec& spec, SplitMix64& rng) {
  const std::size_t h = im.rows(), w = im.cols();
  const double hd = static_cast<double>(h), wd = static_cast<double>(w);

  const double scale = rng.uniform(spec.crop_scale_lo, spec.crop_scale_hi);
  const double oy = rng.uniform(), ox = rng.uniform();
  const bool flip = rng.uniform() < spec.flip_probability;
  const double brightness = rng.uniform(-spec.brightness_jitter, spec.brightness_jitter);
  const double contrast = rng.uniform(1.0 - spec.contrast_jitter, 1.0 + spec.contrast_jitter);

  const double side = std::sqrt(scale);
  const double ch = hd * side, cw = wd * side;
  const double y0 = oy * (hd - ch), x0 = ox * (wd - cw);
  const double sy = ch / hd, sx = cw / wd;

  Matrix out(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    const double y = y0 + (static_cast<double>(i) + 0.5) * sy - 0.5;
    for (std::size_t j = 0; j < w; ++j) {
      const double x = x0 + (static_cast<double>(j) + 0.5) * sx - 0.5;
      out(i, flip ? w - 1 - j : j) = bilinear(im, y, x);
    }
  }
  if (spec.brightness_jitter > 0.0) {
    for (auto& v : out.data()) v += brightness;
  }
  if (spec.contrast_jitter > 0.0) {
    double mean = 0;
    for (double v : out.data()) mean += v;
    mean /= static_cast<double>(out.data().size());
    for (auto& v : out.data()) v = (v - mean) * contrast + mean;
  }
  if (spec.noise_sigma > 0.0) {
    for (auto& v : out.data()) v += spec.noise_sigma * rng.normal();
  }
  for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace detail

/// Two independent augmentations of a grayscale image with values in [0,1]:
/// crop-and-resize (bilinear), horizontal flip, brightness and contrast
/// jitter, additive Gaussian noise, clamp. Both views come from one
/// SplitMix64 stream seeded with derive_seed(spec.seed, index).
inline std::pair<Matrix, Matrix> augment_pair(const Matrix& image, const AugmentationSpec& spec, std::uint64_t index) {
  spec.validate();
  if (image.rows() < kMinImageSide || image.cols() < kMinImageSide) {
    throw Error(ErrorCode::ImageTooSmall, "augmentation needs images of at least 8x8");
  }
  for (double v : image.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidArgument, "image values must lie in [0,1]");
  }
  SplitMix64 rng(derive_seed(spec.seed, index));
  Matrix a = detail::augment_view(image, spec, rng);
  Matrix b = detail::augment_view(image, spec, rng);
  return {std::move(a), std::move(b)};
}

/// Views of a raw feature vector: x + noise_sigma * N(0,1) per entry, both
/// from the stream derive_seed(spec.seed, index).
inline std::pair<std::vector<double>, std::vector<double>> augment_vector_pair(std::span<const double> x,
                                                                               const AugmentationSpec& spec,
                                                                               std::uint64_t index) {
  SplitMix64 rng(derive_seed(spec.seed, index));
  std::vector<double> a(x.begin(), x.end()), b(x.begin(), x.end());
  for (auto& v : a) v += spec.noise_sigma * rng.normal();
  for (auto& v : b) v += spec.noise_sigma * rng.normal();
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Encoder and trainer

/// Fully connected network with tanh between layers (none after the last).
class Encoder {
 public:
  struct Layer {
    Matrix w;  // fan_in x fan_out
    std::vector<double> b;
  };

  /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn layer by
  /// layer in row-major order from SplitMix64(seed); biases zero.
  Encoder(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    if (dims.size() < 2) throw Error(ErrorCode::InvalidArgument, "encoder needs at least input and output widths");
    for (auto d : dims) {
      if (d == 0) throw Error(ErrorCode::InvalidArgument, "encoder layer width must be positive");
    }
    SplitMix64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
      Layer layer{Matrix(dims[l], dims[l + 1]), std::vector<double>(dims[l + 1], 0.0)};
      for (auto& v : layer.w.data()) v = rng.uniform(-bound, bound);
      layers_.push_back(std::move(layer));
    }
  }

  std::size_t input_dim() const noexcept { return layers_.front().w.rows(); }
  std::size_t output_dim() const noexcept { return layers_.back().w.cols(); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  /// Activations of every layer: acts[0] is the input, acts.back() the output.
  std::vector<Matrix> forward(const Matrix& x) const {
    if (x.cols() != input_dim()) throw Error(ErrorCode::ShapeMismatch, "encoder input width mismatch");
    std::vector<Matrix> acts{x};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = matmul(acts.back(), layers_[l].w);
      for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = 0; j < z.cols(); ++j) {
          z(i, j) += layers_[l].b[j];
          if (l + 1 < layers_.size()) z(i, j) = std::tanh(z(i, j));
        }
      }
      acts.push_back(std::move(z));
    }
    return acts;
  }

  Matrix encode(const Matrix& x) const { return forward(x).back(); }

  /// Accumulates parameter gradients for upstream gradient `d_out` into `grads`.
  void backward(const std::vector<Matrix>& acts, Matrix d_out, std::vector<Layer>& grads) const {
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) {
        const Matrix& a = acts[l + 1];
        for (std::size_t k = 0; k < d_out.data().size(); ++k) {
          const double t = a.data()[k];
          d_out.data()[k] *= 1.0 - t * t;
        }
      }
      const Matrix dw = matmul_tn(acts[l], d_out);
      for (std::size_t k = 0; k < dw.data().size(); ++k) grads[l].w.data()[k] += dw.data()[k];
      for (std::size_t i = 0; i < d_out.rows(); ++i) {
        for (std::size_t j = 0; j < d_out.cols(); ++j) grads[l].b[j] += d_out(i, j);
      }
      if (l > 0) d_out = matmul_nt(d_out, layers_[l].w);
    }
  }

  std::vector<Layer> zero_grads() const {
    std::vector<Layer> g;
    for (const auto& l : layers_) g.push_back({Matrix(l.w.rows(), l.w.cols()), std::vector<double>(l.b.size(), 0.0)});
    return g;
  }

 private:
  std::vector<Layer> layers_;
};

struct TrainConfig {
  std::vector<std::size_t> dims{16, 8};
  double lambda = kDefaultLambda;
  double lr = 0.05;
  std::size_t epochs = 500;
  std::uint64_t seed = 1;
  double eps = kDefaultEps;
  AugmentationSpec augmentation{};
};

struct EpochLoss {
  std::size_t epoch;
  double loss_total, loss_diag, loss_offdiag;
};

struct TrainResult {
  std::vector<EpochLoss> trace;  // loss before each epoch's update
  CrossCorrelation final_correlation;
  Encoder encoder;
};

/// Full-batch gradient descent on the Barlow Twins loss of two fixed view
/// batches. The loss itself is bounded, so divergence shows up as weights or
/// embeddings that overflow; either throws DivergenceDetected.
inline TrainResult train_on_views(const Matrix& view_a, const Matrix& view_b, const TrainConfig& cfg) {
  if (!view_a.same_shape(view_b)) throw Error(ErrorCode::ShapeMismatch, "view batches differ in shape");
  if (view_a.rows() < 2) throw Error(ErrorCode::InvalidArgument, "training needs at least two samples");
  if (cfg.dims.empty() || cfg.dims.front() != view_a.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "first encoder width must equal the input dimension");
  }
  if (!(cfg.lr > 0.0) || !(cfg.lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lr must be > 0 and lambda >= 0");
  if (!all_finite(view_a) || !all_finite(view_b)) throw Error(ErrorCode::InvalidArgument, "training data has non-finite entries");

  // Past 1e150 the variance sum overflows and standardization quietly
  // returns zeros, which would hide the blow-up behind a finite loss.
  const auto diverged = [](const Matrix& z, const std::string& where) {
    for (double v : z.data()) {
      if (!(std::abs(v) <= 1e150)) throw Error(ErrorCode::DivergenceDetected, "training diverged", where);
    }
  };
  Encoder enc(cfg.dims, cfg.seed);
  TrainResult out{{}, {}, enc};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto acts_a = out.encoder.forward(view_a);
    const auto acts_b = out.encoder.forward(view_b);
    diverged(acts_a.back(), "epoch " + std::to_string(epoch));
    diverged(acts_b.back(), "epoch " + std::to_string(epoch));
    auto lg = bt_loss_gradient(acts_a.back(), acts_b.back(), cfg.lambda, cfg.eps);
    if (!std::isfinite(lg.loss.loss_total)) {
      throw Error(ErrorCode::DivergenceDetected, "loss became non-finite", "epoch " + std::to_string(epoch));
    }
    out.trace.push_back({epoch, lg.loss.loss_total, lg.loss.loss_diag, lg.loss.loss_offdiag});
    auto grads = out.encoder.zero_grads();
    out.encoder.backward(acts_a, std::move(lg.d_za), grads);
    out.encoder.backward(acts_b, std::move(lg.d_zb), grads);
    auto& layers = out.encoder.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t k = 0; k < layers[l].w.data().size(); ++k) layers[l].w.data()[k] -= cfg.lr * grads[l].w.data()[k];
      for (std::size_t k = 0; k < layers[l].b.size(); ++k) layers[l].b[k] -= cfg.lr * grads[l].b[k];
      diverged(layers[l].w, "epoch " + std::to_string(epoch));
    }
  }
  out.final_correlation = bt_loss(out.encoder.encode(view_a), out.encoder.encode(view_b), cfg.lambda, cfg.eps);
  if (!std::isfinite(out.final_correlation.loss_total)) {
    throw Error(ErrorCode::DivergenceDetected, "loss became non-finite", "final");
  }
  return out;
}

/// Trains on raw vectors (rows of `data`), views from augment_vector_pair.
inline TrainResult bt_train_toy(const Matrix& data, const TrainConfig& cfg) {
  cfg.augmentation.validate();
  Matrix a(data.rows(), data.cols()), b(data.rows(), data.cols());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto [va, vb] = augment_vector_pair(data.row(i), cfg.augmentation, i);
    std::copy(va.begin(), va.end(), a.row(i).begin());
    std::copy(vb.begin(), vb.end(), b.row(i).begin());
  }
  return train_on_views(a, b, cfg);
}

/// Trains on images; views from augment_pair, flattened row-major.
inline TrainResult bt_train_toy_images(const std::vector<Matrix>& images, const TrainConfig& cfg) {
  if (images.size() < 2) throw Error(ErrorCode::InvalidArgument, "training needs at least two samples");
  const std::size_t h = images.front().rows(), w = images.front().cols();
  Matrix a(images.size(), h * w), b(images.size(), h * w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].rows() != h || images[i].cols() != w) throw Error(ErrorCode::ShapeMismatch, "images differ in shape");
    auto [va, vb] = augment_pair(images[i], cfg.augmentation, i);
    std::copy(va.data().begin(), va.data().end(), a.row(i).begin());
    std::copy(vb.data().begin(), vb.data().end(), b.row(i).begin());
  }
  return train_on_views(a, b, cfg);
}

inline double mean_abs_diag_error(const Matrix& c) {
  double s = 0;
  for (std::size_t i = 0; i < c.rows(); ++i) s += std::abs(c(i, i) - 1.0);
  return s / static_cast<double>(c.rows());
}

inline double mean_abs_offdiag(const Matrix& c) {
  if (c.rows() < 2) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      if (i != j) s += std::abs(c(i, j));
    }
  }
  return s / static_cast<double>(c.rows() * (c.rows() - 1));
}

// ---------------------------------------------------------------------------
// Sample tensor file: u64 N, u64 H, u64 W (little-endian), then N*H*W
// little-endian f64 values, row-major. H == 1 means N raw vectors of width W.

struct SampleTensor {
  std::size_t n = 0, h = 0, w = 0;
  std::vector<double> values;

  Matrix as_vectors() const { return Matrix(n, h * w, values); }
  std::vector<Matrix> as_images() const {
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < n; ++i) {
      const auto first = values.begin() + static_cast<std::ptrdiff_t>(i * h * w);
      out.emplace_back(h, w, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(h * w)));
    }
    return out;
  }
};

inline std::string encode_samples(const SampleTensor& t) {
  std::string out;
  io::put_u64(out, t.n);
  io::put_u64(out, t.h);
  io::put_u64(out, t.w);
  for (double v : t.values) io::put_f64(out, v);
  return out;
}

inline SampleTensor decode_samples(std::string_view bytes, const std::string& what = "samples") {
  io::ByteReader r(bytes, what);
  SampleTensor t;
  t.n = r.u64();
  t.h = r.u64();
  t.w = r.u64();
  const std::size_t count = t.n * t.h * t.w;
  if (t.h == 0 || t.w == 0 || r.remaining() != count * 8) {
    throw Error(ErrorCode::IoError, "sample file size does not match its header", what);
  }
  t.values.resize(count);
  for (auto& v : t.values) v = r.f64();
  return t;
}

inline SampleTensor load_samples(const std::filesystem::path& p) { return decode_samples(io::read_file(p), p.string()); }

/// The shipped toy dataset: n vectors whose first `latent` coordinates are
/// independent N(0,1) draws and whose remaining coordinates duplicate them.
inline Matrix make_redundant_fixture(std::size_t n = 256, std::size_t latent = 8, std::uint64_t seed = 2024) {
  SplitMix64 rng(seed);
  Matrix x(n, 2 * latent);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < latent; ++k) {
      const double u = rng.normal();
      x(i, k) = u;
      x(i, k + latent) = u;
    }
  }
  return x;
}

}  // namespace btcxr::barlow
