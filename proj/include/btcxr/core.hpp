#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "btcxr/error.hpp"

namespace btcxr {

/// Axis-aligned box in normalized image coordinates.
///
/// A constructed Box always satisfies x_min < x_max, y_min < y_max, all
/// coordinates in [0,1] and score in [0,1]. Boxes are closed rectangles, so
/// boxes that only share an edge have zero intersection.
class Box {
 public:
  Box(int class_id, double x_min, double y_min, double x_max, double y_max,
      double score = 1.0, std::optional<std::string> rater_id = std::nullopt)
      : class_id_(class_id),
        x_min_(x_min),
        y_min_(y_min),
        x_max_(x_max),
        y_max_(y_max),
        score_(score),
        rater_id_(std::move(rater_id)) {
    validate();
  }

  int class_id() const noexcept { return class_id_; }
  double x_min() const noexcept { return x_min_; }
  double y_min() const noexcept { return y_min_; }
  double x_max() const noexcept { return x_max_; }
  double y_max() const noexcept { return y_max_; }
  double score() const noexcept { return score_; }
  const std::optional<std::string>& rater_id() const noexcept { return rater_id_; }

  double width() const noexcept { return x_max_ - x_min_; }
  double height() const noexcept { return y_max_ - y_min_; }
  double area() const noexcept { return width() * height(); }

  Box with_score(double score) const {
    return Box(class_id_, x_min_, y_min_, x_max_, y_max_, score, rater_id_);
  }
  Box without_rater() const {
    return Box(class_id_, x_min_, y_min_, x_max_, y_max_, score_, std::nullopt);
  }

  friend bool operator==(const Box&, const Box&) = default;

 private:
  void validate() const {
    const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (class_id_ < 0) throw Error(ErrorCode::InvalidBox, "negative class_id");
    if (!(in_unit(x_min_) && in_unit(y_min_) && in_unit(x_max_) && in_unit(y_max_))) {
      throw Error(ErrorCode::InvalidBox, "box coordinates outside [0,1]: " + describe());
    }
    if (!in_unit(score_)) throw Error(ErrorCode::InvalidBox, "box score outside [0,1]");
    if (!(x_min_ < x_max_ && y_min_ < y_max_)) {
      throw Error(ErrorCode::DegenerateBox, "zero-area box: " + describe());
    }
  }

  std::string describe() const {
    std::ostringstream os;
    os << '(' << x_min_ << ", " << y_min_ << ", " << x_max_ << ", " << y_max_ << ')';
    return os.str();
  }

  int class_id_;
  double x_min_, y_min_, x_max_, y_max_;
  double score_;
  std::optional<std::string> rater_id_;
};

/// Unvalidated box coordinates, e.g. straight from a CSV row.
struct RawBox {
  int class_id = 0;
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double score = 1.0;
  std::optional<std::string> rater_id;
};

inline double intersection_area(const Box& a, const Box& b) noexcept {
  const double w = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double h = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union. Class ids are ignored.
inline double iou(const Box& a, const Box& b) noexcept {
  const double inter = intersection_area(a, b);
  if (inter == 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Clamps coordinates into [0,1]. Throws DegenerateBox when the clamped box
/// has zero width or height, InvalidBox on non-finite input.
inline Box clip_box(const RawBox& r) {
  if (!(std::isfinite(r.x_min) && std::isfinite(r.y_min) && std::isfinite(r.x_max) &&
        std::isfinite(r.y_max))) {
    throw Error(ErrorCode::InvalidBox, "non-finite box coordinate");
  }
  const auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  const double x0 = c(r.x_min), y0 = c(r.y_min), x1 = c(r.x_max), y1 = c(r.y_max);
  if (!(x0 < x1 && y0 < y1)) {
    throw Error(ErrorCode::DegenerateBox, "box collapses to zero area after clipping");
  }
  return Box(r.class_id, x0, y0, x1, y1, r.score, r.rater_id);
}

}  // namespace btcxr
