#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "btcxr/core.hpp"
#include "btcxr/csv.hpp"
#include "btcxr/error.hpp"
#include "btcxr/fileio.hpp"
#include "btcxr/version.hpp"

namespace btcxr {

using ojson = nlohmann::ordered_json;

enum class Source { nih, vindr, canonical };

constexpr std::string_view to_string(Source s) noexcept {
  switch (s) {
    case Source::nih: return "nih";
    case Source::vindr: return "vindr";
    case Source::canonical: return "canonical";
  }
  return "canonical";
}

struct ImageRecord {
  std::string image_id;
  int width = 0;   // pixels
  int height = 0;  // pixels
  std::vector<Box> boxes;
  std::vector<int> labels;  // sorted, unique label ids
  Source source = Source::canonical;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> images;
  std::vector<std::string> label_names;
  ojson provenance = ojson::object();

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.images == b.images && a.label_names == b.label_names && a.provenance == b.provenance;
  }

  std::size_t size() const noexcept { return images.size(); }

  /// Index of each image id, in manifest order.
  std::unordered_map<std::string, std::size_t> index() const {
    std::unordered_map<std::string, std::size_t> idx;
    idx.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) idx.emplace(images[i].image_id, i);
    return idx;
  }

  /// Throws InvalidArgument when a manifest-level invariant is broken.
  void validate() const {
    std::unordered_set<std::string> seen;
    const auto n_labels = static_cast<int>(label_names.size());
    for (const auto& im : images) {
      if (!seen.insert(im.image_id).second) {
        throw Error(ErrorCode::InvalidArgument, "duplicate image_id in manifest", im.image_id);
      }
      if (im.width <= 0 || im.height <= 0) {
        throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive", im.image_id);
      }
      for (const auto& b : im.boxes) {
        if (b.class_id() >= n_labels) {
          throw Error(ErrorCode::InvalidArgument, "box class_id outside label_names", im.image_id);
        }
      }
      for (int l : im.labels) {
        if (l < 0 || l >= n_labels) {
          throw Error(ErrorCode::InvalidArgument, "label id outside label_names", im.image_id);
        }
      }
    }
  }
};

/// Label set used for stratification: image labels when present, otherwise
/// the distinct box classes.
inline std::vector<int> effective_labels(const ImageRecord& im) {
  if (!im.labels.empty()) return im.labels;
  std::set<int> s;
  for (const auto& b : im.boxes) s.insert(b.class_id());
  return {s.begin(), s.end()};
}

/// Rounds to 9 significant digits, the on-disk precision of box coordinates.
inline double round_sig9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

/// The manifest as it will read back from disk: box coordinates rounded to
/// 9 significant digits.
inline DatasetManifest quantized(const DatasetManifest& m) {
  DatasetManifest out = m;
  for (auto& im : out.images) {
    for (auto& b : im.boxes) {
      b = Box(b.class_id(), round_sig9(b.x_min()), round_sig9(b.y_min()), round_sig9(b.x_max()),
              round_sig9(b.y_max()), b.score(), b.rater_id());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical JSON layout

inline constexpr std::string_view kManifestVersion = "1";

inline ojson box_to_json(const Box& b) {
  ojson j = ojson::object();
  j["class_id"] = b.class_id();
  j["x_min"] = round_sig9(b.x_min());
  j["y_min"] = round_sig9(b.y_min());
  j["x_max"] = round_sig9(b.x_max());
  j["y_max"] = round_sig9(b.y_max());
  j["score"] = b.score();
  if (b.rater_id()) {
    j["rater_id"] = *b.rater_id();
  } else {
    j["rater_id"] = nullptr;
  }
  return j;
}

inline Box box_from_json(const ojson& j) {
  std::optional<std::string> rater;
  if (j.contains("rater_id") && !j.at("rater_id").is_null()) rater = j.at("rater_id").get<std::string>();
  return Box(j.at("class_id").get<int>(), j.at("x_min").get<double>(), j.at("y_min").get<double>(),
             j.at("x_max").get<double>(), j.at("y_max").get<double>(), j.at("score").get<double>(),
             std::move(rater));
}

inline Source common_source(const DatasetManifest& m) {
  if (m.images.empty()) return Source::canonical;
  const Source s = m.images.front().source;
  for (const auto& im : m.images) {
    if (im.source != s) return Source::canonical;
  }
  return s;
}

inline ojson manifest_to_json(const DatasetManifest& m) {
  ojson j = ojson::object();
  j["version"] = std::string(kManifestVersion);
  j["label_names"] = m.label_names;
  ojson images = ojson::array();
  for (const auto& im : m.images) {
    ojson r = ojson::object();
    r["image_id"] = im.image_id;
    r["width"] = im.width;
    r["height"] = im.height;
    r["labels"] = im.labels;
    ojson boxes = ojson::array();
    for (const auto& b : im.boxes) boxes.push_back(box_to_json(b));
    r["boxes"] = std::move(boxes);
    images.push_back(std::move(r));
  }
  j["images"] = std::move(images);
  ojson prov = m.provenance.is_object() ? m.provenance : ojson::object();
  if (!prov.contains("source")) prov["source"] = std::string(to_string(common_source(m)));
  j["provenance"] = std::move(prov);
  return j;
}

inline DatasetManifest manifest_from_json(const ojson& j) {
  try {
    const auto& version = j.at("version");
    if (!version.is_string() || version.get<std::string>() != kManifestVersion) {
      throw Error(ErrorCode::SchemaVersionMismatch,
                  "unsupported manifest version " + version.dump() + ", expected \"1\"");
    }
    DatasetManifest m;
    m.label_names = j.at("label_names").get<std::vector<std::string>>();
    m.provenance = j.contains("provenance") ? j.at("provenance") : ojson::object();
    Source src = Source::canonical;
    if (m.provenance.contains("source")) {
      const auto s = m.provenance.at("source").get<std::string>();
      if (s == "nih") src = Source::nih;
      if (s == "vindr") src = Source::vindr;
    }
    for (const auto& r : j.at("images")) {
      ImageRecord im;
      im.image_id = r.at("image_id").get<std::string>();
      im.width = r.at("width").get<int>();
      im.height = r.at("height").get<int>();
      im.labels = r.at("labels").get<std::vector<int>>();
      std::sort(im.labels.begin(), im.labels.end());
      im.labels.erase(std::unique(im.labels.begin(), im.labels.end()), im.labels.end());
      for (const auto& b : r.at("boxes")) im.boxes.push_back(box_from_json(b));
      im.source = src;
      m.images.push_back(std::move(im));
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("manifest schema error: ") + e.what());
  }
}

inline std::string dump_manifest(const DatasetManifest& m) {
  return manifest_to_json(m).dump(2) + "\n";
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, dump_manifest(m));
}

inline DatasetManifest parse_manifest(std::string_view text, const std::string& what = "manifest") {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::IoError, std::string("manifest is not valid JSON: ") + e.what(), what);
  }
  return manifest_from_json(j);
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Source CSV dialects

/// image_id -> (width, height) in pixels.
using DimsTable = std::unordered_map<std::string, std::pair<int, int>>;

namespace detail {

inline std::string row_ctx(std::size_t row) { return "row " + std::to_string(row); }

inline double parse_real(const std::string& field, std::size_t row, std::string_view col) {
  const std::string s = csv::trim(field);
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::MalformedRow,
                "unparsable numeric field '" + std::string(col) + "': '" + s + "'", row_ctx(row));
  }
  return v;
}

inline int parse_int(const std::string& field, std::size_t row, std::string_view col) {
  const std::string s = csv::trim(field);
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) {
    throw Error(ErrorCode::MalformedRow,
                "unparsable integer field '" + std::string(col) + "': '" + s + "'", row_ctx(row));
  }
  return v;
}

inline bool is_no_finding(std::string_view s) { return csv::lower(csv::trim(s)) == "no finding"; }

inline const std::string& cell(const std::vector<std::string>& r, std::size_t c, std::size_t row) {
  if (c >= r.size()) throw Error(ErrorCode::MalformedRow, "row has too few fields", row_ctx(row));
  return r[c];
}

}  // namespace detail

/// Sidecar dimensions table with columns image_id,width,height.
inline DimsTable parse_dims_csv(std::string_view text) {
  const auto t = csv::parse(text);
  const auto c_id = t.require_column("image_id");
  const auto c_w = t.require_column("width");
  const auto c_h = t.require_column("height");
  DimsTable dims;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::size_t row = i + 2;  // header is row 1
    const auto& r = t.rows[i];
    const int w = detail::parse_int(detail::cell(r, c_w, row), row, "width");
    const int h = detail::parse_int(detail::cell(r, c_h, row), row, "height");
    if (w <= 0 || h <= 0) throw Error(ErrorCode::MalformedRow, "non-positive image dimension", detail::row_ctx(row));
    dims[csv::trim(detail::cell(r, c_id, row))] = {w, h};
  }
  return dims;
}

/// VinDr-style instance annotations: one row per (rater, box). Pixel
/// coordinates are normalized by the image dimensions from `dims`. Rows whose
/// class_name is "No finding" register the image but add no box. Duplicate
/// boxes across raters are kept as-is.
inline DatasetManifest parse_vindr_csv(std::string_view text, const DimsTable& dims) {
  const auto t = csv::parse(text);
  const auto c_id = t.require_column("image_id");
  const auto c_name = t.require_column("class_name");
  const auto c_cls = t.require_column("class_id");
  const auto c_rad = t.require_column("rad_id");
  const auto c_x0 = t.require_column("x_min");
  const auto c_y0 = t.require_column("y_min");
  const auto c_x1 = t.require_column("x_max");
  const auto c_y1 = t.require_column("y_max");

  DatasetManifest m;
  std::unordered_map<std::string, std::size_t> where;
  std::map<int, std::string> class_names;

  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::size_t row = i + 2;
    const auto& r = t.rows[i];
    const std::string id = csv::trim(detail::cell(r, c_id, row));
    if (id.empty()) throw Error(ErrorCode::MalformedRow, "empty image_id", detail::row_ctx(row));

    auto it = where.find(id);
    if (it == where.end()) {
      const auto d = dims.find(id);
      if (d == dims.end()) throw Error(ErrorCode::MissingDimension, "no dimensions for image '" + id + "'", id);
      ImageRecord im;
      im.image_id = id;
      im.width = d->second.first;
      im.height = d->second.second;
      im.source = Source::vindr;
      it = where.emplace(id, m.images.size()).first;
      m.images.push_back(std::move(im));
    }
    auto& im = m.images[it->second];

    const std::string name = csv::trim(detail::cell(r, c_name, row));
    if (detail::is_no_finding(name)) continue;

    const int cls = detail::parse_int(detail::cell(r, c_cls, row), row, "class_id");
    if (cls < 0) throw Error(ErrorCode::MalformedRow, "negative class_id", detail::row_ctx(row));
    auto [cn, inserted] = class_names.emplace(cls, name);
    if (!inserted && cn->second != name) {
      throw Error(ErrorCode::MalformedRow,
                  "class_id " + std::to_string(cls) + " named both '" + cn->second + "' and '" + name + "'",
                  detail::row_ctx(row));
    }

    RawBox raw;
    raw.class_id = cls;
    raw.x_min = detail::parse_real(detail::cell(r, c_x0, row), row, "x_min");
    raw.y_min = detail::parse_real(detail::cell(r, c_y0, row), row, "y_min");
    raw.x_max = detail::parse_real(detail::cell(r, c_x1, row), row, "x_max");
    raw.y_max = detail::parse_real(detail::cell(r, c_y1, row), row, "y_max");
    if (raw.x_min > raw.x_max || raw.y_min > raw.y_max) {
      throw Error(ErrorCode::MalformedRow, "box has min coordinate greater than max", detail::row_ctx(row));
    }
    raw.x_min /= im.width;
    raw.x_max /= im.width;
    raw.y_min /= im.height;
    raw.y_max /= im.height;
    raw.score = 1.0;
    const std::string rad = csv::trim(detail::cell(r, c_rad, row));
    if (!rad.empty()) raw.rater_id = rad;
    try {
      im.boxes.push_back(clip_box(raw));
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), detail::row_ctx(row));
    }
  }

  const int n_classes = class_names.empty() ? 0 : class_names.rbegin()->first + 1;
  m.label_names.resize(static_cast<std::size_t>(n_classes));
  for (int k = 0; k < n_classes; ++k) {
    auto it = class_names.find(k);
    m.label_names[static_cast<std::size_t>(k)] = it != class_names.end() ? it->second : "class_" + std::to_string(k);
  }
  m.provenance["source"] = "vindr";
  m.provenance["toolkit_version"] = kToolkitVersion;
  m.provenance["coordinates"] = "normalized by image width/height";
  return m;
}

inline constexpr int kDefaultNihSide = 1024;

/// NIH-style image-level labels: columns "Image Index" and "Finding Labels"
/// (pipe-separated). Dimensions come from `dims` when given, else from the
/// "OriginalImage[Width" / "Height]" columns, else default to 1024x1024.
inline DatasetManifest parse_nih_csv(std::string_view text, const DimsTable* dims = nullptr) {
  const auto t = csv::parse(text);
  const auto c_id = t.require_column("Image Index");
  const auto c_lab = t.require_column("Finding Labels");
  const auto c_w = t.column("OriginalImage[Width");
  const auto c_h = t.column("Height]");

  DatasetManifest m;
  std::unordered_map<std::string, int> label_id;
  std::unordered_set<std::string> seen;

  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::size_t row = i + 2;
    const auto& r = t.rows[i];
    ImageRecord im;
    im.image_id = csv::trim(detail::cell(r, c_id, row));
    if (im.image_id.empty()) throw Error(ErrorCode::MalformedRow, "empty image id", detail::row_ctx(row));
    if (!seen.insert(im.image_id).second) {
      throw Error(ErrorCode::MalformedRow, "duplicate image id '" + im.image_id + "'", detail::row_ctx(row));
    }
    im.source = Source::nih;
    im.width = im.height = kDefaultNihSide;
    if (dims != nullptr) {
      const auto d = dims->find(im.image_id);
      if (d == dims->end()) throw Error(ErrorCode::MissingDimension, "no dimensions for image '" + im.image_id + "'", im.image_id);
      im.width = d->second.first;
      im.height = d->second.second;
    } else if (c_w && c_h) {
      im.width = detail::parse_int(detail::cell(r, *c_w, row), row, "OriginalImage[Width");
      im.height = detail::parse_int(detail::cell(r, *c_h, row), row, "Height]");
      if (im.width <= 0 || im.height <= 0) {
        throw Error(ErrorCode::MalformedRow, "non-positive image dimension", detail::row_ctx(row));
      }
    }

    std::string_view field = detail::cell(r, c_lab, row);
    std::set<int> labels;
    while (true) {
      const auto bar = field.find('|');
      const std::string name = csv::trim(field.substr(0, bar));
      if (!name.empty() && !detail::is_no_finding(name)) {
        auto [it, inserted] = label_id.emplace(name, static_cast<int>(m.label_names.size()));
        if (inserted) m.label_names.push_back(name);
        labels.insert(it->second);
      }
      if (bar == std::string_view::npos) break;
      field.remove_prefix(bar + 1);
    }
    im.labels.assign(labels.begin(), labels.end());
    m.images.push_back(std::move(im));
  }
  m.provenance["source"] = "nih";
  m.provenance["toolkit_version"] = kToolkitVersion;
  m.provenance["coordinates"] = "normalized by image width/height";
  return m;
}

}  // namespace btcxr
