#pragma once

// AnalysisBundle: the on-disk interchange format between attention/attribution
// producers and the analyses. A bundle is a directory holding manifest.json
// plus one NPY file per array.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "iavkit/error.hpp"
#include "iavkit/npy.hpp"
#include "iavkit/tensor.hpp"

namespace iavkit {

enum class LabelMode { Predicted, GroundTruth };

inline std::string to_string(LabelMode mode) {
  return mode == LabelMode::Predicted ? "predicted" : "ground_truth";
}

inline LabelMode parse_label_mode(const std::string& text) {
  if (text == "predicted") return LabelMode::Predicted;
  if (text == "ground_truth" || text == "ground-truth") return LabelMode::GroundTruth;
  fail(ErrorKind::InvalidArgument, "unknown label mode '" + text + "'");
}

struct BundleDims {
  std::size_t n_samples = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_patches = 0;
  std::size_t n_classes = 0;
  std::size_t patch_size = 0;   // 0 when unknown (no image-resolution data)
  Shape image_shape;            // [rows, cols, channels]; empty when unknown

  friend bool operator==(const BundleDims&, const BundleDims&) = default;
};

struct AnalysisBundle {
  BundleDims dims;
  Tensor attention;                         // [N, L, H, P], rows are probability vectors
  Tensor attribution;                       // [N, P], non-negative, for attribution_target's class
  std::optional<Tensor> class_attribution;  // [N, K, P], one map per class
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> predictions;
  std::optional<Tensor> images;             // [N, rows, cols, C]
  LabelMode attribution_target = LabelMode::Predicted;
  std::string attribution_method = "unknown";
  std::string checkpoint_tag;
  std::vector<std::string> class_names;
  std::string model_dir;  // relative path of a toy model directory, if any

  std::size_t n_samples() const { return dims.n_samples; }
  std::size_t n_heads_total() const { return dims.n_layers * dims.n_heads; }

  std::span<const double> head_attention(std::size_t sample, std::size_t layer, std::size_t head) const {
    return attention.slice({sample, layer, head});
  }

  std::int64_t target_class(std::size_t sample, LabelMode mode) const {
    if (sample >= dims.n_samples) fail(ErrorKind::IndexOutOfRange, "sample index " + std::to_string(sample));
    return mode == LabelMode::Predicted ? predictions[sample] : labels[sample];
  }

  /// Patch attribution of `sample` for `class_index`. Served from the per-class
  /// array when present, otherwise from the single map if its class matches.
  std::span<const double> attribution_for(std::size_t sample, std::int64_t class_index) const {
    if (sample >= dims.n_samples) fail(ErrorKind::IndexOutOfRange, "sample index " + std::to_string(sample));
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= dims.n_classes) {
      fail(ErrorKind::IndexOutOfRange, "class index " + std::to_string(class_index));
    }
    if (class_attribution) return class_attribution->slice({sample, static_cast<std::size_t>(class_index)});
    if (target_class(sample, attribution_target) != class_index) {
      fail(ErrorKind::ClassUnavailable, "sample " + std::to_string(sample) + " has no attribution for class " +
                                            std::to_string(class_index));
    }
    return attribution.slice({sample});
  }
};

struct LoadReport {
  std::size_t clamped_attribution_values = 0;
  std::size_t renormalized_attention_rows = 0;
  bool pooled_attribution = false;
};

struct LoadedBundle {
  AnalysisBundle bundle;
  LoadReport report;
};

inline constexpr double kAttentionRowTolerance = 1e-5;
// Rows closer than this to unit sum are left bit-untouched so that
// save -> load is an exact identity.
inline constexpr double kRenormalizeThreshold = 1e-12;
inline constexpr const char* kBundleFormatVersion = "1.0";

namespace detail {

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

inline void check_attention_rows(const Tensor& attention, double tolerance) {
  const std::size_t p = attention.shape().back();
  const std::size_t rows = attention.size() / p;
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double v = attention[r * p + j];
      require(v >= 0.0, ErrorKind::InvariantViolation, "negative attention value in row " + std::to_string(r));
      sum += v;
    }
    require(std::abs(sum - 1.0) <= tolerance, ErrorKind::InvariantViolation,
            "attention row " + std::to_string(r) + " sums to " + std::to_string(sum));
  }
}

inline void check_labels(const std::vector<std::int64_t>& values, std::size_t n, std::size_t classes,
                         const std::string& name) {
  require(values.size() == n, ErrorKind::ShapeMismatch, name + " length differs from sample count");
  for (auto v : values) {
    require(v >= 0 && static_cast<std::size_t>(v) < classes, ErrorKind::InvariantViolation,
            name + " value " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
  }
}

}  // namespace detail

/// Throws unless every AnalysisBundle invariant holds.
inline void validate_bundle(const AnalysisBundle& b) {
  using detail::require;
  const BundleDims& d = b.dims;
  require(d.n_samples > 0 && d.n_layers > 0 && d.n_heads > 0 && d.n_patches > 0 && d.n_classes > 0,
          ErrorKind::InvariantViolation, "bundle dimensions must be positive");
  require(b.attention.shape() == Shape{d.n_samples, d.n_layers, d.n_heads, d.n_patches}, ErrorKind::ShapeMismatch,
          "attention shape " + shape_string(b.attention.shape()));
  require(b.attribution.shape() == Shape{d.n_samples, d.n_patches}, ErrorKind::ShapeMismatch,
          "attribution shape " + shape_string(b.attribution.shape()));
  if (b.class_attribution) {
    require(b.class_attribution->shape() == Shape{d.n_samples, d.n_classes, d.n_patches}, ErrorKind::ShapeMismatch,
            "class attribution shape " + shape_string(b.class_attribution->shape()));
    for (double v : b.class_attribution->values()) {
      require(v >= 0.0, ErrorKind::InvariantViolation, "negative class attribution value");
    }
  }
  b.attention.check_finite();
  b.attribution.check_finite();
  detail::check_attention_rows(b.attention, kAttentionRowTolerance);
  for (double v : b.attribution.values()) {
    require(v >= 0.0, ErrorKind::InvariantViolation, "negative attribution value");
  }
  detail::check_labels(b.labels, d.n_samples, d.n_classes, "labels");
  detail::check_labels(b.predictions, d.n_samples, d.n_classes, "predictions");
  if (b.images) {
    require(d.image_shape.size() == 3, ErrorKind::ShapeMismatch, "images present but image_shape unset");
    require(b.images->shape() == Shape{d.n_samples, d.image_shape[0], d.image_shape[1], d.image_shape[2]},
            ErrorKind::ShapeMismatch, "images shape " + shape_string(b.images->shape()));
  }
  if (!d.image_shape.empty()) {
    require(d.image_shape.size() == 3, ErrorKind::ShapeMismatch, "image_shape must be [rows, cols, channels]");
    const PatchGrid grid = infer_patch_grid(d.image_shape[0], d.image_shape[1], d.n_patches);
    require(d.patch_size == 0 || d.patch_size == grid.patch_size, ErrorKind::ShapeMismatch,
            "patch_size disagrees with image_shape and n_patches");
  }
  require(b.class_names.empty() || b.class_names.size() == d.n_classes, ErrorKind::InvariantViolation,
          "class_names length differs from n_classes");
}

// ---------------------------------------------------------------------------
// Manifest

struct FileEntry {
  std::string path;
  Shape shape;
  std::string crc32;
};

struct Manifest {
  std::string format_version = kBundleFormatVersion;
  BundleDims dims;
  std::vector<std::string> class_names;
  std::string attribution_method;
  LabelMode attribution_target = LabelMode::Predicted;
  std::string checkpoint_tag;
  std::string model_dir;
  std::map<std::string, FileEntry> files;
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["dims"] = {{"n_samples", m.dims.n_samples}, {"n_layers", m.dims.n_layers},   {"n_heads", m.dims.n_heads},
               {"n_patches", m.dims.n_patches}, {"n_classes", m.dims.n_classes}, {"patch_size", m.dims.patch_size},
               {"image_shape", m.dims.image_shape}};
  j["class_names"] = m.class_names;
  j["attribution_method"] = m.attribution_method;
  j["attribution_target"] = to_string(m.attribution_target);
  j["checkpoint_tag"] = m.checkpoint_tag;
  if (!m.model_dir.empty()) j["model_dir"] = m.model_dir;
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, entry] : m.files) {
    files[name] = {{"path", entry.path}, {"shape", entry.shape}, {"crc32", entry.crc32}};
  }
  j["files"] = files;
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<std::string>();
    const auto& d = j.at("dims");
    m.dims.n_samples = d.at("n_samples").get<std::size_t>();
    m.dims.n_layers = d.at("n_layers").get<std::size_t>();
    m.dims.n_heads = d.at("n_heads").get<std::size_t>();
    m.dims.n_patches = d.at("n_patches").get<std::size_t>();
    m.dims.n_classes = d.at("n_classes").get<std::size_t>();
    m.dims.patch_size = d.value("patch_size", std::size_t{0});
    m.dims.image_shape = d.value("image_shape", Shape{});
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.attribution_method = j.value("attribution_method", std::string("unknown"));
    m.attribution_target = parse_label_mode(j.value("attribution_target", std::string("predicted")));
    m.checkpoint_tag = j.value("checkpoint_tag", std::string());
    m.model_dir = j.value("model_dir", std::string());
    for (const auto& [name, entry] : j.at("files").items()) {
      m.files[name] = FileEntry{entry.at("path").get<std::string>(), entry.at("shape").get<Shape>(),
                                entry.at("crc32").get<std::string>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvariantViolation, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Save / load

inline void save_bundle(const AnalysisBundle& bundle, const std::filesystem::path& dir) {
  validate_bundle(bundle);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    fail(ErrorKind::IoFailure, "cannot create bundle directory " + dir.string());
  }

  Manifest manifest;
  manifest.dims = bundle.dims;
  manifest.class_names = bundle.class_names;
  manifest.attribution_method = bundle.attribution_method;
  manifest.attribution_target = bundle.attribution_target;
  manifest.checkpoint_tag = bundle.checkpoint_tag;
  manifest.model_dir = bundle.model_dir;

  auto emit = [&](const std::string& name, const Shape& shape, const std::vector<std::uint8_t>& bytes) {
    const std::string file = name + ".npy";
    npy::write_file_atomic(dir / file, bytes);
    manifest.files[name] = FileEntry{file, shape, npy::crc32_hex(npy::crc32(bytes))};
  };
  emit("attention", bundle.attention.shape(), npy::encode(bundle.attention));
  emit("attribution", bundle.attribution.shape(), npy::encode(bundle.attribution));
  if (bundle.class_attribution) {
    emit("class_attribution", bundle.class_attribution->shape(), npy::encode(*bundle.class_attribution));
  }
  emit("labels", Shape{bundle.labels.size()}, npy::encode(bundle.labels));
  emit("predictions", Shape{bundle.predictions.size()}, npy::encode(bundle.predictions));
  if (bundle.images) emit("images", bundle.images->shape(), npy::encode(*bundle.images));

  npy::write_file_atomic(dir / "manifest.json", to_json(manifest).dump(2) + "\n");
}

namespace detail {

inline npy::Array read_declared(const std::filesystem::path& dir, const Manifest& m, const std::string& name) {
  const FileEntry& entry = m.files.at(name);
  const auto path = dir / entry.path;
  if (!std::filesystem::exists(path)) fail(ErrorKind::IoFailure, "declared file missing: " + path.string());
  const auto bytes = npy::read_file(path);
  const std::string actual = npy::crc32_hex(npy::crc32(bytes));
  if (actual != entry.crc32) {
    fail(ErrorKind::ChecksumMismatch, path.string() + " has crc32 " + actual + ", manifest says " + entry.crc32);
  }
  npy::Array array = npy::decode(bytes, path.string());
  if (array.shape != entry.shape) {
    fail(ErrorKind::ShapeMismatch, path.string() + " has shape " + shape_string(array.shape) +
                                       ", manifest declares " + shape_string(entry.shape));
  }
  return array;
}

inline std::size_t clamp_negative(Tensor& t) {
  std::size_t count = 0;
  for (double& v : t.values()) {
    if (v < 0.0) {
      v = 0.0;
      ++count;
    }
  }
  return count;
}

/// Pools trailing [rows, cols] image-resolution maps to patches.
inline Tensor pool_trailing(const Tensor& maps, const BundleDims& d) {
  if (d.image_shape.size() != 3) fail(ErrorKind::ShapeMismatch, "pixel attribution requires image_shape");
  const std::size_t rows = d.image_shape[0], cols = d.image_shape[1];
  const PatchGrid grid = infer_patch_grid(rows, cols, d.n_patches);
  const std::size_t maps_count = maps.size() / (rows * cols);
  Shape out_shape(maps.shape().begin(), maps.shape().end() - 2);
  out_shape.push_back(d.n_patches);
  Tensor out(out_shape);
  for (std::size_t m = 0; m < maps_count; ++m) {
    auto src = maps.values().subspan(m * rows * cols, rows * cols);
    Tensor map({rows, cols}, std::vector<double>(src.begin(), src.end()));
    Tensor pooled = pool_to_patches(map, grid.patch_size);
    std::copy(pooled.values().begin(), pooled.values().end(), out.values().begin() + m * d.n_patches);
  }
  return out;
}

}  // namespace detail

inline LoadedBundle load_bundle_with_report(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::is_regular_file(manifest_path)) {
    fail(ErrorKind::ManifestMissing, "no manifest.json in " + dir.string());
  }
  const auto text = npy::read_file(manifest_path);
  nlohmann::json j = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::InvariantViolation, "manifest.json in " + dir.string() + " is not valid JSON");
  const Manifest m = manifest_from_json(j);
  for (const char* required : {"attention", "attribution", "labels", "predictions"}) {
    if (!m.files.count(required)) {
      fail(ErrorKind::ManifestMissing, std::string("manifest does not declare '") + required + "'");
    }
  }

  LoadedBundle loaded;
  AnalysisBundle& b = loaded.bundle;
  LoadReport& report = loaded.report;
  b.dims = m.dims;
  b.class_names = m.class_names;
  b.attribution_method = m.attribution_method;
  b.attribution_target = m.attribution_target;
  b.checkpoint_tag = m.checkpoint_tag;
  b.model_dir = m.model_dir;
  const BundleDims& d = b.dims;

  b.attention = npy::to_tensor(detail::read_declared(dir, m, "attention"), "attention");
  if (b.attention.shape() != Shape{d.n_samples, d.n_layers, d.n_heads, d.n_patches}) {
    fail(ErrorKind::ShapeMismatch, "attention shape " + shape_string(b.attention.shape()) + " disagrees with dims");
  }
  detail::check_attention_rows(b.attention, kAttentionRowTolerance);
  {
    const std::size_t p = d.n_patches;
    for (std::size_t r = 0; r < b.attention.size() / p; ++r) {
      auto row = b.attention.values().subspan(r * p, p);
      double sum = 0.0;
      for (double v : row) sum += v;
      if (std::abs(sum - 1.0) > kRenormalizeThreshold) {
        for (double& v : row) v /= sum;
        ++report.renormalized_attention_rows;
      }
    }
  }

  auto load_attribution = [&](const std::string& name, std::size_t lead_rank) {
    Tensor t = npy::to_tensor(detail::read_declared(dir, m, name), name);
    report.clamped_attribution_values += detail::clamp_negative(t);
    Shape lead(t.shape().begin(), t.shape().begin() + static_cast<std::ptrdiff_t>(std::min(lead_rank, t.rank())));
    Shape patch_shape = lead;
    patch_shape.push_back(d.n_patches);
    if (t.shape() != patch_shape) {
      Shape pixel_shape = lead;
      if (d.image_shape.size() == 3) {
        pixel_shape.push_back(d.image_shape[0]);
        pixel_shape.push_back(d.image_shape[1]);
      }
      if (d.image_shape.size() != 3 || t.shape() != pixel_shape) {
        fail(ErrorKind::ShapeMismatch, name + " shape " + shape_string(t.shape()) +
                                           " matches neither patch nor pixel resolution");
      }
      t = detail::pool_trailing(t, d);
      report.pooled_attribution = true;
    }
    return t;
  };
  b.attribution = load_attribution("attribution", 1);
  if (b.attribution.shape()[0] != d.n_samples) fail(ErrorKind::ShapeMismatch, "attribution sample count");
  if (m.files.count("class_attribution")) b.class_attribution = load_attribution("class_attribution", 2);

  b.labels = npy::to_integers(detail::read_declared(dir, m, "labels"), "labels");
  b.predictions = npy::to_integers(detail::read_declared(dir, m, "predictions"), "predictions");
  if (m.files.count("images")) b.images = npy::to_tensor(detail::read_declared(dir, m, "images"), "images");

  validate_bundle(b);
  return loaded;
}

inline AnalysisBundle load_bundle(const std::filesystem::path& dir) {
  return load_bundle_with_report(dir).bundle;
}

}  // namespace iavkit
