#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "iavkit/error.hpp"
#include "iavkit/tensor.hpp"
#include "iavkit/vit.hpp"

namespace iavkit {

struct AttributionMap {
  Tensor values;  // [P] or [rows, cols]
  std::int64_t class_index = 0;
  std::string method_tag;
  bool degenerate = false;        // every value is zero
  std::size_t clamped_count = 0;  // negatives zeroed during validation
};

/// Any callable mapping an image tensor to a class-score vector.
using Scorer = std::function<Tensor(const Tensor&)>;

inline Scorer make_scorer(const ViTModel& model) {
  return [&model](const Tensor& image) { return forward(model, image).scores; };
}

inline bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

/// Replaces every pixel (all channels) of patch `patch` with `value`.
inline void fill_patch(Tensor& image, const PatchGrid& grid, std::size_t patch, double value) {
  const std::size_t ps = grid.patch_size;
  const std::size_t cols = image.dim(1), ch = image.dim(2);
  const std::size_t pr = patch / grid.cols, pc = patch % grid.cols;
  for (std::size_t i = 0; i < ps; ++i) {
    const std::size_t row = pr * ps + i;
    for (std::size_t j = 0; j < ps; ++j) {
      const std::size_t base = (row * cols + pc * ps + j) * ch;
      for (std::size_t c = 0; c < ch; ++c) image[base + c] = value;
    }
  }
}

/// Score drops for every class when each patch is occluded, clamped at zero.
/// Returns [n_classes, P]; row c is the occlusion map of class c. Costs P + 1
/// scorer calls regardless of the class count.
inline Tensor occlusion_drops(const Scorer& scorer, const Tensor& image, std::size_t patch_size, double baseline_value) {
  if (image.rank() != 3) fail(ErrorKind::ShapeMismatch, "expected a [rows, cols, channels] image");
  const PatchGrid grid = patch_grid(image.dim(0), image.dim(1), patch_size);
  const Tensor reference = scorer(image);
  const std::size_t classes = reference.size();
  Tensor drops({classes, grid.count()});
  for (std::size_t p = 0; p < grid.count(); ++p) {
    Tensor occluded = image;
    fill_patch(occluded, grid, p, baseline_value);
    const Tensor scores = scorer(occluded);
    if (scores.size() != classes) fail(ErrorKind::ShapeMismatch, "scorer returned inconsistent class counts");
    for (std::size_t c = 0; c < classes; ++c) {
      drops[c * grid.count() + p] = std::max(0.0, reference[c] - scores[c]);
    }
  }
  return drops;
}

inline AttributionMap occlusion_attribution(const Scorer& scorer, const Tensor& image, std::size_t patch_size,
                                            std::int64_t class_index, double baseline_value) {
  const Tensor drops = occlusion_drops(scorer, image, patch_size, baseline_value);
  if (class_index < 0 || static_cast<std::size_t>(class_index) >= drops.dim(0)) {
    fail(ErrorKind::IndexOutOfRange, "class index " + std::to_string(class_index));
  }
  auto row = drops.slice({static_cast<std::size_t>(class_index)});
  AttributionMap map;
  map.values = Tensor::vector(std::vector<double>(row.begin(), row.end()));
  map.class_index = class_index;
  map.method_tag = "occlusion";
  map.degenerate = all_zero(map.values.values());
  return map;
}

inline AttributionMap occlusion_attribution(const ViTModel& model, const Tensor& image, std::int64_t class_index,
                                            double baseline_value) {
  if (image.shape() != model.config.image_shape()) {
    fail(ErrorKind::ShapeMismatch, "image shape " + shape_string(image.shape()));
  }
  return occlusion_attribution(make_scorer(model), image, model.config.patch_size, class_index, baseline_value);
}

/// Brings an externally produced map to patch resolution: pixel maps
/// ([rows, cols] matching `image_rows` x `image_cols`) are patch-averaged,
/// negatives are clamped and counted, all-zero maps are flagged.
inline AttributionMap validate_external_attribution(const AttributionMap& map, std::size_t expected_patches,
                                                    std::size_t image_rows = 0, std::size_t image_cols = 0) {
  AttributionMap out = map;
  out.clamped_count = 0;
  Tensor v = map.values;
  for (double& x : v.values()) {
    if (x < 0.0) {
      x = 0.0;
      ++out.clamped_count;
    }
  }
  if (v.rank() == 1 && v.size() == expected_patches) {
    out.values = std::move(v);
  } else if (v.rank() == 2 && (image_rows == 0 || (v.dim(0) == image_rows && v.dim(1) == image_cols))) {
    const PatchGrid grid = infer_patch_grid(v.dim(0), v.dim(1), expected_patches);
    out.values = pool_to_patches(v, grid.patch_size);
  } else {
    fail(ErrorKind::ShapeMismatch, "attribution of shape " + shape_string(v.shape()) +
                                       " matches neither " + std::to_string(expected_patches) + " patches nor the image");
  }
  out.degenerate = all_zero(out.values.values());
  return out;
}

}  // namespace iavkit
