#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iavkit/error.hpp"

namespace iavkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

/// Dense row-major array of doubles.
///
/// Constructors reject NaN/Inf and data whose length disagrees with the shape.
/// Mutable access through `values()` exists for builders; anything produced
/// that way should pass through `check_finite()` before leaving the builder.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                         " does not match shape " + shape_string(shape_));
    }
    check_finite();
  }

  static Tensor vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> data) {
    return vector(std::vector<double>(data));
  }

  static Tensor filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    t.check_finite();
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> values() const& noexcept { return data_; }
  std::span<double> values() & noexcept { return data_; }
  // A span into a temporary would dangle.
  std::span<const double> values() const&& = delete;
  const std::vector<double>& storage() const& noexcept { return data_; }
  std::vector<double> storage() && noexcept { return std::move(data_); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  template <typename... Index>
  double at(Index... index) const {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }

  template <typename... Index>
  double& at(Index... index) {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }

  /// Contiguous view of the trailing axes selected by fixing the leading ones.
  std::span<const double> slice(std::initializer_list<std::size_t> leading) const {
    auto [start, count] = slice_range(leading);
    return std::span<const double>(data_).subspan(start, count);
  }

  std::span<double> slice(std::initializer_list<std::size_t> leading) {
    auto [start, count] = slice_range(leading);
    return std::span<double>(data_).subspan(start, count);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      fail(ErrorKind::ShapeMismatch,
           "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  void check_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) fail(ErrorKind::NonFinite, "tensor contains NaN or Inf");
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) fail(ErrorKind::ShapeMismatch, "zero-sized dimension in " + shape_string(shape_));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      fail(ErrorKind::IndexOutOfRange, "index rank does not match tensor rank");
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) fail(ErrorKind::IndexOutOfRange, "index out of range on axis " + std::to_string(axis));
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  std::pair<std::size_t, std::size_t> slice_range(std::initializer_list<std::size_t> leading) const {
    if (leading.size() > shape_.size()) {
      fail(ErrorKind::IndexOutOfRange, "slice rank exceeds tensor rank");
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : leading) {
      if (i >= shape_[axis]) fail(ErrorKind::IndexOutOfRange, "slice index out of range on axis " + std::to_string(axis));
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    std::size_t count = 1;
    for (std::size_t a = axis; a < shape_.size(); ++a) count *= shape_[a];
    return {flat * count, count};
  }

  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector math

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::ShapeMismatch, "dot of vectors with different lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// dot(a, b) / (|a| |b|). Throws ZeroVector when either side has zero norm;
/// the caller decides what a degenerate pair means.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::ShapeMismatch, "cosine of vectors with different lengths");
  if (a.empty()) fail(ErrorKind::ShapeMismatch, "cosine of empty vectors");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) fail(ErrorKind::ZeroVector, "cosine similarity with a zero vector");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) fail(ErrorKind::ShapeMismatch, "cosine expects rank-1 tensors");
  return cosine_similarity(a.values(), b.values());
}

inline std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (n == 0.0) fail(ErrorKind::ZeroVector, "cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline Tensor l2_normalize(const Tensor& v) {
  if (v.rank() != 1) fail(ErrorKind::ShapeMismatch, "l2_normalize expects a rank-1 tensor");
  return Tensor::vector(l2_normalize(v.values()));
}

/// Numerically stable softmax (max subtracted before exponentiation).
inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) fail(ErrorKind::ShapeMismatch, "softmax of empty vector");
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorKind::NonFinite, "softmax input contains NaN or Inf");
  }
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline Tensor softmax(const Tensor& v) {
  if (v.rank() != 1) fail(ErrorKind::ShapeMismatch, "softmax expects a rank-1 tensor");
  return Tensor::vector(softmax(v.values()));
}

// ---------------------------------------------------------------------------
// Patch geometry. Patches are numbered row-major over the grid: patch
// (r, c) of an R x C grid has index r * C + c, where r runs along axis 0.

struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch_size = 0;

  std::size_t count() const noexcept { return rows * cols; }
};

inline PatchGrid patch_grid(std::size_t height, std::size_t width, std::size_t patch_size) {
  if (patch_size == 0) fail(ErrorKind::ShapeMismatch, "patch size must be positive");
  if (height % patch_size != 0 || width % patch_size != 0) {
    fail(ErrorKind::ShapeMismatch, "map " + std::to_string(height) + "x" + std::to_string(width) +
                                       " is not divisible by patch size " + std::to_string(patch_size));
  }
  return {height / patch_size, width / patch_size, patch_size};
}

/// Recovers the grid of an image-sized map split into `patches` square patches.
inline PatchGrid infer_patch_grid(std::size_t height, std::size_t width, std::size_t patches) {
  if (patches == 0) fail(ErrorKind::ShapeMismatch, "patch count must be positive");
  const std::size_t area = height * width;
  if (area % patches != 0) {
    fail(ErrorKind::ShapeMismatch, "cannot split " + std::to_string(height) + "x" + std::to_string(width) +
                                       " into " + std::to_string(patches) + " square patches");
  }
  const auto ps = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(area / patches))));
  if (ps == 0 || ps * ps * patches != area) {
    fail(ErrorKind::ShapeMismatch, "patch area is not a perfect square");
  }
  return patch_grid(height, width, ps);
}

/// Mean of each patch of a rank-2 map; output has one entry per patch.
inline Tensor pool_to_patches(const Tensor& map, std::size_t patch_size) {
  if (map.rank() != 2) fail(ErrorKind::ShapeMismatch, "pool_to_patches expects a rank-2 map");
  const PatchGrid grid = patch_grid(map.dim(0), map.dim(1), patch_size);
  const std::size_t width = map.dim(1);
  const double area = static_cast<double>(patch_size * patch_size);
  std::vector<double> out(grid.count(), 0.0);
  for (std::size_t pr = 0; pr < grid.rows; ++pr) {
    for (std::size_t pc = 0; pc < grid.cols; ++pc) {
      double sum = 0.0;
      for (std::size_t i = 0; i < patch_size; ++i) {
        const std::size_t row = (pr * patch_size + i) * width + pc * patch_size;
        for (std::size_t j = 0; j < patch_size; ++j) sum += map[row + j];
      }
      out[pr * grid.cols + pc] = sum / area;
    }
  }
  return Tensor::vector(std::move(out));
}

// ---------------------------------------------------------------------------
// Small dense linear algebra for the toy model.

/// [m, k] x [k, n] -> [m, n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorKind::ShapeMismatch, "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * b[p * n + j];
    }
  }
  return out;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) fail(ErrorKind::ShapeMismatch, "mean of empty sequence");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace iavkit
