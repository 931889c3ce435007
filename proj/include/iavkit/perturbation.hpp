#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "iavkit/attribution.hpp"
#include "iavkit/bundle.hpp"
#include "iavkit/error.hpp"
#include "iavkit/format.hpp"
#include "iavkit/random.hpp"
#include "iavkit/tensor.hpp"

namespace iavkit {

// ---------------------------------------------------------------------------
// Saliency-guided masking

/// ceil(ratio * P), guarded so that products like 0.7 * 10 do not round up
/// to the next patch.
inline std::size_t masked_patch_count(double ratio, std::size_t patches) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) fail(ErrorKind::InvalidArgument, "masking ratio outside [0, 1]");
  const double raw = ratio * static_cast<double>(patches);
  const auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(count, patches);
}

/// Indices of the `count` most salient patches; ties go to the lower index.
inline std::vector<std::size_t> top_patches(std::span<const double> saliency, std::size_t count) {
  std::vector<std::size_t> order(saliency.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

inline Tensor mask_image(const Tensor& image, std::span<const double> saliency, double ratio, double fill = 0.0) {
  if (image.rank() != 3) fail(ErrorKind::ShapeMismatch, "expected a [rows, cols, channels] image");
  const PatchGrid grid = infer_patch_grid(image.dim(0), image.dim(1), saliency.size());
  Tensor out = image;
  for (std::size_t p : top_patches(saliency, masked_patch_count(ratio, saliency.size()))) {
    fill_patch(out, grid, p, fill);
  }
  return out;
}

enum class SaliencyKind { AttentionHead, AttentionMean, Attribution, Random };

struct SaliencySource {
  SaliencyKind kind = SaliencyKind::AttentionMean;
  std::size_t layer = 0;   // AttentionHead only
  std::size_t head = 0;    // AttentionHead only
  std::uint64_t seed = 0;  // Random only

  static SaliencySource attention_head(std::size_t l, std::size_t h) { return {SaliencyKind::AttentionHead, l, h, 0}; }
  static SaliencySource attention_mean() { return {SaliencyKind::AttentionMean, 0, 0, 0}; }
  static SaliencySource attribution() { return {SaliencyKind::Attribution, 0, 0, 0}; }
  static SaliencySource random(std::uint64_t seed) { return {SaliencyKind::Random, 0, 0, seed}; }

  std::string name() const {
    switch (kind) {
      case SaliencyKind::AttentionHead:
        return "attention-l" + std::to_string(layer + 1) + "h" + std::to_string(head + 1);
      case SaliencyKind::AttentionMean: return "attention-mean";
      case SaliencyKind::Attribution: return "attribution";
      case SaliencyKind::Random: return "random";
    }
    return "unknown";
  }
};

/// Parses "attention-mean", "attribution", "random", or "head:L,H" (1-based).
inline SaliencySource parse_saliency_source(const std::string& text, std::uint64_t seed) {
  if (text == "attention-mean" || text == "attention_mean") return SaliencySource::attention_mean();
  if (text == "attribution") return SaliencySource::attribution();
  if (text == "random") return SaliencySource::random(seed);
  if (text.rfind("head:", 0) == 0) {
    std::size_t l = 0, h = 0;
    char comma = 0;
    std::istringstream in(text.substr(5));
    if (in >> l >> comma >> h && comma == ',' && l > 0 && h > 0) return SaliencySource::attention_head(l - 1, h - 1);
  }
  fail(ErrorKind::InvalidArgument, "unknown saliency source '" + text + "'");
}

/// Per-patch saliency of one sample under `source`.
inline std::vector<double> sample_saliency(const AnalysisBundle& bundle, std::size_t sample, const SaliencySource& source) {
  const BundleDims& d = bundle.dims;
  switch (source.kind) {
    case SaliencyKind::AttentionHead: {
      if (source.layer >= d.n_layers || source.head >= d.n_heads) {
        fail(ErrorKind::IndexOutOfRange, "masking head outside the model");
      }
      auto row = bundle.head_attention(sample, source.layer, source.head);
      return {row.begin(), row.end()};
    }
    case SaliencyKind::AttentionMean: {
      std::vector<double> acc(d.n_patches, 0.0);
      for (std::size_t l = 0; l < d.n_layers; ++l) {
        for (std::size_t h = 0; h < d.n_heads; ++h) {
          auto row = bundle.head_attention(sample, l, h);
          for (std::size_t p = 0; p < d.n_patches; ++p) acc[p] += row[p];
        }
      }
      const double total = std::accumulate(acc.begin(), acc.end(), 0.0);
      for (double& v : acc) v /= total;
      return acc;
    }
    case SaliencyKind::Attribution: {
      auto row = bundle.attribution.slice({sample});
      return {row.begin(), row.end()};
    }
    case SaliencyKind::Random: {
      Rng rng(stream_seed(source.seed, sample));
      std::vector<double> out(d.n_patches);
      for (double& v : out) v = uniform01(rng);
      return out;
    }
  }
  return {};
}

struct CurvePoint {
  double level = 0.0;  // masking ratio, blur sigma, or swap count
  double accuracy = 0.0;
};

inline std::size_t argmax_class(const Tensor& scores) {
  return static_cast<std::size_t>(std::max_element(scores.values().begin(), scores.values().end()) -
                                  scores.values().begin());
}

/// Fraction of samples whose transformed image is classified as its label.
template <typename Transform>
double accuracy_under(const AnalysisBundle& bundle, const Scorer& scorer, Transform&& transform) {
  if (!bundle.images) fail(ErrorKind::MissingImages, "bundle carries no images");
  const std::size_t n = bundle.n_samples();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = bundle.images->slice({i});
    Tensor image(bundle.dims.image_shape, std::vector<double>(src.begin(), src.end()));
    const Tensor scores = scorer(transform(image, i));
    if (static_cast<std::int64_t>(argmax_class(scores)) == bundle.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

inline std::vector<CurvePoint> masking_curve(const AnalysisBundle& bundle, const Scorer& scorer,
                                             const SaliencySource& source, const std::vector<double>& ratios,
                                             double fill = 0.0) {
  if (!bundle.images) fail(ErrorKind::MissingImages, "masking curve requires images in the bundle");
  std::vector<std::vector<double>> saliency;
  for (std::size_t i = 0; i < bundle.n_samples(); ++i) saliency.push_back(sample_saliency(bundle, i, source));
  std::vector<CurvePoint> curve;
  for (double ratio : ratios) {
    masked_patch_count(ratio, bundle.dims.n_patches);
    const double acc = accuracy_under(bundle, scorer, [&](const Tensor& image, std::size_t i) {
      return ratio == 0.0 ? image : mask_image(image, saliency[i], ratio, fill);
    });
    curve.push_back({ratio, acc});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Gaussian blur

/// Normalized 1-D Gaussian taps for offsets -r..r, r = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t x = -radius; x <= radius; ++x) {
    const double w = std::exp(-static_cast<double>(x * x) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(x + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

/// Half-sample symmetric reflection (d c b a | a b c d | d c b a).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t period = 2 * len;
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < len ? m : period - 1 - m);
}

/// Separable per-channel Gaussian blur with reflect padding; sigma 0 is the identity.
inline Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (image.rank() != 3) fail(ErrorKind::ShapeMismatch, "expected a [rows, cols, channels] image");
  if (!(sigma >= 0.0)) fail(ErrorKind::InvalidArgument, "sigma must be non-negative");
  if (sigma == 0.0) return image;
  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::size_t rows = image.dim(0), cols = image.dim(1), ch = image.dim(2);
  Tensor tmp(image.shape());
  Tensor out(image.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t k = 0; k < ch; ++k) {
        double s = 0.0;
        for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
          const std::size_t cc = reflect_index(static_cast<std::ptrdiff_t>(c) + o, cols);
          s += kernel[static_cast<std::size_t>(o + radius)] * image[(r * cols + cc) * ch + k];
        }
        tmp[(r * cols + c) * ch + k] = s;
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t k = 0; k < ch; ++k) {
        double s = 0.0;
        for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
          const std::size_t rr = reflect_index(static_cast<std::ptrdiff_t>(r) + o, rows);
          s += kernel[static_cast<std::size_t>(o + radius)] * tmp[(rr * cols + c) * ch + k];
        }
        out[(r * cols + c) * ch + k] = s;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Jigsaw

struct JigsawSpec {
  std::size_t grid_size = 2;
  std::size_t n_swaps = 0;
  std::uint64_t seed = 0;
};

/// The (a, b) cell pairs a jigsaw with this spec exchanges, in order.
inline std::vector<std::pair<std::size_t, std::size_t>> jigsaw_swaps(const JigsawSpec& spec) {
  const std::size_t cells = spec.grid_size * spec.grid_size;
  if (spec.n_swaps > 0 && cells < 2) fail(ErrorKind::GridMismatch, "a 1x1 grid has no cells to swap");
  Rng rng(spec.seed);
  std::vector<std::pair<std::size_t, std::size_t>> swaps;
  for (std::size_t s = 0; s < spec.n_swaps; ++s) {
    const auto a = static_cast<std::size_t>(uniform_index(rng, cells));
    auto b = static_cast<std::size_t>(uniform_index(rng, cells - 1));
    if (b >= a) ++b;
    swaps.emplace_back(a, b);
  }
  return swaps;
}

inline Tensor jigsaw(const Tensor& image, const JigsawSpec& spec) {
  if (image.rank() != 3) fail(ErrorKind::ShapeMismatch, "expected a [rows, cols, channels] image");
  const std::size_t g = spec.grid_size;
  if (g == 0 || image.dim(0) % g || image.dim(1) % g) {
    fail(ErrorKind::GridMismatch, "grid size " + std::to_string(g) + " does not divide " +
                                      shape_string(image.shape()));
  }
  const std::size_t rows = image.dim(0), cols = image.dim(1), ch = image.dim(2);
  const std::size_t cell_rows = rows / g, cell_cols = cols / g;
  Tensor out = image;
  for (const auto& [a, b] : jigsaw_swaps(spec)) {
    const std::size_t ar = a / g, ac = a % g, br = b / g, bc = b % g;
    for (std::size_t i = 0; i < cell_rows; ++i) {
      for (std::size_t j = 0; j < cell_cols; ++j) {
        const std::size_t pa = ((ar * cell_rows + i) * cols + ac * cell_cols + j) * ch;
        const std::size_t pb = ((br * cell_rows + i) * cols + bc * cell_cols + j) * ch;
        for (std::size_t k = 0; k < ch; ++k) std::swap(out[pa + k], out[pb + k]);
      }
    }
  }
  return out;
}

inline std::vector<CurvePoint> blur_curve(const AnalysisBundle& bundle, const Scorer& scorer,
                                          const std::vector<double>& sigmas) {
  std::vector<CurvePoint> curve;
  for (double sigma : sigmas) {
    curve.push_back({sigma, accuracy_under(bundle, scorer, [&](const Tensor& image, std::size_t) {
                       return gaussian_blur(image, sigma);
                     })});
  }
  return curve;
}

/// Accuracy for each swap count; sample i uses seed stream_seed(seed, i).
inline std::vector<CurvePoint> jigsaw_curve(const AnalysisBundle& bundle, const Scorer& scorer, std::size_t grid_size,
                                            const std::vector<std::size_t>& swap_counts, std::uint64_t seed) {
  std::vector<CurvePoint> curve;
  for (std::size_t k : swap_counts) {
    curve.push_back({static_cast<double>(k), accuracy_under(bundle, scorer, [&](const Tensor& image, std::size_t i) {
                       return jigsaw(image, JigsawSpec{grid_size, k, stream_seed(seed, i)});
                     })});
  }
  return curve;
}

inline std::string curve_csv(const std::string& level_name, const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& series) {
  std::ostringstream out;
  out << "series," << level_name << ",accuracy\n";
  for (const auto& [name, points] : series) {
    for (const auto& p : points) out << name << ',' << format_double(p.level) << ',' << format_double(p.accuracy) << '\n';
  }
  return out.str();
}

}  // namespace iavkit
