#pragma once

// Agreement between attention and input attribution.
//
// The IA-Score of head (l, h) on sample i for class c is the cosine between
// the L2-normalized patch attribution map and the head's CLS attention over
// patches. Concatenating all heads layer-major gives the IAV; averaging IAVs
// over samples gives the global IAV. Swapping the attribution for another
// input-sized baseline (a segmentation mask, another model's saliency) gives
// the AAV.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "iavkit/attribution.hpp"
#include "iavkit/bundle.hpp"
#include "iavkit/error.hpp"
#include "iavkit/format.hpp"
#include "iavkit/stats.hpp"
#include "iavkit/tensor.hpp"

namespace iavkit {

struct HeadScore {
  double value = 0.0;
  bool degenerate = false;  // attribution (or attention) was all zero
};

/// IA-Score with the zero-vector convention applied: a degenerate side scores
/// 0 and is flagged instead of raising.
inline HeadScore ia_score_checked(std::span<const double> attribution, std::span<const double> attention) {
  if (attribution.size() != attention.size() || attribution.empty()) {
    fail(ErrorKind::ShapeMismatch, "attribution has " + std::to_string(attribution.size()) +
                                       " patches, attention has " + std::to_string(attention.size()));
  }
  for (double v : attribution) {
    if (v < 0.0) fail(ErrorKind::InvalidArgument, "IA-Score requires non-negative attribution");
  }
  if (l2_norm(attribution) == 0.0 || l2_norm(attention) == 0.0) return {0.0, true};
  const auto a = l2_normalize(attribution);
  const auto b = l2_normalize(attention);
  return {std::clamp(cosine_similarity(a, b), 0.0, 1.0), false};
}

inline double ia_score(std::span<const double> attribution, std::span<const double> attention) {
  return ia_score_checked(attribution, attention).value;
}

inline double ia_score(const AttributionMap& attribution, const Tensor& attention) {
  if (attribution.values.rank() != 1 || attention.rank() != 1) {
    fail(ErrorKind::ShapeMismatch, "ia_score expects patch-resolution vectors");
  }
  return ia_score(attribution.values.values(), attention.values());
}

// ---------------------------------------------------------------------------
// IAV

struct HeadIndex {
  std::size_t layer = 0;
  std::size_t head = 0;
  friend bool operator==(const HeadIndex&, const HeadIndex&) = default;
};

struct IavVector {
  Tensor scores;  // [L * H], layer-major
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t sample_index = 0;
  std::int64_t class_index = 0;
  std::vector<HeadIndex> degenerate_heads;

  double at(std::size_t layer, std::size_t head) const { return scores[layer * n_heads + head]; }
};

/// IAV of one sample against an explicit patch map.
inline IavVector iav_against(const AnalysisBundle& bundle, std::size_t sample, std::int64_t class_index,
                             std::span<const double> attribution) {
  const std::size_t layers = bundle.dims.n_layers, heads = bundle.dims.n_heads;
  IavVector out;
  out.scores = Tensor({layers * heads});
  out.n_layers = layers;
  out.n_heads = heads;
  out.sample_index = sample;
  out.class_index = class_index;
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const HeadScore s = ia_score_checked(attribution, bundle.head_attention(sample, l, h));
      out.scores[l * heads + h] = s.value;
      if (s.degenerate) out.degenerate_heads.push_back({l, h});
    }
  }
  return out;
}

inline IavVector iav(const AnalysisBundle& bundle, std::size_t sample, std::int64_t class_index) {
  if (sample >= bundle.n_samples()) {
    fail(ErrorKind::IndexOutOfRange, "sample " + std::to_string(sample) + " of " + std::to_string(bundle.n_samples()));
  }
  return iav_against(bundle, sample, class_index, bundle.attribution_for(sample, class_index));
}

inline std::vector<IavVector> all_iavs(const AnalysisBundle& bundle, LabelMode mode) {
  std::vector<IavVector> out;
  out.reserve(bundle.n_samples());
  for (std::size_t i = 0; i < bundle.n_samples(); ++i) out.push_back(iav(bundle, i, bundle.target_class(i, mode)));
  return out;
}

struct GlobalIav {
  Tensor scores;  // [L * H]
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_samples = 0;
  LabelMode label_mode = LabelMode::Predicted;
  std::string baseline_tag = "self-attribution";
  std::size_t degenerate_count = 0;  // (sample, head) pairs scored by the zero convention

  double at(std::size_t layer, std::size_t head) const { return scores[layer * n_heads + head]; }

  /// Mean score over the heads of one layer.
  double layer_mean(std::size_t layer) const {
    return mean(scores.values().subspan(layer * n_heads, n_heads));
  }
};

/// Mean (not sum) of per-sample IAVs, accumulated in sample order.
inline GlobalIav average_iavs(const std::vector<IavVector>& iavs, std::size_t layers, std::size_t heads) {
  if (iavs.empty()) fail(ErrorKind::EmptyBundle, "no samples to average");
  GlobalIav out;
  out.n_layers = layers;
  out.n_heads = heads;
  out.n_samples = iavs.size();
  std::vector<double> sum(layers * heads, 0.0);
  for (const auto& v : iavs) {
    if (v.scores.size() != sum.size()) fail(ErrorKind::ShapeMismatch, "IAV lengths differ");
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v.scores[k];
    out.degenerate_count += v.degenerate_heads.size();
  }
  for (double& s : sum) s /= static_cast<double>(iavs.size());
  out.scores = Tensor::vector(std::move(sum));
  return out;
}

inline GlobalIav global_iav(const AnalysisBundle& bundle, LabelMode mode) {
  if (bundle.n_samples() == 0) fail(ErrorKind::EmptyBundle, "bundle has no samples");
  GlobalIav out = average_iavs(all_iavs(bundle, mode), bundle.dims.n_layers, bundle.dims.n_heads);
  out.label_mode = mode;
  return out;
}

// ---------------------------------------------------------------------------
// AAV

/// Replacement attribution for AAV: one shared map or one map per sample,
/// each already at patch resolution.
struct AavBaseline {
  std::vector<Tensor> maps;
  std::string tag = "external";

  bool shared() const { return maps.size() == 1; }
  std::span<const double> for_sample(std::size_t sample) const {
    return maps[shared() ? 0 : sample].values();
  }
};

inline AavBaseline make_baseline(const std::vector<AttributionMap>& maps, const AnalysisBundle& bundle,
                                 std::string tag) {
  if (maps.empty()) fail(ErrorKind::ShapeMismatch, "empty baseline");
  if (maps.size() != 1 && maps.size() != bundle.n_samples()) {
    fail(ErrorKind::ShapeMismatch, "baseline has " + std::to_string(maps.size()) + " maps for " +
                                       std::to_string(bundle.n_samples()) + " samples");
  }
  const auto& shape = bundle.dims.image_shape;
  const std::size_t rows = shape.size() == 3 ? shape[0] : 0;
  const std::size_t cols = shape.size() == 3 ? shape[1] : 0;
  AavBaseline out;
  out.tag = std::move(tag);
  for (const auto& m : maps) {
    out.maps.push_back(validate_external_attribution(m, bundle.dims.n_patches, rows, cols).values);
  }
  return out;
}

/// Interprets a baseline array: [P] or [rows, cols] shared; [N, P] or
/// [N, rows, cols] per sample.
inline AavBaseline baseline_from_tensor(const Tensor& t, const AnalysisBundle& bundle, std::string tag) {
  const BundleDims& d = bundle.dims;
  const bool has_image = d.image_shape.size() == 3;
  std::vector<AttributionMap> maps;
  auto take = [&](std::size_t index, Shape shape) {
    const std::size_t n = shape_size(shape);
    auto src = t.values().subspan(index * n, n);
    AttributionMap m;
    m.values = Tensor(std::move(shape), std::vector<double>(src.begin(), src.end()));
    m.method_tag = tag;
    maps.push_back(std::move(m));
  };
  if (t.rank() == 1 && t.dim(0) == d.n_patches) {
    take(0, {d.n_patches});
  } else if (t.rank() == 2 && t.dim(0) == d.n_samples && t.dim(1) == d.n_patches) {
    for (std::size_t i = 0; i < d.n_samples; ++i) take(i, {d.n_patches});
  } else if (has_image && t.rank() == 2 && t.dim(0) == d.image_shape[0] && t.dim(1) == d.image_shape[1]) {
    take(0, {t.dim(0), t.dim(1)});
  } else if (has_image && t.rank() == 3 && t.dim(0) == d.n_samples && t.dim(1) == d.image_shape[0] &&
             t.dim(2) == d.image_shape[1]) {
    for (std::size_t i = 0; i < d.n_samples; ++i) take(i, {t.dim(1), t.dim(2)});
  } else {
    fail(ErrorKind::ShapeMismatch, "baseline shape " + shape_string(t.shape()) + " fits neither patches nor image");
  }
  return make_baseline(maps, bundle, std::move(tag));
}

inline GlobalIav aav(const AnalysisBundle& bundle, const AavBaseline& baseline, LabelMode mode = LabelMode::Predicted) {
  if (bundle.n_samples() == 0) fail(ErrorKind::EmptyBundle, "bundle has no samples");
  if (baseline.maps.empty() || (!baseline.shared() && baseline.maps.size() != bundle.n_samples())) {
    fail(ErrorKind::ShapeMismatch, "baseline map count does not match the bundle");
  }
  std::vector<IavVector> iavs;
  iavs.reserve(bundle.n_samples());
  for (std::size_t i = 0; i < bundle.n_samples(); ++i) {
    auto map = baseline.for_sample(i);
    if (map.size() != bundle.dims.n_patches) fail(ErrorKind::ShapeMismatch, "baseline is not at patch resolution");
    iavs.push_back(iav_against(bundle, i, bundle.target_class(i, mode), map));
  }
  GlobalIav out = average_iavs(iavs, bundle.dims.n_layers, bundle.dims.n_heads);
  out.label_mode = mode;
  out.baseline_tag = baseline.tag;
  return out;
}

// ---------------------------------------------------------------------------
// Entropy

inline constexpr double kProbabilityTolerance = 1e-6;

/// Shannon entropy in nats, with 0 log 0 = 0. Result lies in [0, ln P].
inline double attention_entropy(std::span<const double> attention) {
  if (attention.empty()) fail(ErrorKind::NotAProbabilityVector, "empty attention vector");
  double sum = 0.0;
  for (double v : attention) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::NotAProbabilityVector, "negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kProbabilityTolerance) {
    fail(ErrorKind::NotAProbabilityVector, "entries sum to " + format_double(sum));
  }
  double h = 0.0;
  for (double v : attention) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(attention.size())));
}

struct EntropyProfile {
  Tensor mean;                  // [L, H]
  std::vector<Summary> heads;   // layer-major, one per head
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
};

inline EntropyProfile entropy_profile(const AnalysisBundle& bundle) {
  const std::size_t n = bundle.n_samples(), layers = bundle.dims.n_layers, heads = bundle.dims.n_heads;
  if (n == 0) fail(ErrorKind::EmptyBundle, "bundle has no samples");
  EntropyProfile out;
  out.mean = Tensor({layers, heads});
  out.n_layers = layers;
  out.n_heads = heads;
  std::vector<double> values(n);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) values[i] = attention_entropy(bundle.head_attention(i, l, h));
      Summary s = summarize(values);
      out.mean[l * heads + h] = s.mean;
      out.heads.push_back(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Head typing

enum class HeadType { High, Low };

inline std::string to_string(HeadType t) { return t == HeadType::High ? "High" : "Low"; }

inline constexpr double kHeadTypeThreshold = 0.5;

/// High when the median IA-Score is at least 0.5 (an exact 0.5 counts as High).
inline HeadType head_type_for_median(double median) {
  return median >= kHeadTypeThreshold ? HeadType::High : HeadType::Low;
}

struct HeadProfile {
  std::size_t layer = 0;
  std::size_t head = 0;
  Summary ia;                 // IA-Score distribution over samples
  double mean_entropy = 0.0;
  HeadType head_type = HeadType::Low;
};

inline std::vector<HeadProfile> classify_heads(const AnalysisBundle& bundle, LabelMode mode = LabelMode::Predicted) {
  const std::size_t n = bundle.n_samples(), layers = bundle.dims.n_layers, heads = bundle.dims.n_heads;
  if (n == 0) fail(ErrorKind::EmptyBundle, "bundle has no samples");
  const auto iavs = all_iavs(bundle, mode);
  std::vector<HeadProfile> out;
  std::vector<double> scores(n), entropies(n);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = iavs[i].at(l, h);
        entropies[i] = attention_entropy(bundle.head_attention(i, l, h));
      }
      HeadProfile p;
      p.layer = l;
      p.head = h;
      p.ia = summarize(scores);
      p.mean_entropy = summarize(entropies).mean;
      p.head_type = head_type_for_median(p.ia.median);
      out.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint dynamics

enum class DiffTarget { Attribution, Attention };

namespace detail {

/// L2 distance between unit-normalized vectors; a zero vector stays zero.
inline double normalized_distance(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = na > 0.0 ? a[k] / na : 0.0;
    const double y = nb > 0.0 ? b[k] / nb : 0.0;
    s += (x - y) * (x - y);
  }
  return std::sqrt(s);
}

}  // namespace detail

/// How far a checkpoint's maps are from the final model's, averaged over
/// samples (and, for attention, over all L * H heads first).
inline double checkpoint_diff(const AnalysisBundle& checkpoint, const AnalysisBundle& final_model, DiffTarget target) {
  const BundleDims& a = checkpoint.dims;
  const BundleDims& b = final_model.dims;
  if (a.n_samples != b.n_samples || a.n_layers != b.n_layers || a.n_heads != b.n_heads || a.n_patches != b.n_patches) {
    fail(ErrorKind::ShapeMismatch, "checkpoint and final bundles have different dimensions");
  }
  if (a.n_samples == 0) fail(ErrorKind::EmptyBundle, "bundle has no samples");
  if (checkpoint.labels != final_model.labels) {
    fail(ErrorKind::SampleOrderMismatch, "checkpoint and final bundles list different labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.n_samples; ++i) {
    if (target == DiffTarget::Attribution) {
      total += detail::normalized_distance(checkpoint.attribution.slice({i}), final_model.attribution.slice({i}));
    } else {
      double per_sample = 0.0;
      for (std::size_t l = 0; l < a.n_layers; ++l) {
        for (std::size_t h = 0; h < a.n_heads; ++h) {
          per_sample += detail::normalized_distance(checkpoint.head_attention(i, l, h), final_model.head_attention(i, l, h));
        }
      }
      total += per_sample / static_cast<double>(a.n_layers * a.n_heads);
    }
  }
  return total / static_cast<double>(a.n_samples);
}

// ---------------------------------------------------------------------------
// Export. Layer and head numbers are 1-based in every table.

inline std::string global_iav_csv(const GlobalIav& g) {
  std::ostringstream out;
  out << "layer,head,score\n";
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    for (std::size_t h = 0; h < g.n_heads; ++h) out << l + 1 << ',' << h + 1 << ',' << format_double(g.at(l, h)) << '\n';
  }
  return out.str();
}

inline std::string iav_csv(const std::vector<IavVector>& iavs) {
  std::ostringstream out;
  out << "sample_index,class_index,layer,head,score,degenerate\n";
  for (const auto& v : iavs) {
    for (std::size_t l = 0; l < v.n_layers; ++l) {
      for (std::size_t h = 0; h < v.n_heads; ++h) {
        const bool degenerate = std::find(v.degenerate_heads.begin(), v.degenerate_heads.end(), HeadIndex{l, h}) !=
                                v.degenerate_heads.end();
        out << v.sample_index << ',' << v.class_index << ',' << l + 1 << ',' << h + 1 << ','
            << format_double(v.at(l, h)) << ',' << (degenerate ? 1 : 0) << '\n';
      }
    }
  }
  return out.str();
}

inline std::string entropy_csv(const EntropyProfile& e) {
  std::ostringstream out;
  out << "layer,head,mean,median,q1,q3,min,max\n";
  for (std::size_t l = 0; l < e.n_layers; ++l) {
    for (std::size_t h = 0; h < e.n_heads; ++h) {
      const Summary& s = e.heads[l * e.n_heads + h];
      out << l + 1 << ',' << h + 1 << ',' << format_double(s.mean) << ',' << format_double(s.median) << ','
          << format_double(s.q1) << ',' << format_double(s.q3) << ',' << format_double(s.min) << ','
          << format_double(s.max) << '\n';
    }
  }
  return out.str();
}

inline std::string heads_csv(const std::vector<HeadProfile>& profiles) {
  std::ostringstream out;
  out << "layer,head,median,q1,q3,min,max,mean_entropy,head_type,mean,variance\n";
  for (const auto& p : profiles) {
    out << p.layer + 1 << ',' << p.head + 1 << ',' << format_double(p.ia.median) << ',' << format_double(p.ia.q1)
        << ',' << format_double(p.ia.q3) << ',' << format_double(p.ia.min) << ',' << format_double(p.ia.max) << ','
        << format_double(p.mean_entropy) << ',' << to_string(p.head_type) << ',' << format_double(p.ia.mean) << ','
        << format_double(p.ia.variance) << '\n';
  }
  return out.str();
}

inline nlohmann::json heads_json(const std::vector<HeadProfile>& profiles) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : profiles) {
    rows.push_back({{"layer", p.layer + 1},
                    {"head", p.head + 1},
                    {"median", p.ia.median},
                    {"q1", p.ia.q1},
                    {"q3", p.ia.q3},
                    {"min", p.ia.min},
                    {"max", p.ia.max},
                    {"mean", p.ia.mean},
                    {"variance", p.ia.variance},
                    {"mean_entropy", p.mean_entropy},
                    {"head_type", to_string(p.head_type)}});
  }
  return rows;
}

inline nlohmann::json global_iav_json(const GlobalIav& g) {
  return {{"n_layers", g.n_layers},
          {"n_heads", g.n_heads},
          {"n_samples", g.n_samples},
          {"label_mode", to_string(g.label_mode)},
          {"baseline_tag", g.baseline_tag},
          {"degenerate_count", g.degenerate_count},
          {"scores", g.scores.storage()}};
}

}  // namespace iavkit
