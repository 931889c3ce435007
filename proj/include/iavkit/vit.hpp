#pragma once

// Forward-only miniature Vision Transformer with seeded random weights.
// Pre-norm encoder: x += MSA(LN(x)); x += MLP(LN(x)). The CLS token sits at
// position 0 and its final (layer-normalized) embedding feeds the classifier.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "iavkit/error.hpp"
#include "iavkit/npy.hpp"
#include "iavkit/random.hpp"
#include "iavkit/tensor.hpp"

namespace iavkit {

struct ViTConfig {
  std::size_t image_rows = 16;
  std::size_t image_cols = 16;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t embed_dim = 16;
  std::size_t n_classes = 10;
  std::size_t mlp_ratio = 4;
  std::uint64_t rng_seed = 0;

  std::size_t grid_rows() const { return image_rows / patch_size; }
  std::size_t grid_cols() const { return image_cols / patch_size; }
  std::size_t n_patches() const { return grid_rows() * grid_cols(); }
  std::size_t head_dim() const { return embed_dim / n_heads; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t hidden_dim() const { return embed_dim * mlp_ratio; }
  Shape image_shape() const { return {image_rows, image_cols, channels}; }

  void validate() const {
    auto bad = [](const std::string& why) { fail(ErrorKind::InvalidConfig, why); };
    if (image_rows == 0 || image_cols == 0 || channels == 0) bad("image dimensions must be positive");
    if (patch_size == 0) bad("patch_size must be positive");
    if (image_rows % patch_size || image_cols % patch_size) bad("image dimensions not divisible by patch_size");
    if (n_layers == 0 || n_heads == 0 || embed_dim == 0 || n_classes == 0 || mlp_ratio == 0) {
      bad("layer, head, embedding, class and mlp sizes must be positive");
    }
    if (embed_dim % n_heads) {
      bad("embed_dim " + std::to_string(embed_dim) + " not divisible by n_heads " + std::to_string(n_heads));
    }
  }
};

struct LayerWeights {
  Tensor query, key, value, output;  // [D, D]
  Tensor mlp_in;                     // [D, hidden]
  Tensor mlp_in_bias;                // [hidden]
  Tensor mlp_out;                    // [hidden, D]
  Tensor mlp_out_bias;               // [D]
};

struct ViTModel {
  ViTConfig config;
  Tensor patch_embedding;      // [patch_dim, D]
  Tensor cls_token;            // [D]
  Tensor position_embedding;   // [P + 1, D]
  std::vector<LayerWeights> layers;
  Tensor classifier;           // [D, n_classes]

  friend bool operator==(const ViTModel& a, const ViTModel& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (!(x.query == y.query && x.key == y.key && x.value == y.value && x.output == y.output &&
            x.mlp_in == y.mlp_in && x.mlp_in_bias == y.mlp_in_bias && x.mlp_out == y.mlp_out &&
            x.mlp_out_bias == y.mlp_out_bias)) {
        return false;
      }
    }
    return a.patch_embedding == b.patch_embedding && a.cls_token == b.cls_token &&
           a.position_embedding == b.position_embedding && a.classifier == b.classifier;
  }
};

struct ForwardResult {
  Tensor scores;     // [n_classes]
  Tensor attention;  // [L, H, P + 1, P + 1]
};

inline constexpr double kInitScale = 0.05;

/// Parameters are uniform in [-0.05, 0.05], drawn in declaration order from
/// a single mt19937_64 stream seeded with `config.rng_seed`.
inline ViTModel init_model(const ViTConfig& config) {
  config.validate();
  Rng rng(config.rng_seed);
  auto draw = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = uniform(rng, -kInitScale, kInitScale);
    return t;
  };
  const std::size_t d = config.embed_dim;
  ViTModel model;
  model.config = config;
  model.patch_embedding = draw({config.patch_dim(), d});
  model.cls_token = draw({d});
  model.position_embedding = draw({config.n_patches() + 1, d});
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights w;
    w.query = draw({d, d});
    w.key = draw({d, d});
    w.value = draw({d, d});
    w.output = draw({d, d});
    w.mlp_in = draw({d, config.hidden_dim()});
    w.mlp_in_bias = draw({config.hidden_dim()});
    w.mlp_out = draw({config.hidden_dim(), d});
    w.mlp_out_bias = draw({d});
    model.layers.push_back(std::move(w));
  }
  model.classifier = draw({d, config.n_classes});
  return model;
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-6;

/// Row-wise layer normalization without learned affine parameters.
inline Tensor layer_norm(const Tensor& x) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.values().subspan(i * d, d);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (row[j] - mu) * inv;
  }
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

}  // namespace detail

/// Flattens patch p of an image into (row, col, channel) order.
inline std::vector<double> patch_vector(const Tensor& image, const ViTConfig& config, std::size_t patch) {
  const std::size_t ps = config.patch_size, ch = config.channels, cols = config.image_cols;
  const std::size_t pr = patch / config.grid_cols(), pc = patch % config.grid_cols();
  std::vector<double> out;
  out.reserve(config.patch_dim());
  for (std::size_t i = 0; i < ps; ++i) {
    for (std::size_t j = 0; j < ps; ++j) {
      const std::size_t base = ((pr * ps + i) * cols + (pc * ps + j)) * ch;
      for (std::size_t c = 0; c < ch; ++c) out.push_back(image[base + c]);
    }
  }
  return out;
}

inline ForwardResult forward(const ViTModel& model, const Tensor& image) {
  const ViTConfig& cfg = model.config;
  if (image.shape() != cfg.image_shape()) {
    fail(ErrorKind::ShapeMismatch, "image shape " + shape_string(image.shape()) + ", model expects " +
                                       shape_string(cfg.image_shape()));
  }
  const std::size_t d = cfg.embed_dim, p = cfg.n_patches(), tokens = p + 1;
  const std::size_t heads = cfg.n_heads, dh = cfg.head_dim();

  Tensor patches({p, cfg.patch_dim()});
  for (std::size_t k = 0; k < p; ++k) {
    const auto v = patch_vector(image, cfg, k);
    std::copy(v.begin(), v.end(), patches.values().begin() + static_cast<std::ptrdiff_t>(k * cfg.patch_dim()));
  }
  const Tensor embedded = matmul(patches, model.patch_embedding);

  Tensor x({tokens, d});
  for (std::size_t j = 0; j < d; ++j) x[j] = model.cls_token[j] + model.position_embedding[j];
  for (std::size_t t = 1; t < tokens; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      x[t * d + j] = embedded[(t - 1) * d + j] + model.position_embedding[t * d + j];
    }
  }

  Tensor attention({cfg.n_layers, heads, tokens, tokens});
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> logits(tokens);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = model.layers[l];
    const Tensor normed = detail::layer_norm(x);
    const Tensor q = matmul(normed, w.query);
    const Tensor k = matmul(normed, w.key);
    const Tensor v = matmul(normed, w.value);
    Tensor mixed({tokens, d});
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      auto head_attn = attention.slice({l, h});
      for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j < tokens; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += q[i * d + off + e] * k[j * d + off + e];
          logits[j] = s * scale;
        }
        const auto probs = softmax(logits);
        std::copy(probs.begin(), probs.end(), head_attn.begin() + static_cast<std::ptrdiff_t>(i * tokens));
        for (std::size_t e = 0; e < dh; ++e) {
          double s = 0.0;
          for (std::size_t j = 0; j < tokens; ++j) s += probs[j] * v[j * d + off + e];
          mixed[i * d + off + e] = s;
        }
      }
    }
    const Tensor projected = matmul(mixed, w.output);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += projected[i];

    const Tensor normed2 = detail::layer_norm(x);
    Tensor hidden = matmul(normed2, w.mlp_in);
    const std::size_t hd = cfg.hidden_dim();
    for (std::size_t i = 0; i < tokens; ++i) {
      for (std::size_t j = 0; j < hd; ++j) hidden[i * hd + j] = detail::gelu(hidden[i * hd + j] + w.mlp_in_bias[j]);
    }
    const Tensor mlp = matmul(hidden, w.mlp_out);
    for (std::size_t i = 0; i < tokens; ++i) {
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] += mlp[i * d + j] + w.mlp_out_bias[j];
    }
  }

  const Tensor cls({1, d}, std::vector<double>(x.values().begin(), x.values().begin() + static_cast<std::ptrdiff_t>(d)));
  Tensor scores = matmul(detail::layer_norm(cls), model.classifier).reshaped({cfg.n_classes});
  scores.check_finite();
  return {std::move(scores), std::move(attention)};
}

enum class ClsHandling {
  DropAndRenormalize,  // default: patch entries of the CLS row, rescaled to sum to 1
  Raw,                 // patch entries as-is; their sum is 1 minus the CLS->CLS mass
};

inline constexpr double kDegenerateRowMass = 1e-12;

/// CLS-query attention over image patches, [L, H, P + 1, P + 1] -> [L, H, P].
inline Tensor extract_cls_attention(const Tensor& attention, ClsHandling handling = ClsHandling::DropAndRenormalize) {
  if (attention.rank() != 4 || attention.dim(2) != attention.dim(3) || attention.dim(2) < 2) {
    fail(ErrorKind::ShapeMismatch, "expected [L, H, P+1, P+1] attention, got " + shape_string(attention.shape()));
  }
  const std::size_t layers = attention.dim(0), heads = attention.dim(1), p = attention.dim(2) - 1;
  Tensor out({layers, heads, p});
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      auto cls_row = attention.slice({l, h, 0});
      auto dst = out.slice({l, h});
      double mass = 0.0;
      for (std::size_t j = 0; j < p; ++j) mass += cls_row[j + 1];
      if (mass < kDegenerateRowMass) {
        fail(ErrorKind::DegenerateRow, "CLS token of layer " + std::to_string(l) + " head " + std::to_string(h) +
                                           " attends only to itself");
      }
      const double div = handling == ClsHandling::DropAndRenormalize ? mass : 1.0;
      for (std::size_t j = 0; j < p; ++j) dst[j] = cls_row[j + 1] / div;
    }
  }
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) fail(ErrorKind::ShapeMismatch, "argmax of empty vector");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Model directory: manifest.json + one NPY file per parameter tensor.

namespace detail {

template <typename Fn>
void for_each_parameter(ViTModel& model, Fn&& fn) {
  fn("patch_embedding", model.patch_embedding);
  fn("cls_token", model.cls_token);
  fn("position_embedding", model.position_embedding);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& w = model.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    fn(prefix + "query", w.query);
    fn(prefix + "key", w.key);
    fn(prefix + "value", w.value);
    fn(prefix + "output", w.output);
    fn(prefix + "mlp_in", w.mlp_in);
    fn(prefix + "mlp_in_bias", w.mlp_in_bias);
    fn(prefix + "mlp_out", w.mlp_out);
    fn(prefix + "mlp_out_bias", w.mlp_out_bias);
  }
  fn("classifier", model.classifier);
}

}  // namespace detail

inline nlohmann::json config_to_json(const ViTConfig& c) {
  return {{"image_shape", {c.image_rows, c.image_cols, c.channels}},
          {"patch_size", c.patch_size},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"embed_dim", c.embed_dim},
          {"n_classes", c.n_classes},
          {"mlp_ratio", c.mlp_ratio},
          {"rng_seed", c.rng_seed}};
}

inline ViTConfig config_from_json(const nlohmann::json& j) {
  ViTConfig c;
  try {
    const auto shape = j.at("image_shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) fail(ErrorKind::InvalidConfig, "image_shape must have three entries");
    c.image_rows = shape[0];
    c.image_cols = shape[1];
    c.channels = shape[2];
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.mlp_ratio = j.value("mlp_ratio", std::size_t{4});
    c.rng_seed = j.value("rng_seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

inline void save_model(const ViTModel& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) fail(ErrorKind::IoFailure, "cannot create " + dir.string());
  nlohmann::json files = nlohmann::json::object();
  ViTModel copy = model;
  detail::for_each_parameter(copy, [&](const std::string& name, Tensor& t) {
    const auto bytes = npy::encode(t);
    npy::write_file_atomic(dir / (name + ".npy"), bytes);
    files[name] = {{"path", name + ".npy"}, {"shape", t.shape()}, {"crc32", npy::crc32_hex(npy::crc32(bytes))}};
  });
  nlohmann::json manifest = {{"format_version", "1.0"}, {"config", config_to_json(model.config)}, {"files", files}};
  npy::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline ViTModel load_model(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::is_regular_file(manifest_path)) {
    fail(ErrorKind::ManifestMissing, "no manifest.json in model directory " + dir.string());
  }
  const auto text = npy::read_file(manifest_path);
  const nlohmann::json manifest = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("config") || !manifest.contains("files")) {
    fail(ErrorKind::InvalidConfig, "malformed model manifest in " + dir.string());
  }
  ViTModel model = init_model(config_from_json(manifest.at("config")));
  const auto& files = manifest.at("files");
  detail::for_each_parameter(model, [&](const std::string& name, Tensor& t) {
    if (!files.contains(name)) fail(ErrorKind::ManifestMissing, "model manifest lacks " + name);
    const auto path = dir / files.at(name).at("path").get<std::string>();
    const auto bytes = npy::read_file(path);
    if (npy::crc32_hex(npy::crc32(bytes)) != files.at(name).at("crc32").get<std::string>()) {
      fail(ErrorKind::ChecksumMismatch, path.string());
    }
    Tensor loaded = npy::to_tensor(npy::decode(bytes, path.string()), name);
    if (loaded.shape() != t.shape()) fail(ErrorKind::ShapeMismatch, name + " shape " + shape_string(loaded.shape()));
    t = std::move(loaded);
  });
  return model;
}

}  // namespace iavkit
