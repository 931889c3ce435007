// Scores one image end to end: toy ViT forward pass, occlusion attribution,
// and the per-head IA-Scores of the predicted class.

#include <iostream>

#include "iavkit/iavkit.hpp"

int main() {
  using namespace iavkit;

  ViTConfig cfg;  // 16x16x1 images, 4x4 patches, 2 layers of 2 heads
  const ViTModel model = init_model(cfg);

  Rng rng(stream_seed(7, 0));
  Tensor image(cfg.image_shape());
  for (double& v : image.values()) v = uniform01(rng);

  const ForwardResult out = forward(model, image);
  const std::size_t predicted = argmax(out.scores.values());
  const Tensor cls = extract_cls_attention(out.attention);  // [L, H, P]
  const AttributionMap attribution = occlusion_attribution(model, image, static_cast<std::int64_t>(predicted), 0.5);

  std::cout << "predicted class " << predicted << "\n";
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const double score = ia_score(attribution.values.values(), cls.slice({l, h}));
      const double entropy = attention_entropy(cls.slice({l, h}));
      std::cout << "layer " << l + 1 << " head " << h + 1 << ": IA-Score " << format_fixed(score, 4)
                << ", entropy " << format_fixed(entropy, 4) << "\n";
    }
  }
}
