#include <gtest/gtest.h>

#include "iavkit/vit.hpp"
#include "test_support.hpp"

using namespace iavkit;
namespace fx = iavkit::fixtures;

namespace {

ViTConfig toy_config(std::uint64_t seed = 1) {
  ViTConfig c;
  c.image_rows = 16;
  c.image_cols = 16;
  c.channels = 1;
  c.patch_size = 4;
  c.n_layers = 2;
  c.n_heads = 2;
  c.embed_dim = 16;
  c.n_classes = 4;
  c.rng_seed = seed;
  return c;
}

Tensor random_image(const ViTConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor image(c.image_shape());
  for (double& v : image.values()) v = uniform01(rng);
  return image;
}

}  // namespace

TEST(ViT, InitIsDeterministic) {
  EXPECT_EQ(init_model(toy_config(5)), init_model(toy_config(5)));
  EXPECT_FALSE(init_model(toy_config(5)) == init_model(toy_config(6)));
}

TEST(ViT, InitRangeAndShapes) {
  const ViTModel m = init_model(toy_config());
  EXPECT_EQ(m.patch_embedding.shape(), (Shape{16, 16}));
  EXPECT_EQ(m.position_embedding.shape(), (Shape{17, 16}));
  EXPECT_EQ(m.classifier.shape(), (Shape{16, 4}));
  ASSERT_EQ(m.layers.size(), 2u);
  for (double v : m.layers[1].mlp_in.values()) {
    EXPECT_GE(v, -0.05);
    EXPECT_LE(v, 0.05);
  }
}

TEST(ViT, InvalidConfig) {
  ViTConfig c = toy_config();
  c.embed_dim = 6;
  c.n_heads = 4;
  try {
    init_model(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
  c = toy_config();
  c.image_rows = 15;
  EXPECT_THROW(init_model(c), Error);
}

TEST(ViT, AttentionRowsAreProbabilityVectors) {
  const ViTConfig c = toy_config(3);
  const ViTModel m = init_model(c);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ForwardResult r = forward(m, random_image(c, s));
    ASSERT_EQ(r.attention.shape(), (Shape{2, 2, 17, 17}));
    for (std::size_t row = 0; row < r.attention.size() / 17; ++row) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 17; ++j) {
        const double v = r.attention[row * 17 + j];
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    EXPECT_EQ(r.scores.shape(), (Shape{4}));
  }
}

TEST(ViT, ForwardIsBitDeterministic) {
  const ViTConfig c = toy_config(8);
  const ViTModel m = init_model(c);
  const Tensor image = random_image(c, 2);
  const ForwardResult a = forward(m, image);
  const ForwardResult b = forward(m, image);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.attention, b.attention);
}

TEST(ViT, DifferentInputsGiveDifferentScores) {
  const ViTConfig c = toy_config(1);
  const ViTModel m = init_model(c);
  const Tensor zero(c.image_shape());
  Tensor one_hot(c.image_shape());
  one_hot.at(5, 7, 0) = 1.0;
  EXPECT_FALSE(forward(m, zero).scores == forward(m, one_hot).scores);
}

TEST(ViT, ShapeMismatch) {
  const ViTModel m = init_model(toy_config());
  try {
    forward(m, Tensor({16, 16, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(ExtractCls, Examples) {
  // L = H = 1, P = 2: only row 0 matters.
  Tensor a({1, 1, 3, 3}, {0.2, 0.4, 0.4, 1, 0, 0, 1, 0, 0});
  EXPECT_EQ(extract_cls_attention(a), Tensor({1, 1, 2}, {0.5, 0.5}));
  Tensor b({1, 1, 3, 3}, {0.0, 1.0, 0.0, 1, 0, 0, 1, 0, 0});
  EXPECT_EQ(extract_cls_attention(b), Tensor({1, 1, 2}, {1.0, 0.0}));
  Tensor c({1, 1, 3, 3}, {1.0, 0.0, 0.0, 1, 0, 0, 1, 0, 0});
  try {
    extract_cls_attention(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateRow);
  }
}

TEST(ExtractCls, RawModeKeepsPatchMass) {
  Tensor a({1, 1, 3, 3}, {0.2, 0.4, 0.4, 1, 0, 0, 1, 0, 0});
  EXPECT_EQ(extract_cls_attention(a, ClsHandling::Raw), Tensor({1, 1, 2}, {0.4, 0.4}));
}

TEST(ExtractCls, OutputsProbabilityVectors) {
  const ViTConfig c = toy_config(4);
  const ViTModel m = init_model(c);
  const Tensor cls = extract_cls_attention(forward(m, random_image(c, 9)).attention);
  ASSERT_EQ(cls.shape(), (Shape{2, 2, 16}));
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      double s = 0.0;
      for (double v : cls.slice({l, h})) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(ViT, PatchPermutationWithoutPositionEmbeddings) {
  const ViTConfig c = toy_config(12);
  ViTModel m = init_model(c);
  for (double& v : m.position_embedding.values()) v = 0.0;
  const Tensor image = random_image(c, 4);
  const std::size_t p = c.n_patches(), ps = c.patch_size, gc = c.grid_cols();

  // Random permutation of patches: output patch k takes input patch perm[k].
  Rng rng(99);
  std::vector<std::size_t> perm(p);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = p - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
  Tensor shuffled(c.image_shape());
  for (std::size_t k = 0; k < p; ++k) {
    const std::size_t src = perm[k];
    for (std::size_t i = 0; i < ps; ++i) {
      for (std::size_t j = 0; j < ps; ++j) {
        shuffled.at((k / gc) * ps + i, (k % gc) * ps + j, 0) = image.at((src / gc) * ps + i, (src % gc) * ps + j, 0);
      }
    }
  }
  const Tensor a = extract_cls_attention(forward(m, image).attention);
  const Tensor b = extract_cls_attention(forward(m, shuffled).attention);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      for (std::size_t k = 0; k < p; ++k) EXPECT_NEAR(b.at(l, h, k), a.at(l, h, perm[k]), 1e-12);
    }
  }
}

TEST(ViT, ModelSaveLoadRoundTrip) {
  const auto dir = fx::temp_dir("model");
  const ViTModel m = init_model(toy_config(21));
  save_model(m, dir);
  EXPECT_EQ(load_model(dir), m);
  EXPECT_THROW(load_model(fx::temp_dir("no_model")), Error);
}
