#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "iavkit/random.hpp"
#include "iavkit/tensor.hpp"
#include "test_support.hpp"

using namespace iavkit;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an iavkit::Error";
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(Tensor, RejectsNonFiniteAndBadShapes) {
  EXPECT_EQ(kind_of([] { Tensor({2}, {1.0, std::nan("")}); }), ErrorKind::NonFinite);
  EXPECT_EQ(kind_of([] { Tensor({2}, {1.0, std::numeric_limits<double>::infinity()}); }), ErrorKind::NonFinite);
  EXPECT_EQ(kind_of([] { Tensor({3}, {1.0, 2.0}); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([] { Tensor({2, 0}); }), ErrorKind::ShapeMismatch);
}

TEST(Tensor, RowMajorIndexingAndSlices) {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at(1, 2), 5.0);
  auto s = t.slice({1});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], 3.0);
  EXPECT_EQ(kind_of([&] { (void)t.at(2, 0); }), ErrorKind::IndexOutOfRange);
}

TEST(Cosine, Examples) {
  EXPECT_EQ(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})), 0.0);
  EXPECT_NEAR(cosine_similarity(Tensor::vector({2, 3, 5}), Tensor::vector({2, 3, 5})), 1.0, 1e-15);
  // (3*4 + 4*3) / (5 * 5)
  EXPECT_NEAR(cosine_similarity(Tensor::vector({3, 4}), Tensor::vector({4, 3})), 24.0 / 25.0, 1e-15);
}

TEST(Cosine, ZeroVectorIsAnError) {
  EXPECT_EQ(kind_of([] { cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({1, 0})); }), ErrorKind::ZeroVector);
  EXPECT_EQ(kind_of([] { cosine_similarity(Tensor::vector({1}), Tensor::vector({1, 0})); }), ErrorKind::ShapeMismatch);
}

TEST(Cosine, ScaleInvariantAndSymmetric) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 20);
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = uniform(rng, -1, 1);
    for (auto& x : b) x = uniform(rng, -1, 1);
    const double s = std::exp(uniform(rng, -5, 5));
    std::vector<double> sa = a;
    for (auto& x : sa) x *= s;
    const double c = cosine_similarity(a, b);
    EXPECT_NEAR(cosine_similarity(sa, b), c, 1e-12);
    EXPECT_EQ(cosine_similarity(b, a), c);
    EXPECT_NEAR(c, fixtures::oracle_cosine(a, b), 1e-12);
  }
}

TEST(L2Normalize, Examples) {
  const Tensor v = l2_normalize(Tensor::vector({3, 4}));
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
  EXPECT_EQ(l2_normalize(Tensor::vector({1, 0, 0})), Tensor::vector({1, 0, 0}));
  EXPECT_EQ(kind_of([] { l2_normalize(Tensor::vector({0, 0})); }), ErrorKind::ZeroVector);
}

TEST(L2Normalize, UnitNormProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + uniform_index(rng, 50));
    for (auto& x : v) x = uniform(rng, -100, 100);
    EXPECT_NEAR(l2_norm(l2_normalize(v)), 1.0, 1e-12);
  }
}

TEST(PoolToPatches, Examples) {
  EXPECT_EQ(pool_to_patches(Tensor::filled({4, 4}, 1.0), 2), Tensor::vector({1, 1, 1, 1}));
  const Tensor m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(pool_to_patches(m, 1), Tensor::vector({1, 2, 3, 4}));
  EXPECT_EQ(pool_to_patches(m, 2), Tensor::vector({2.5}));
  EXPECT_EQ(kind_of([&] { pool_to_patches(Tensor({3, 4}), 2); }), ErrorKind::ShapeMismatch);
}

TEST(PoolToPatches, RowMajorPatchOrder) {
  // 2x4 map, patch 2: left patch then right patch.
  const Tensor m({2, 4}, {1, 1, 5, 5, 1, 1, 5, 5});
  EXPECT_EQ(pool_to_patches(m, 2), Tensor::vector({1, 5}));
  // 4x2 map, patch 2: top patch then bottom patch.
  const Tensor t({4, 2}, {1, 1, 1, 1, 7, 7, 7, 7});
  EXPECT_EQ(pool_to_patches(t, 2), Tensor::vector({1, 7}));
}

TEST(PoolToPatches, PreservesGlobalMean) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ps = 1 + uniform_index(rng, 4);
    const std::size_t r = ps * (1 + uniform_index(rng, 5)), c = ps * (1 + uniform_index(rng, 5));
    Tensor m({r, c});
    for (double& x : m.values()) x = uniform(rng, 0, 10);
    const Tensor pooled = pool_to_patches(m, ps);
    EXPECT_NEAR(mean(pooled.values()), mean(m.values()), 1e-12);
  }
}

TEST(Softmax, Examples) {
  const Tensor a = softmax(Tensor::vector({0, 0}));
  EXPECT_EQ(a[0], 0.5);
  EXPECT_EQ(a[1], 0.5);
  const Tensor b = softmax(Tensor::vector({1000, 1000, 1000}));
  for (double x : b.values()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
  const Tensor c = softmax(Tensor::vector({0, std::log(3.0)}));
  EXPECT_NEAR(c[0], 0.25, 1e-15);
  EXPECT_NEAR(c[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + uniform_index(rng, 30));
    for (auto& x : v) x = uniform(rng, -50, 50);
    const auto p = softmax(v);
    double s = 0.0;
    for (double x : p) {
      EXPECT_GT(x, 0.0 - 1e-300);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const double shift = uniform(rng, -100, 100);
    std::vector<double> w = v;
    for (auto& x : w) x += shift;
    const auto q = softmax(w);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Matmul, SmallProduct) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {5, 6});
  EXPECT_EQ(matmul(a, b), Tensor({2, 1}, {17, 39}));
}
