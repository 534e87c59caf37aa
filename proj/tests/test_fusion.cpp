#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dnet/fusion.hpp"
#include "support.hpp"

using namespace dnet;
using dnet::test::gradcheck;
using dnet::test::psi_oracle;
using dnet::test::project;
using dnet::test::random_tensor;
using dnet::test::TD;
using TF = Tensor<float>;

namespace {

template <class T>
void zero_all(const FusionParams<T>& p) {
  for (const auto& mlp : p.descriptors)
    for (const auto& l : mlp.layers) {
      std::fill(l.weight.mutable_data().begin(), l.weight.mutable_data().end(), T(0));
      std::fill(l.bias.mutable_data().begin(), l.bias.mutable_data().end(), T(0));
    }
}

std::vector<TF> random_features(std::size_t b, std::size_t w, std::mt19937_64& rng) {
  std::vector<TF> out;
  for (std::size_t m = 0; m < b; ++m) out.push_back(random_tensor<float>({w}, rng, false, 0, 2));
  return out;
}

}  // namespace

TEST(FusionWeights, EqualDescriptorsGiveThirds) {
  Rng init(1);
  FusionParams<float> p(3, 16, 8, init);
  zero_all(p);
  std::mt19937_64 rng(2);
  const auto psi = fusion_weights(random_features(3, 16, rng), p);
  ASSERT_EQ(psi.shape(), (Shape{3, 16}));
  for (float v : psi.values()) EXPECT_NEAR(v, 1.0 / 3, 1e-7);
}

TEST(FusionWeights, Saturation) {
  Rng init(3);
  FusionParams<double> p(3, 8, 4, init);
  zero_all(p);
  auto& bias = p.descriptors[0].layers[1].bias;
  std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), 20.0);
  std::mt19937_64 rng(4);
  std::vector<TD> f;
  for (int m = 0; m < 3; ++m) f.push_back(random_tensor({8}, rng, false));
  const auto psi = fusion_weights(f, p);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_GT(psi.at(0, c), 1 - 1e-8);
}

TEST(FusionWeights, MatchesOracleAndNormalizes) {
  std::mt19937_64 rng(5);
  for (int s = 0; s < 60; ++s) {
    const std::size_t b = 1 + s % 3, w = 4 + s % 29, hid = 2 + s % 11;
    Rng init(s);
    FusionParams<float> p(b, w, hid, init);
    const auto feats = random_features(b, w, rng);
    const auto psi = fusion_weights(feats, p);
    const auto ref = psi_oracle(feats, p);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(psi[i], ref[i], 1e-6) << "instance " << s;
    for (std::size_t c = 0; c < w; ++c) {
      double total = 0;
      for (std::size_t m = 0; m < b; ++m) {
        total += psi.at(m, c);
        EXPECT_GT(psi.at(m, c), 0.f);
        if (b > 1) {
          EXPECT_LT(psi.at(m, c), 1.f);
        }
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Fuse, Examples) {
  const TF a({3}, {1, 2, 3}), b({3}, {4, 5, 6}), c({3}, {7, 8, 9});
  const TF selector({3, 3}, {1, 1, 1, 0, 0, 0, 0, 0, 0});
  EXPECT_EQ(fuse(selector, {a, b, c}).values(), a.values());
  const TF third = TF::full({3, 1}, 1.f / 3);
  const auto one = fuse(third, {TF({1}, {3}), TF({1}, {0}), TF({1}, {0})});
  EXPECT_NEAR(one[0], 1.0f, 1e-6);
  std::mt19937_64 rng(6);
  Rng init(7);
  FusionParams<float> p(3, 3, 4, init);
  const auto psi = fusion_weights({a, b, c}, p);
  const auto same = fuse(psi, {a, a, a});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(same[i], a[i], 1e-6);
}

TEST(Fuse, MatchesOracleAndStaysInConvexHull) {
  std::mt19937_64 rng(8);
  for (int s = 0; s < 60; ++s) {
    const std::size_t w = 3 + s % 40;
    Rng init(s);
    FusionParams<float> p(3, w, 8, init);
    const auto feats = random_features(3, w, rng);
    const auto psi = fusion_weights(feats, p);
    const auto fg = fuse(psi, feats);
    for (std::size_t c = 0; c < w; ++c) {
      double ref = 0;
      float lo = INFINITY, hi = -INFINITY;
      for (std::size_t m = 0; m < 3; ++m) {
        ref += double(psi.at(m, c)) * feats[m][c];
        lo = std::min(lo, feats[m][c]);
        hi = std::max(hi, feats[m][c]);
      }
      EXPECT_NEAR(fg[c], ref, 1e-5) << "instance " << s;
      EXPECT_GE(fg[c], lo - 1e-6f);
      EXPECT_LE(fg[c], hi + 1e-6f);
    }
  }
}

// With one descriptor network shared by all branches, exchanging the
// branches permutes the rows of psi and leaves f_g unchanged.
TEST(Fuse, ExchangeSymmetryWithSharedParameters) {
  std::mt19937_64 rng(9);
  Rng init(10);
  FusionParams<float> p(3, 24, 8, init);
  p.descriptors[1] = p.descriptors[0];
  p.descriptors[2] = p.descriptors[0];
  const auto f = random_features(3, 24, rng);
  const std::vector<TF> swapped{f[2], f[0], f[1]};
  const auto psi = fusion_weights(f, p), psi_s = fusion_weights(swapped, p);
  for (std::size_t c = 0; c < 24; ++c) {
    EXPECT_EQ(psi_s.at(0, c), psi.at(2, c));
    EXPECT_EQ(psi_s.at(1, c), psi.at(0, c));
  }
  const auto a = fuse(psi, f), b = fuse(psi_s, swapped);
  for (std::size_t c = 0; c < 24; ++c) EXPECT_NEAR(a[c], b[c], 1e-6);
}

TEST(Fuse, Gradients) {
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 rng(100 + s);
    Rng init(s);
    FusionParams<double> p(3, 6, 4, init);
    std::vector<TD> feats;
    for (int m = 0; m < 3; ++m) feats.push_back(random_tensor({6}, rng, true, 0, 2));
    ParameterList<double> named;
    p.collect(named, "f");
    std::vector<TD> params(feats);
    for (auto& n : named) params.push_back(n.tensor);
    const auto rep = gradcheck(params, [&] { return project(fuse(fusion_weights(feats, p), feats), s); });
    EXPECT_GT(rep.checked, 0u);
    EXPECT_LE(rep.worst, 1e-3) << rep.worst_at;
  }
}

TEST(Fuse, WidthMismatch) {
  Rng init(11);
  FusionParams<float> p(3, 4, 2, init);
  EXPECT_THROW(fusion_weights({TF::zeros({4}), TF::zeros({4}), TF::zeros({5})}, p), DimensionError);
  EXPECT_THROW(fusion_weights({TF::zeros({4}), TF::zeros({4})}, p), DimensionError);
  EXPECT_THROW(fuse(TF::zeros({3, 4}), {TF::zeros({4}), TF::zeros({4}), TF::zeros({3})}), DimensionError);
  EXPECT_THROW(fuse(TF::zeros({2, 4}), {TF::zeros({4}), TF::zeros({4}), TF::zeros({4})}), DimensionError);
}

TEST(FixedFusion, MaxMeanConcat) {
  const TF a({2}, {1, 5}), b({2}, {3, 2}), c({2}, {2, 2});
  EXPECT_EQ(fuse_fixed<float>({a, b, c}, FusionMode::max).values(), (std::vector<float>{3, 5}));
  const auto mean = fuse_fixed<float>({a, b, c}, FusionMode::mean);
  EXPECT_NEAR(mean[0], 2.0f, 1e-6);
  EXPECT_NEAR(mean[1], 3.0f, 1e-6);
  EXPECT_EQ(fuse_fixed<float>({a, b, c}, FusionMode::concat).values(), (std::vector<float>{1, 5, 3, 2, 2, 2}));
  EXPECT_THROW(fuse_fixed<float>({a, b}, FusionMode::learned), ParameterError);
}
