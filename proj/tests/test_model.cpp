#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dnet/checkpoint.hpp"
#include "dnet/model.hpp"
#include "dnet/synth.hpp"
#include "dnet/training.hpp"
#include "support.hpp"

using namespace dnet;
using dnet::test::gradcheck;
using dnet::test::TD;
using TF = Tensor<float>;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.num_classes = 4;
  c.sgc.widths = {16, 16};
  c.sgc.k = 8;
  c.sgc.lift_width = 32;
  c.sps.dim = 16;
  c.transform = {16, 16, 16};
  c.fusion.hidden = 16;
  c.head_widths = {16};
  return c;
}

// The smallest network that still has every component.
ModelConfig tiny_config() {
  ModelConfig c;
  c.num_classes = 3;
  c.n1 = 4;
  c.sgc.widths = {8, 8};
  c.sgc.k = 3;
  c.sgc.lift_width = 8;
  c.sps.dim = 4;
  c.transform = {8, 8, 8};
  c.fusion.hidden = 4;
  c.head_widths = {8};
  c.dropout = 0;
  return c;
}

PointCloud shape(std::size_t kind, std::size_t n, std::uint64_t seed) {
  return synth_generate(kAllShapeKinds[kind % kAllShapeKinds.size()], n, 0.01, seed);
}

PointCloud permuted(const PointCloud& c, const IndexList& perm) {
  PointCloud out;
  out.label = c.label;
  for (auto i : perm) {
    for (int d = 0; d < 3; ++d) out.points.push_back(c.points[3 * i + d]);
    if (!c.normals.empty())
      for (int d = 0; d < 3; ++d) out.normals.push_back(c.normals[3 * i + d]);
    if (!c.part_labels.empty()) out.part_labels.push_back(c.part_labels[i]);
  }
  return out;
}

IndexList random_perm(std::size_t n, std::mt19937_64& rng) {
  IndexList p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Moves every parameter off its initial value so that zero-initialized
// layers (gates, alignment output) take part in gradient checks.
template <class T>
void jiggle(const DNet<T>& model, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : model.parameters())
    for (auto& v : p.mutable_data()) v += static_cast<T>(u(rng));
}

}  // namespace

TEST(Model, OutputShapes) {
  DNet<float> model(small_config(), 1);
  const auto tr = model.forward(shape(0, 128, 2));
  EXPECT_EQ(tr.logits.shape(), (Shape{4}));
  ASSERT_TRUE(tr.alpha.has_value());
  EXPECT_EQ(tr.alpha->shape(), (Shape{128}));
  EXPECT_EQ(tr.idx_high.size(), 40u);  // round(0.3125 * 128)
  EXPECT_EQ(tr.branches.size(), 3u);
  ASSERT_TRUE(tr.psi.has_value());
  EXPECT_EQ(tr.psi->shape(), (Shape{3, 32}));
  EXPECT_EQ(tr.global_feature.shape(), (Shape{32}));
  EXPECT_EQ(tr.branches[1].point_features.dim(0), 40u);
}

// Attentive sampling has no start point, so the whole network is
// invariant to the order of the input points.
TEST(Model, PermutationInvariant) {
  DNet<float> model(small_config(), 3);
  std::mt19937_64 rng(4);
  for (int s = 0; s < 50; ++s) {
    const auto cloud = shape(s, 96, 100 + s);
    const auto a = classify_forward(model, cloud, false);
    const auto b = classify_forward(model, permuted(cloud, random_perm(96, rng)), false);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(a[c], b[c], 1e-5) << "perm " << s;
  }
}

TEST(Model, ZeroFinalLayerIsUniform) {
  DNet<float> model(small_config(), 5);
  const auto& last = model.head().layers.back();
  std::fill(last.weight.mutable_data().begin(), last.weight.mutable_data().end(), 0.f);
  std::fill(last.bias.mutable_data().begin(), last.bias.mutable_data().end(), 0.f);
  const auto probs = softmax(reshape(classify_forward(model, shape(1, 64, 6), false), {1, 4}), 1);
  for (float p : probs.values()) EXPECT_NEAR(p, 0.25f, 1e-7);
}

TEST(Model, TranslationAndScaleDoNotChangeScores) {
  DNet<float> model(small_config(), 7);
  for (int s = 0; s < 10; ++s) {
    const auto cloud = shape(s, 80, 200 + s);
    auto moved = cloud;
    for (std::size_t i = 0; i < moved.points.size(); ++i) moved.points[i] = 3.f * moved.points[i] + float(i % 3) - 5.f;
    const auto a = model.forward(cloud), b = model.forward(moved);
    for (std::size_t i = 0; i < 80; ++i) EXPECT_NEAR((*a.alpha)[i], (*b.alpha)[i], 1e-5);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(a.logits[c], b.logits[c], 1e-4);
  }
}

TEST(Model, SegmentationShapeAndEquivariance) {
  auto cfg = small_config();
  cfg.num_part_classes = 2;
  cfg.seg_widths = {16};
  DNet<float> model(cfg, 8);
  std::mt19937_64 rng(9);
  const auto cloud = synth_sphere_spike(100, 0.01, 10);
  const auto perm = random_perm(100, rng);
  const auto a = segment_forward(model, cloud, false), b = segment_forward(model, permuted(cloud, perm), false);
  ASSERT_EQ(a.shape(), (Shape{100, 2}));
  for (std::size_t m = 0; m < 100; ++m)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(b.at(m, c), a.at(perm[m], c), 1e-5);
  DNet<float> plain(small_config(), 8);
  EXPECT_THROW(segment_forward(plain, cloud, false), ConfigError);
}

TEST(Model, Preconditions) {
  DNet<float> model(small_config(), 11);
  EXPECT_THROW(model.forward(shape(0, 8, 1)), ParameterError);  // N <= k
  auto cfg = small_config();
  cfg.sampling = Sampling::fps;
  cfg.n1 = 30;
  DNet<float> fps_model(cfg, 11);
  EXPECT_THROW(fps_model.forward(shape(0, 50, 1)), ParameterError);  // 2 N1 > N
  EXPECT_NO_THROW(fps_model.forward(shape(0, 60, 1)));
  cfg = small_config();
  cfg.sets = 0;
  EXPECT_THROW(DNet<float>(cfg, 1), ConfigError);
}

TEST(CrossEntropy, Examples) {
  const TD even({2}, {0, 0}, true);
  const auto l = cross_entropy(even, 0);
  EXPECT_NEAR(l.item(), std::log(2.0), 1e-12);
  backward(l);
  EXPECT_NEAR(even.grad()[0], -0.5, 1e-12);
  EXPECT_NEAR(even.grad()[1], 0.5, 1e-12);
  EXPECT_NEAR(cross_entropy(TD({3}, {50, 0, 0}), 0).item(), 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy(TD({3}, {1000, 0, 0}), 1).item(), 1000.0, 1e-9);
  EXPECT_THROW(cross_entropy(TD({3}, {0, 0, 0}), 3), IndexError);
  const auto rows = cross_entropy_rows(TD({2, 2}, {0, 0, 50, 0}), {0, 0});
  EXPECT_NEAR(rows.item(), std::log(2.0) / 2, 1e-12);
}

// Every parameter of the composed network against central differences.
TEST(Model, EndToEndGradients) {
  std::size_t checked = 0;
  for (int s = 0; s < 20; ++s) {
    DNet<double> model(tiny_config(), s);
    jiggle(model, 50 + s, 0.1);
    const auto cloud = shape(s, 16, 300 + s);
    const std::size_t target = s % 3;
    const auto rep = gradcheck(model.parameters(), [&] { return cross_entropy(classify_forward(model, cloud, false), target); });
    EXPECT_LE(rep.worst, 1e-3) << "seed " << s << " at " << rep.worst_at;
    checked += rep.checked;
  }
  EXPECT_GT(checked, 10000u);
}

// A forward pass assembled by hand from the model's own components for the
// farthest-point, gate-free, max-fusion variant.
TEST(Model, AblationMatchesHandAssembly) {
  auto cfg = small_config();
  cfg.sampling = Sampling::fps;
  cfg.sgc.gating = false;
  cfg.fusion.mode = FusionMode::max;
  DNet<float> model(cfg, 12);
  EXPECT_FALSE(model.sps().has_value());
  EXPECT_FALSE(model.fusion().has_value());
  for (int s = 0; s < 5; ++s) {
    const auto cloud = shape(s, 128, 400 + s);
    const auto tr = model.forward(cloud);

    const auto norm = normalize_unit_sphere(cloud);
    const TF input({128, 3}, norm.points);
    const auto [m, aligned] = (*model.transform())(input, coordinate_graph<float>(input.data(), cfg.sgc.k));
    const auto order = fps<float>(aligned.data(), 80);
    const IndexList high(order.begin(), order.begin() + 40), low(order.begin() + 40, order.end());
    EXPECT_EQ(tr.idx_high, high);
    EXPECT_EQ(tr.idx_low, low);
    std::vector<TF> feats;
    const IndexList* sets[] = {nullptr, &high, &low};
    for (int b = 0; b < 3; ++b) {
      const auto pts = sets[b] ? gather_rows(aligned, *sets[b]) : aligned;
      const auto out = model.branches()[b](pts, coordinate_graph<float>(pts.data(), cfg.sgc.k));
      EXPECT_TRUE(out.gates.empty());
      feats.push_back(out.set_feature);
    }
    const auto g = fuse_fixed(feats, FusionMode::max);
    const auto logits = model.head()(reshape(g, {1, 32}));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(tr.logits[c], logits[c]);
  }
}

TEST(Model, SingleBranchLearnedFusion) {
  auto cfg = small_config();
  cfg.sets = kRawSet;
  DNet<float> model(cfg, 13);
  EXPECT_FALSE(model.fusion().has_value());
  EXPECT_FALSE(model.sps().has_value());
  const auto tr = model.forward(shape(2, 64, 14));
  for (float v : tr.psi->values()) EXPECT_EQ(v, 1.f);
  EXPECT_EQ(tr.global_feature.values(), tr.branches[0].set_feature.values());
}

namespace {

struct Batch {
  std::vector<PointCloud> clouds;
  std::vector<std::size_t> labels;
  std::vector<const PointCloud*> ptrs() const {
    std::vector<const PointCloud*> p;
    for (const auto& c : clouds) p.push_back(&c);
    return p;
  }
};

Batch make_batch(std::size_t n, std::size_t points, std::uint64_t seed) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.clouds.push_back(shape(i, points, seed + i));
    b.labels.push_back(i % 4);
  }
  return b;
}

std::vector<std::vector<float>> snapshot(const DNet<float>& model) {
  std::vector<std::vector<float>> out;
  for (const auto& p : model.parameters()) out.push_back(p.values());
  return out;
}

}  // namespace

TEST(TrainStep, LossDecreases) {
  DNet<float> model(small_config(), 20);
  const auto batch = make_batch(4, 64, 21);
  AdamState<float> adam;
  std::vector<double> losses;
  for (int i = 0; i < 10; ++i) losses.push_back(train_step(model, batch.ptrs(), batch.labels, adam, {1e-3}, i));
  EXPECT_LT(losses.back(), losses.front());
  EXPECT_EQ(adam.step, 10u);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  DNet<float> model(small_config(), 22);
  const auto batch = make_batch(2, 64, 23);
  const auto before = snapshot(model);
  AdamState<float> adam;
  train_step(model, batch.ptrs(), batch.labels, adam, {0.0}, 1);
  EXPECT_EQ(snapshot(model), before);
}

TEST(TrainStep, Deterministic) {
  const auto batch = make_batch(3, 64, 24);
  std::vector<std::vector<std::vector<float>>> runs;
  for (int r = 0; r < 2; ++r) {
    DNet<float> model(small_config(), 25);
    AdamState<float> adam;
    for (int i = 0; i < 3; ++i) train_step(model, batch.ptrs(), batch.labels, adam, {1e-3}, i);
    runs.push_back(snapshot(model));
  }
  EXPECT_EQ(runs[0], runs[1]);
}

// The alignment network sits behind a zero-initialized output layer, so its
// inner layers receive gradients from the second step on.
TEST(TrainStep, EveryParameterReceivesGradient) {
  DNet<float> model(small_config(), 26);
  const auto batch = make_batch(4, 64, 27);
  AdamState<float> adam;
  train_step(model, batch.ptrs(), batch.labels, adam, {1e-3}, 1);
  train_step(model, batch.ptrs(), batch.labels, adam, {1e-3}, 2);
  // adam_step clears gradients; the first moments keep their trace.
  const auto named = model.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    double norm = 0;
    for (float m : adam.m[i]) norm += double(m) * m;
    EXPECT_GT(norm, 0.0) << named[i].name;
  }
}

TEST(TrainStep, Errors) {
  DNet<float> model(small_config(), 28);
  AdamState<float> adam;
  const auto batch = make_batch(2, 64, 29);
  EXPECT_THROW(train_step(model, {}, {}, adam, {}, 0), ParameterError);
  EXPECT_THROW(train_step(model, batch.ptrs(), {0}, adam, {}, 0), DimensionError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  DNet<float> model(small_config(), 30);
  const auto batch = make_batch(2, 64, 31);
  AdamState<float> adam;
  train_step(model, batch.ptrs(), batch.labels, adam, {1e-3}, 1);
  const auto bytes = serialize_checkpoint(make_checkpoint(model, &adam, {{"epoch", 1}}));
  const auto ck = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(ck), bytes);
  EXPECT_EQ(ck.training.at("epoch"), 1);

  const auto restored = model_from_checkpoint(ck);
  EXPECT_EQ(snapshot(restored), snapshot(model));
  const auto cloud = shape(3, 64, 32);
  EXPECT_EQ(classify_forward(restored, cloud, false).values(), classify_forward(model, cloud, false).values());

  const auto st = restore_optimizer(restored, ck);
  ASSERT_TRUE(st.has_value());
  EXPECT_EQ(st->step, adam.step);
  EXPECT_EQ(st->m, adam.m);
  EXPECT_EQ(st->v, adam.v);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = dnet::test::scratch_dir("checkpoint");
  DNet<float> model(small_config(), 33);
  write_checkpoint(dir / "m.ckpt", make_checkpoint(model));
  const auto ck = read_checkpoint(dir / "m.ckpt");
  EXPECT_FALSE(restore_optimizer(model, ck).has_value());
  EXPECT_EQ(snapshot(model_from_checkpoint(ck)), snapshot(model));
  EXPECT_THROW(read_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Checkpoint, CorruptInputs) {
  DNet<float> model(small_config(), 34);
  const auto bytes = serialize_checkpoint(make_checkpoint(model));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), FormatError);
  EXPECT_THROW(parse_checkpoint("DN"), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(parse_checkpoint(bad_version), VersionError);
  for (std::size_t cut : {std::size_t{6}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, cut)), TruncatedError) << cut;
  EXPECT_THROW(parse_checkpoint(bytes + "x"), FormatError);
  try {
    parse_checkpoint(bad_magic);
  } catch (const CheckpointError&) {
    SUCCEED();
  }
}

TEST(Checkpoint, TensorMismatch) {
  DNet<float> model(small_config(), 35);
  auto ck = make_checkpoint(model);
  ck.tensors[0].shape = {ck.tensors[0].values.size()};
  const auto before = snapshot(model);
  EXPECT_THROW(restore_parameters(model, ck), TensorMismatchError);
  EXPECT_EQ(snapshot(model), before);
  auto missing = make_checkpoint(model);
  missing.tensors.pop_back();
  EXPECT_THROW(restore_parameters(model, missing), TensorMismatchError);
  auto extra = make_checkpoint(model);
  extra.tensors.push_back({"stray", {1}, {0.f}});
  EXPECT_THROW(restore_parameters(model, extra), TensorMismatchError);
}

TEST(Checkpoint, ConfigMismatch) {
  auto a = small_config(), b = small_config();
  a.n1 = 320;
  b.n1 = 160;
  EXPECT_THROW(require_same_config(a, b), ConfigMismatchError);
  try {
    require_same_config(a, b);
  } catch (const ConfigMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("320"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("160"), std::string::npos);
  }
  EXPECT_NO_THROW(require_same_config(a, a));
}
