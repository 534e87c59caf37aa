#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dnet/corpus.hpp"
#include "dnet/io.hpp"
#include "dnet/synth.hpp"
#include "support.hpp"

using namespace dnet;
using dnet::test::fps_oracle;
using dnet::test::knn_oracle;

namespace {

PointCloud cloud_of(std::vector<float> xyz) {
  PointCloud c;
  c.points = std::move(xyz);
  return c;
}

std::vector<float> random_points(std::size_t n, std::size_t dims, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> v(n * dims);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

// --------------------------------------------------------- normalization

TEST(Normalize, SymmetricPair) {
  const auto out = normalize_unit_sphere(cloud_of({2, 0, 0, -2, 0, 0}));
  EXPECT_EQ(out.points, (std::vector<float>{1, 0, 0, -1, 0, 0}));
}

TEST(Normalize, StatisticsAndIdempotence) {
  std::mt19937_64 rng(1);
  for (int s = 0; s < 20; ++s) {
    auto pts = random_points(50, 3, rng);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = pts[i] * 3.f + float(i % 3) * 5.f;
    const auto once = normalize_unit_sphere(cloud_of(pts));
    double c[3] = {0, 0, 0}, rmax = 0;
    for (std::size_t i = 0; i < once.size(); ++i) {
      double r = 0;
      for (int d = 0; d < 3; ++d) {
        c[d] += once.points[3 * i + d];
        r += double(once.points[3 * i + d]) * once.points[3 * i + d];
      }
      rmax = std::max(rmax, std::sqrt(r));
    }
    EXPECT_LT(std::hypot(c[0], c[1], c[2]) / 50, 1e-5);
    EXPECT_GE(rmax, 1 - 1e-5);
    EXPECT_LE(rmax, 1 + 1e-6);
    const auto twice = normalize_unit_sphere(once);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(twice.points[i], once.points[i], 1e-6);
  }
}

TEST(Normalize, DegenerateCloud) {
  EXPECT_THROW(normalize_unit_sphere(cloud_of({1, 2, 3, 1, 2, 3})), GeometryError);
  EXPECT_THROW(normalize_unit_sphere(PointCloud{}), GeometryError);
}

// ------------------------------------------------------------------- knn

TEST(Knn, LineWithTies) {
  const std::vector<float> line{0, 0, 0, 1, 0, 0, 2, 0, 0, 10, 0, 0};
  const auto g = knn<float>(line, 4, 3, 1);
  EXPECT_EQ(g.indices, (IndexList{1, 0, 1, 2}));
}

TEST(Knn, AllOthersWhenKIsNMinusOne) {
  std::mt19937_64 rng(2);
  const auto pts = random_points(9, 3, rng);
  const auto g = knn<float>(pts, 9, 3, 8);
  for (std::size_t i = 0; i < 9; ++i) {
    std::set<std::size_t> row(g.row(i).begin(), g.row(i).end());
    EXPECT_EQ(row.size(), 8u);
    EXPECT_FALSE(row.count(i));
  }
}

TEST(Knn, MatchesSortOracleExactly) {
  std::mt19937_64 rng(3);
  for (int s = 0; s < 20; ++s) {
    const auto pts = random_points(50, 3, rng);
    EXPECT_EQ(knn<float>(pts, 50, 3, 5).indices, knn_oracle(pts, 50, 3, 5, true));
  }
  // Feature-space widths and sizes that cross the kernel's block edges.
  for (auto [n, dims, k] : {std::tuple{67, 64, 20}, {33, 8, 7}, {130, 17, 30}, {21, 128, 20}}) {
    const auto f = random_points(std::size_t(n), std::size_t(dims), rng);
    EXPECT_EQ(knn<float>(f, n, dims, k, true, MetricSpace::features).indices, knn_oracle(f, n, dims, k, true))
        << n << "x" << dims;
    EXPECT_EQ(knn<float>(f, n, dims, k, false).indices, knn_oracle(f, n, dims, k, false)) << n << "x" << dims;
    const std::vector<double> fd(f.begin(), f.end());
    EXPECT_EQ(knn<double>(fd, n, dims, k).indices, knn_oracle(fd, n, dims, k, true)) << "double " << n;
  }
}

// Integer grid coordinates make every distance exact and create many ties.
TEST(Knn, GridTiesResolveByIndex) {
  std::vector<float> grid;
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 3; ++z) grid.insert(grid.end(), {float(x), float(y), float(z)});
  const std::size_t n = grid.size() / 3;
  for (std::size_t k : {1u, 4u, 6u, 13u})
    EXPECT_EQ(knn<float>(grid, n, 3, k).indices, knn_oracle(grid, n, 3, k, true)) << "k=" << k;
}

TEST(Knn, KTooLarge) {
  const std::vector<float> pts{0, 0, 0, 1, 1, 1, 2, 2, 2};
  EXPECT_THROW(knn<float>(pts, 3, 3, 3), ParameterError);
  EXPECT_THROW(knn<float>(pts, 3, 3, 0), ParameterError);
}

// ------------------------------------------------------------------- fps

TEST(Fps, SingleSelectionIsStart) {
  std::mt19937_64 rng(4);
  const auto pts = random_points(10, 3, rng);
  EXPECT_EQ(fps<float>(pts, 1, 7), (IndexList{7}));
}

TEST(Fps, LineHandOracle) {
  const std::vector<float> line{0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0};
  EXPECT_EQ(fps<float>(line, 3, 0), (IndexList{0, 3, 1}));
}

TEST(Fps, GreedyOracleAndPrefixProperty) {
  std::mt19937_64 rng(5);
  for (int s = 0; s < 20; ++s) {
    const auto pts = random_points(40, 3, rng);
    const auto full = fps<float>(pts, 40, s % 40);
    EXPECT_EQ(full, fps_oracle(pts, 40, s % 40));
    EXPECT_EQ(std::set<std::size_t>(full.begin(), full.end()).size(), 40u);
    for (std::size_t m : {1u, 5u, 17u, 39u}) {
      const auto part = fps<float>(pts, m, s % 40);
      EXPECT_TRUE(std::equal(part.begin(), part.end(), full.begin())) << "m=" << m;
    }
  }
}

TEST(Fps, TooMany) {
  const std::vector<float> pts{0, 0, 0, 1, 0, 0};
  EXPECT_THROW(fps<float>(pts, 3), ParameterError);
}

TEST(RandomSample, DistinctAndReproducible) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = random_sample(30, 12, seed);
    EXPECT_EQ(a, random_sample(30, 12, seed));
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 12u);
    for (auto i : a) EXPECT_LT(i, 30u);
  }
  EXPECT_NE(random_sample(30, 12, 1), random_sample(30, 12, 2));
  EXPECT_THROW(random_sample(3, 4, 0), ParameterError);
}

// -------------------------------------------------------------- synthetic

TEST(Synth, EveryKindIsNormalizedWithUnitNormals) {
  for (auto kind : kAllShapeKinds) {
    const auto c = synth_generate(kind, 256, 0.02, 9);
    ASSERT_EQ(c.size(), 256u) << kind_name(kind);
    ASSERT_TRUE(c.has_normals());
    EXPECT_EQ(c.label, int(kind));
    double rmax = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto p = c.point(i);
      rmax = std::max(rmax, std::hypot(double(p[0]), double(p[1]), double(p[2])));
      const double nl = std::hypot(double(c.normals[3 * i]), double(c.normals[3 * i + 1]), double(c.normals[3 * i + 2]));
      EXPECT_NEAR(nl, 1.0, 1e-5);
    }
    EXPECT_NEAR(rmax, 1.0, 1e-5);
    EXPECT_EQ(parse_kind(kind_name(kind)), kind);
  }
}

TEST(Synth, Deterministic) {
  const auto a = synth_generate(ShapeKind::torus, 128, 0.02, 5);
  EXPECT_EQ(a.points, synth_generate(ShapeKind::torus, 128, 0.02, 5).points);
  EXPECT_NE(a.points, synth_generate(ShapeKind::torus, 128, 0.02, 6).points);
}

// With rotation and jitter off and a shared sampling stream, two instances
// of a kind differ only by noise.
TEST(Synth, SharedSampleSeedAlignsInstances) {
  SynthOptions opt{false, false, 77};
  const auto a = synth_generate(ShapeKind::cone, 128, 0.0, 1, opt);
  const auto b = synth_generate(ShapeKind::cone, 128, 0.0, 2, opt);
  EXPECT_EQ(a.points, b.points);
}

TEST(Synth, SphereSpikeParts) {
  const auto c = synth_sphere_spike(200, 0.01, 3);
  ASSERT_EQ(c.part_labels.size(), 200u);
  EXPECT_EQ(std::count(c.part_labels.begin(), c.part_labels.end(), 1), 50);
}

TEST(Synth, BadArguments) {
  EXPECT_THROW(synth_generate(ShapeKind::cube, 4, 0.0, 0), ParameterError);
  EXPECT_THROW(synth_generate(ShapeKind::cube, 64, -1.0, 0), ParameterError);
  EXPECT_THROW(synth_generate("blob", 64, 0.0, 0), Error);
}

// ------------------------------------------------------------------ files

TEST(CloudFile, RoundTripWithAndWithoutNormals) {
  const auto dir = dnet::test::scratch_dir("cloud_io");
  const auto c = synth_generate(ShapeKind::capsule, 300, 0.05, 11);
  for (bool normals : {false, true}) {
    const auto path = dir / (normals ? "n.txt" : "p.txt");
    save_cloud(c, path, normals);
    const auto back = load_cloud(path);
    ASSERT_EQ(back.points.size(), c.points.size());
    for (std::size_t i = 0; i < c.points.size(); ++i) EXPECT_NEAR(back.points[i], c.points[i], 1e-6);
    EXPECT_EQ(back.has_normals(), normals);
    if (normals) {
      for (std::size_t i = 0; i < c.normals.size(); ++i) EXPECT_NEAR(back.normals[i], c.normals[i], 1e-6);
    }
  }
}

TEST(CloudFile, ParseErrorsCarryLineNumbers) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_cloud(in);
  };
  EXPECT_EQ(parse("# comment\n\n1 2 3\n").size(), 1u);
  try {
    parse("1 2 3\n1 2\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("1 2 3\n1 2 3 0 0 1\n"), ParseError);
  EXPECT_THROW(parse("1 2 x\n"), ParseError);
  EXPECT_THROW(parse("# nothing\n"), ParseError);
  EXPECT_THROW(load_cloud("/nonexistent/dir/cloud.txt"), IoError);
}

TEST(PlyExport, RoundTrip) {
  const auto dir = dnet::test::scratch_dir("ply_io");
  const auto c = synth_generate(ShapeKind::pyramid, 200, 0.02, 12);
  std::vector<float> scores(c.size());
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> u(0.f, 3.f);
  for (auto& s : scores) s = u(rng);
  export_ply_scalar(c, scores, dir / "s.ply");
  const auto back = load_ply_scalar(dir / "s.ply");
  ASSERT_EQ(back.cloud.size(), c.size());
  for (std::size_t i = 0; i < c.points.size(); ++i) EXPECT_NEAR(back.cloud.points[i], c.points[i], 1e-6);
  for (std::size_t i = 0; i < scores.size(); ++i) EXPECT_NEAR(back.scores[i], scores[i], 1e-6);
  EXPECT_THROW(export_ply_scalar(c, std::vector<float>(3), dir / "bad.ply"), ParameterError);
}

TEST(PlyExport, RejectsMalformedFiles) {
  const auto dir = dnet::test::scratch_dir("ply_bad");
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
  };
  EXPECT_THROW(load_ply_scalar(write("a.ply", "plx\n")), ParseError);
  EXPECT_THROW(load_ply_scalar(write("b.ply", "ply\nformat binary_little_endian 1.0\n")), ParseError);
  EXPECT_THROW(load_ply_scalar(write("c.ply",
                                     "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                                     "property float z\nproperty float s\nend_header\n0 0 0 1\n")),
               ParseError);
}

TEST(Manifest, RoundTripAndClassOrder) {
  const auto dir = dnet::test::scratch_dir("manifest");
  Manifest m{dir, {{"b/1.txt", "b", Split::train}, {"a/1.txt", "a", Split::test}, {"b/2.txt", "b", Split::test}}};
  save_manifest(m);
  const auto back = load_manifest(dir);
  ASSERT_EQ(back.entries.size(), 3u);
  EXPECT_EQ(back.entries[1].path, "a/1.txt");
  EXPECT_EQ(back.entries[2].split, Split::test);
  EXPECT_EQ(back.class_names(), (std::vector<std::string>{"a", "b"}));
  std::ofstream(dir / "manifest.csv") << "path,label,split\nx.txt,a,validation\n";
  EXPECT_THROW(load_manifest(dir), ParseError);
}

TEST(Corpus, CountsSplitAndDeterminism) {
  const auto a = dnet::test::scratch_dir("corpus_a"), b = dnet::test::scratch_dir("corpus_b");
  CorpusOptions opt;
  opt.classes = 3;
  opt.per_class = 10;
  opt.n_points = 64;
  opt.seed = 4;
  const auto m = generate_corpus(a, opt);
  generate_corpus(b, opt);
  ASSERT_EQ(m.entries.size(), 30u);
  EXPECT_EQ(std::count_if(m.entries.begin(), m.entries.end(), [](auto& e) { return e.split == Split::test; }), 6);
  for (const auto& e : m.entries) {
    std::ifstream fa(a / e.path), fb(b / e.path);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    EXPECT_EQ(sa.str(), sb.str()) << e.path;
  }
  opt.per_class = 1;
  const auto single = generate_corpus(dnet::test::scratch_dir("corpus_one"), opt);
  for (const auto& e : single.entries) EXPECT_EQ(e.split, Split::train);
}
