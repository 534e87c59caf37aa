#pragma once

// Synthetic labelled corpus on disk: one text cloud per instance plus a
// manifest with a stratified, seeded train/test split.

#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "dnet/io.hpp"
#include "dnet/synth.hpp"

namespace dnet {

struct CorpusOptions {
  std::size_t classes = 8;      ///< first `classes` shape kinds
  std::size_t per_class = 100;
  std::size_t n_points = 256;
  double noise = 0.02;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
};

/// Number of test instances for a class with n members.
inline std::size_t test_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
}

/// Writes <root>/<kind>/<kind>_NNN.txt (with normals) and <root>/manifest.csv.
inline Manifest generate_corpus(const std::filesystem::path& root, const CorpusOptions& opt) {
  if (opt.classes < 1 || opt.classes > kAllShapeKinds.size())
    throw ParameterError("gen-data: classes must lie in 1.." + std::to_string(kAllShapeKinds.size()));
  if (opt.per_class < 1) throw ParameterError("gen-data: per_class must be positive");
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create dataset directory '" + root.string() + "': " + ec.message());

  Manifest manifest{root, {}};
  for (std::size_t c = 0; c < opt.classes; ++c) {
    const ShapeKind kind = kAllShapeKinds[c];
    const std::string name(kind_name(kind));
    std::filesystem::create_directories(root / name, ec);
    if (ec) throw IoError("cannot create '" + (root / name).string() + "': " + ec.message());

    std::vector<std::size_t> order(opt.per_class);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng(derive_seed(opt.seed, {0x5917, c}));
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<bool> is_test(opt.per_class, false);
    for (std::size_t t = 0; t < test_count(opt.per_class, opt.test_fraction); ++t) is_test[order[t]] = true;

    for (std::size_t i = 0; i < opt.per_class; ++i) {
      char file[64];
      std::snprintf(file, sizeof(file), "%s_%03zu.txt", name.c_str(), i);
      const std::string rel = name + "/" + file;
      const auto cloud = synth_generate(kind, opt.n_points, opt.noise, derive_seed(opt.seed, {c, i}));
      save_cloud(cloud, root / rel, true);
      manifest.entries.push_back({rel, name, is_test[i] ? Split::test : Split::train});
    }
  }
  save_manifest(manifest);
  return manifest;
}

}  // namespace dnet
