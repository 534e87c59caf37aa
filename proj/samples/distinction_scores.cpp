// Runs an untrained network on one synthetic cloud, lists the most and
// least distinctive points and writes the scores as a PLY file.

#include <filesystem>
#include <iostream>

#include "dnet/io.hpp"
#include "dnet/model.hpp"
#include "dnet/synth.hpp"

int main(int argc, char** argv) {
  using namespace dnet;
  const std::string kind = argc > 1 ? argv[1] : "torus";
  const auto cloud = synth_generate(kind, 512, 0.01, 3);
  DNet<float> model(ModelConfig{}, 2);
  const auto tr = model.forward(cloud);

  std::cout << kind << ": " << cloud.size() << " points, N1 = " << tr.idx_high.size() << '\n';
  auto show = [&](const char* what, const IndexList& idx) {
    std::cout << what << ':';
    for (std::size_t i = 0; i < std::min<std::size_t>(idx.size(), 8); ++i)
      std::cout << ' ' << idx[i] << " (" << (*tr.alpha)[idx[i]] << ')';
    std::cout << " ...\n";
  };
  show("high", tr.idx_high);
  show("low ", tr.idx_low);
  if (tr.psi) {
    const auto& psi = *tr.psi;
    for (std::size_t b = 0; b < psi.dim(0); ++b) {
      double m = 0;
      for (std::size_t c = 0; c < psi.dim(1); ++c) m += psi.at(b, c);
      const unsigned set = tr.branch_sets[b];
      const char* name = set == kRawSet ? "P_R" : set == kHighSet ? "P_H" : "P_L";
      std::cout << "mean psi " << name << ": " << m / double(psi.dim(1)) << '\n';
    }
  }
  const auto out = std::filesystem::temp_directory_path() / ("dnet_" + kind + "_alpha.ply");
  export_ply_scalar(tr.normalized, tr.alpha->data(), out);
  std::cout << "wrote " << out.string() << '\n';
}
