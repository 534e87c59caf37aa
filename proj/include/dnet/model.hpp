#pragma once

// The assembled network: alignment, distinctive point search, one
// self-gated convolution branch per point set, fusion and task heads.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dnet/config.hpp"
#include "dnet/fusion.hpp"
#include "dnet/geometry.hpp"
#include "dnet/sgc.hpp"
#include "dnet/sps.hpp"

namespace dnet {

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;  ///< dropout masks and random sampling
  bool segment = false;    ///< also evaluate the per-point head
};

/// Everything a forward pass computes, for inspection and tests.
template <class T>
struct ForwardTrace {
  PointCloud normalized;
  Tensor<T> input;    ///< N x D_in features of the normalized cloud
  Tensor<T> aligned;  ///< input after the shared alignment (or input itself)
  std::optional<Tensor<T>> transform_matrix;
  std::optional<Tensor<T>> alpha;  ///< distinction scores (attentive sampling only)
  IndexList idx_high, idx_low;
  std::vector<unsigned> branch_sets;  ///< which set each branch output belongs to
  std::vector<BranchOutput<T>> branches;
  std::optional<Tensor<T>> psi;  ///< learned fusion weights, branches x W
  Tensor<T> global_feature;
  Tensor<T> logits;                      ///< C
  std::optional<Tensor<T>> part_logits;  ///< N x C_part
};

template <class T>
class DNet {
 public:
  DNet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const std::size_t in = config_.input_width();
    if (config_.transform_per_branch) {
      for (unsigned bit : {kRawSet, kHighSet, kLowSet})
        if (config_.sets & bit) branch_transforms_.emplace_back(config_.transform, rng);
    } else {
      transform_.emplace(config_.transform, rng);
    }
    if (config_.uses_distinctive_sets() && config_.sampling == Sampling::sps) sps_.emplace(in, config_.sps.dim, rng);
    for (unsigned bit : {kRawSet, kHighSet, kLowSet})
      if (config_.sets & bit) branches_.emplace_back(in, config_.sgc, rng);
    if (config_.fusion.mode == FusionMode::learned && config_.branch_count() > 1)
      fusion_.emplace(config_.branch_count(), config_.sgc.lift_width, config_.fusion.hidden, rng);
    std::vector<std::size_t> head{config_.global_width()};
    head.insert(head.end(), config_.head_widths.begin(), config_.head_widths.end());
    head.push_back(config_.num_classes);
    head_ = Mlp<T>(head, rng, false, config_.dropout);
    if (config_.num_part_classes > 0) {
      if (!(config_.sets & kRawSet)) throw ConfigError("segmentation requires the raw point set branch");
      std::vector<std::size_t> seg{config_.sgc.lift_width + config_.global_width()};
      seg.insert(seg.end(), config_.seg_widths.begin(), config_.seg_widths.end());
      seg.push_back(config_.num_part_classes);
      seg_head_.emplace(seg, rng, false, 0.0);
    }
  }

  const ModelConfig& config() const { return config_; }

  /// Named parameters in a fixed order.
  ParameterList<T> named_parameters() const {
    ParameterList<T> out;
    if (transform_) transform_->collect(out, "transform");
    for (std::size_t b = 0; b < branch_transforms_.size(); ++b)
      branch_transforms_[b].collect(out, "transform" + std::to_string(b));
    if (sps_) sps_->collect(out, "sps");
    for (std::size_t b = 0; b < branches_.size(); ++b) branches_[b].collect(out, branch_name(b));
    if (fusion_) fusion_->collect(out, "fusion");
    head_.collect(out, "head");
    if (seg_head_) seg_head_->collect(out, "seg_head");
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  const std::optional<InputTransform<T>>& transform() const { return transform_; }
  const std::optional<SpsParams<T>>& sps() const { return sps_; }
  const std::vector<SgcBranch<T>>& branches() const { return branches_; }
  const std::optional<FusionParams<T>>& fusion() const { return fusion_; }
  const Mlp<T>& head() const { return head_; }

  ForwardTrace<T> forward(const PointCloud& cloud, const ForwardOptions& opt = {}) const {
    ForwardTrace<T> tr;
    tr.normalized = normalize_unit_sphere(cloud);
    const std::size_t n = tr.normalized.size();
    if (n <= config_.sgc.k)
      throw ParameterError("cloud of " + std::to_string(n) + " points is too small for k=" +
                           std::to_string(config_.sgc.k));
    const auto feats = tr.normalized.features(config_.use_normals);
    tr.input = Tensor<T>({n, config_.input_width()}, std::vector<T>(feats.begin(), feats.end()));

    if (transform_) {
      const auto graph = coordinate_graph<T>(xyz_values(tr.input), config_.sgc.k);
      auto [m, aligned] = (*transform_)(tr.input, graph);
      tr.transform_matrix = m;
      tr.aligned = aligned;
    } else {
      tr.aligned = tr.input;
    }

    // Row selections of the distinctive sets.
    std::optional<Tensor<T>> alpha;
    if (config_.uses_distinctive_sets()) {
      const std::size_t n1 = config_.n1_for(n);
      if (n1 < 2) throw ParameterError("distinctive set size must be at least 2, got " + std::to_string(n1));
      switch (config_.sampling) {
        case Sampling::sps: {
          if (n1 > n) throw ParameterError("N1=" + std::to_string(n1) + " exceeds N=" + std::to_string(n));
          alpha = attentive_scores(tr.aligned, *sps_, config_.sps.normalize_axis);
          std::tie(tr.idx_high, tr.idx_low) = select_distinctive<T>(alpha->data(), n1);
          tr.alpha = alpha;
          break;
        }
        case Sampling::fps:
        case Sampling::random: {
          if (2 * n1 > n)
            throw ParameterError("2*N1=" + std::to_string(2 * n1) + " exceeds N=" + std::to_string(n));
          const auto order = config_.sampling == Sampling::fps
                                 ? fps<T>(xyz_values(tr.aligned), 2 * n1)
                                 : random_sample(n, 2 * n1, derive_seed(opt.seed, {0x5a}));
          tr.idx_high.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n1));
          tr.idx_low.assign(order.begin() + static_cast<std::ptrdiff_t>(n1), order.end());
          break;
        }
      }
    }

    std::size_t b = 0;
    for (unsigned bit : {kRawSet, kHighSet, kLowSet}) {
      if (!(config_.sets & bit)) continue;
      Tensor<T> pts;
      const IndexList* rows = bit == kHighSet ? &tr.idx_high : bit == kLowSet ? &tr.idx_low : nullptr;
      if (branch_transforms_.empty()) {
        pts = rows ? gather_rows(tr.aligned, *rows) : tr.aligned;
      } else {
        const auto raw = rows ? gather_rows(tr.input, *rows) : tr.input;
        const auto graph = coordinate_graph<T>(xyz_values(raw), config_.sgc.k);
        pts = branch_transforms_[b](raw, graph).second;
      }
      const auto graph = coordinate_graph<T>(xyz_values(pts), config_.sgc.k);
      // Selected rows carry their distinction score so that the scorer
      // receives gradients; neighborhoods use the unscaled coordinates.
      const auto input = (rows && alpha) ? mul(pts, gather_rows(*alpha, *rows)) : pts;
      tr.branches.push_back(branches_[b](input, graph));
      tr.branch_sets.push_back(bit);
      ++b;
    }

    std::vector<Tensor<T>> set_features;
    for (const auto& br : tr.branches) set_features.push_back(br.set_feature);
    if (config_.fusion.mode == FusionMode::learned) {
      if (fusion_) {
        tr.psi = fusion_weights(set_features, *fusion_);
        tr.global_feature = fuse(*tr.psi, set_features);
      } else {
        tr.psi = Tensor<T>::full({1, config_.sgc.lift_width}, T(1));
        tr.global_feature = set_features.front();
      }
    } else {
      tr.global_feature = fuse_fixed(set_features, config_.fusion.mode);
    }

    const std::size_t gw = tr.global_feature.numel();
    const auto g_row = reshape(tr.global_feature, {1, gw});
    tr.logits = reshape(head_(g_row, opt.training, derive_seed(opt.seed, {0xd0})), {config_.num_classes});

    if (opt.segment) {
      if (!seg_head_) throw ConfigError("model has no segmentation head (model.num_part_classes = 0)");
      const auto& per_point = tr.branches.front().point_features;
      const auto joined = concat<T>({per_point, repeat_rows(tr.global_feature, n)}, 1);
      tr.part_logits = (*seg_head_)(joined, opt.training, derive_seed(opt.seed, {0x5e}));
    }
    return tr;
  }

 private:
  /// The coordinate columns of an N x D feature tensor as an N x 3 array.
  static std::vector<T> xyz_values(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> out(n * 3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = x.values()[i * d + c];
    return out;
  }

  std::string branch_name(std::size_t b) const {
    std::size_t i = 0;
    for (auto [bit, name] : {std::pair{kRawSet, "raw"}, std::pair{kHighSet, "high"}, std::pair{kLowSet, "low"}}) {
      if (!(config_.sets & bit)) continue;
      if (i++ == b) return std::string("branch_") + name;
    }
    return "branch";
  }

  ModelConfig config_;
  std::optional<InputTransform<T>> transform_;
  std::vector<InputTransform<T>> branch_transforms_;
  std::optional<SpsParams<T>> sps_;
  std::vector<SgcBranch<T>> branches_;
  std::optional<FusionParams<T>> fusion_;
  Mlp<T> head_;
  std::optional<Mlp<T>> seg_head_;
};

/// Class logits (C) of one cloud.
template <class T>
Tensor<T> classify_forward(const DNet<T>& model, const PointCloud& cloud, bool training, std::uint64_t seed = 0) {
  return model.forward(cloud, {training, seed, false}).logits;
}

/// Per-point part logits (N x C_part) of one cloud.
template <class T>
Tensor<T> segment_forward(const DNet<T>& model, const PointCloud& cloud, bool training, std::uint64_t seed = 0) {
  return *model.forward(cloud, {training, seed, true}).part_logits;
}

/// -log softmax(logits)[target], evaluated in the log domain.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target) {
  const std::size_t c = logits.numel();
  if (target >= c) throw IndexError("cross_entropy: target " + std::to_string(target) + " >= " + std::to_string(c));
  const auto& z = logits.values();
  for (auto v : z)
    if (!std::isfinite(v)) throw NumericError("cross_entropy: non-finite logit");
  const T hi = *std::max_element(z.begin(), z.end());
  accum_t<T> total = 0;
  for (auto v : z) total += std::exp(static_cast<accum_t<T>>(v - hi));
  const accum_t<T> lse = hi + std::log(total);
  std::vector<T> probs(c);
  for (std::size_t i = 0; i < c; ++i) probs[i] = static_cast<T>(std::exp(z[i] - lse));
  const T loss = static_cast<T>(lse - z[target]);
  return Tensor<T>::from_op({1}, {loss}, {logits}, [logits, probs, target](const std::vector<T>& g) {
    if (auto* gl = logits.grad_sink())
      for (std::size_t i = 0; i < probs.size(); ++i) (*gl)[i] += g[0] * (probs[i] - (i == target ? T(1) : T(0)));
  });
}

/// Mean per-row cross-entropy of N x C logits against N targets.
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<T> probs(n * c);
  accum_t<T> total_loss = 0;
  const auto& z = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)
      throw IndexError("cross_entropy_rows: target out of range at row " + std::to_string(i));
    const T* row = z.data() + i * c;
    const T hi = *std::max_element(row, row + c);
    accum_t<T> s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(static_cast<accum_t<T>>(row[j] - hi));
    const accum_t<T> lse = hi + std::log(s);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = static_cast<T>(std::exp(row[j] - lse));
    total_loss += lse - row[targets[i]];
  }
  if (!std::isfinite(static_cast<double>(total_loss))) throw NumericError("cross_entropy_rows: non-finite loss");
  const T loss = static_cast<T>(total_loss / static_cast<accum_t<T>>(n));
  return Tensor<T>::from_op({1}, {loss}, {logits}, [logits, probs, targets, n, c](const std::vector<T>& g) {
    auto* gl = logits.grad_sink();
    if (!gl) return;
    const T w = g[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        (*gl)[i * c + j] += w * (probs[i * c + j] - (static_cast<int>(j) == targets[i] ? T(1) : T(0)));
  });
}

}  // namespace dnet
