#pragma once

// Parameter containers shared by the network modules.

#include <cmath>
#include <string>
#include <vector>

#include "dnet/ops.hpp"
#include "dnet/random.hpp"

namespace dnet {

template <class T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParameterList = std::vector<NamedParameter<T>>;

enum class Init { xavier, zero };

/// Weight of shape (fan_in x fan_out), uniform in +-sqrt(6/(fan_in+fan_out)).
/// Values are drawn in double so that float and double models built from the
/// same seed agree up to rounding.
template <class T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(fan_in * fan_out);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  return Tensor<T>({fan_in, fan_out}, std::move(w), true);
}

/// Fully connected layer y = x W + b.
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, Init init = Init::xavier)
      : weight(init == Init::zero ? Tensor<T>::zeros({in, out}, true) : xavier_uniform<T>(in, out, rng)),
        bias(Tensor<T>::zeros({out}, true)) {}

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Stack of Linear layers with ReLU after every layer except, optionally,
/// the last.  Dropout (rate > 0) follows each hidden activation in training.
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;
  bool relu_last = false;
  double dropout_rate = 0.0;

  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Rng& rng, bool relu_last_layer, double dropout = 0.0)
      : relu_last(relu_last_layer), dropout_rate(dropout) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers.emplace_back(widths[i], widths[i + 1], rng);
  }

  Tensor<T> operator()(Tensor<T> x, bool training = false, std::uint64_t seed = 0) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      const bool last = i + 1 == layers.size();
      if (!last || relu_last) x = relu(x);
      if (!last && dropout_rate > 0.0) x = dropout(x, dropout_rate, training, derive_seed(seed, {i}));
    }
    return x;
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + "." + std::to_string(i));
  }
};

}  // namespace dnet
