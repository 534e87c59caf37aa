#pragma once

// Datasets on disk, the training step, the epoch loop and evaluation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dnet/io.hpp"
#include "dnet/model.hpp"
#include "dnet/optim.hpp"

namespace dnet {

struct Sample {
  PointCloud cloud;
  std::size_t label = 0;
  std::string path;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Loads every cloud of a manifest.  Labels become indices into the sorted
/// class names.
inline Dataset load_dataset(const std::filesystem::path& root, bool with_normals) {
  const auto manifest = load_manifest(root);
  Dataset ds;
  ds.class_names = manifest.class_names();
  if (ds.class_names.empty()) throw DataError("dataset " + root.string() + " lists no clouds");
  for (const auto& e : manifest.entries) {
    Sample s;
    s.path = e.path;
    s.cloud = load_cloud(root / e.path);
    if (with_normals && !s.cloud.has_normals())
      throw DataError("normals requested but " + (root / e.path).string() + " has 3 columns");
    if (!with_normals) s.cloud.normals.clear();
    s.label = static_cast<std::size_t>(
        std::lower_bound(ds.class_names.begin(), ds.class_names.end(), e.label) - ds.class_names.begin());
    s.cloud.label = static_cast<int>(s.label);
    (e.split == Split::train ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

/// Forward, mean cross-entropy, backward and one ADAM update over a batch.
/// Returns the mean loss.  Parameters outside the graph of the loss (the
/// unused task head) receive an explicit zero gradient.
template <class T>
double train_step(const DNet<T>& model, const std::vector<const PointCloud*>& clouds,
                  const std::vector<std::size_t>& labels, AdamState<T>& adam, const AdamOptions& opt,
                  std::uint64_t seed) {
  if (clouds.empty()) throw ParameterError("train_step: empty batch");
  if (clouds.size() != labels.size()) throw DimensionError("train_step: clouds and labels differ in count");
  auto params = model.parameters();
  for (auto& p : params) p.clear_grad();
  const T inv = T(1) / static_cast<T>(clouds.size());
  double total = 0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const auto logits = classify_forward(model, *clouds[i], true, derive_seed(seed, {i}));
    const auto loss = cross_entropy(logits, labels[i]);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw NumericError("non-finite training loss on batch element " + std::to_string(i));
    total += static_cast<double>(loss.item());
    backward(scale(loss, inv));
  }
  for (auto& p : params) p.mutable_grad();
  adam_step<T>(params, adam, opt);
  return total / static_cast<double>(clouds.size());
}

/// Per-point segmentation variant of train_step; labels are the part labels
/// stored in each cloud.
template <class T>
double train_step_segment(const DNet<T>& model, const std::vector<const PointCloud*>& clouds, AdamState<T>& adam,
                          const AdamOptions& opt, std::uint64_t seed) {
  if (clouds.empty()) throw ParameterError("train_step: empty batch");
  auto params = model.parameters();
  for (auto& p : params) p.clear_grad();
  const T inv = T(1) / static_cast<T>(clouds.size());
  double total = 0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (clouds[i]->part_labels.size() != clouds[i]->size())
      throw DataError("segmentation sample " + std::to_string(i) + " has no part labels");
    const auto logits = segment_forward(model, *clouds[i], true, derive_seed(seed, {i}));
    const auto loss = cross_entropy_rows(logits, clouds[i]->part_labels);
    total += static_cast<double>(loss.item());
    backward(scale(loss, inv));
  }
  for (auto& p : params) p.mutable_grad();
  adam_step<T>(params, adam, opt);
  return total / static_cast<double>(clouds.size());
}

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> class_total;
  std::vector<std::size_t> class_correct;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  double class_accuracy(std::size_t c) const {
    return class_total[c] ? static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c]) : 0.0;
  }
};

template <class T>
std::size_t predict(const DNet<T>& model, const PointCloud& cloud) {
  NoGradGuard no_grad;
  const auto logits = classify_forward(model, cloud, false);
  const auto& v = logits.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <class T>
EvalReport evaluate(const DNet<T>& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw DataError("evaluation split is empty");
  const std::size_t c = model.config().num_classes;
  EvalReport r;
  r.class_total.assign(c, 0);
  r.class_correct.assign(c, 0);
  for (const auto& s : samples) {
    if (s.label >= c)
      throw ConfigError("sample label " + std::to_string(s.label) + " exceeds the model's " + std::to_string(c) +
                        " classes");
    const bool ok = predict(model, s.cloud) == s.label;
    ++r.total;
    ++r.class_total[s.label];
    r.correct += ok;
    r.class_correct[s.label] += ok;
  }
  return r;
}

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  AdamOptions adam;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0;
  double test_acc = 0;
};

/// Runs epochs start_epoch+1 .. start_epoch+epochs with shuffled batches
/// and evaluates the test split after each.  on_epoch receives the metrics
/// of every finished epoch.
template <class T>
std::vector<EpochMetrics> train_epochs(const DNet<T>& model, AdamState<T>& adam, const Dataset& data,
                                       const TrainOptions& opt, std::size_t start_epoch = 0,
                                       const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  if (data.train.empty()) throw DataError("training split is empty");
  if (opt.batch_size == 0) throw ParameterError("batch size must be positive");
  std::vector<EpochMetrics> log;
  for (std::size_t e = start_epoch + 1; e <= start_epoch + opt.epochs; ++e) {
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(opt.seed, {0xe0, e}));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      std::vector<const PointCloud*> clouds;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < std::min(order.size(), start + opt.batch_size); ++i) {
        clouds.push_back(&data.train[order[i]].cloud);
        labels.push_back(data.train[order[i]].label);
      }
      loss_sum += train_step(model, clouds, labels, adam, opt.adam, derive_seed(opt.seed, {0xb0, e, start}));
      ++batches;
    }
    EpochMetrics m{e, loss_sum / static_cast<double>(batches), 0.0};
    m.test_acc = data.test.empty() ? 0.0 : evaluate(model, data.test).accuracy();
    log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return log;
}

}  // namespace dnet
