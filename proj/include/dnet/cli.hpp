#pragma once

// Run configuration and the five commands behind the `dnet` tool.  Each
// command writes its outputs and returns normally or throws a dnet::Error;
// the tool maps errors to exit codes.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dnet/checkpoint.hpp"
#include "dnet/corpus.hpp"
#include "dnet/training.hpp"

namespace dnet {

struct RunConfig {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::filesystem::path data;
  std::filesystem::path out;
  bool normals = false;

  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  AdamOptions adam;

  CorpusOptions corpus;

  std::size_t ablate_seeds = 3;
  std::string ablate_table = "all";  ///< grid | k | n1 | all
  std::size_t jobs = 1;

  std::string eval_split = "test";  ///< train | test | all

  std::set<std::string> explicit_keys;  ///< settings given by file or flag
};

/// Applies one `key = value` setting.  Unknown keys are a ConfigError.
inline void apply_setting(RunConfig& rc, const std::string& key, const std::string& v) {
  rc.explicit_keys.insert(key);
  if (apply_model_setting(rc.model, key, v)) return;
  if (key == "seed") rc.seed = parse_size(key, v);
  else if (key == "data") rc.data = v;
  else if (key == "out") rc.out = v;
  else if (key == "normals") rc.normals = parse_bool(key, v);
  else if (key == "train.epochs") rc.epochs = parse_size(key, v);
  else if (key == "train.batch_size") rc.batch_size = parse_size(key, v);
  else if (key == "train.lr") rc.adam.lr = parse_real(key, v);
  else if (key == "train.beta1") rc.adam.beta1 = parse_real(key, v);
  else if (key == "train.beta2") rc.adam.beta2 = parse_real(key, v);
  else if (key == "train.eps") rc.adam.eps = parse_real(key, v);
  else if (key == "gen.classes") rc.corpus.classes = parse_size(key, v);
  else if (key == "gen.per_class") rc.corpus.per_class = parse_size(key, v);
  else if (key == "gen.n_points") rc.corpus.n_points = parse_size(key, v);
  else if (key == "gen.noise") rc.corpus.noise = parse_real(key, v);
  else if (key == "ablate.seeds") rc.ablate_seeds = parse_size(key, v);
  else if (key == "ablate.table") rc.ablate_table = v;
  else if (key == "ablate.jobs") rc.jobs = parse_size(key, v);
  else if (key == "eval.split") rc.eval_split = v;
  else throw ConfigError("unknown setting '" + key + "'");
}

/// Parses `key = value` lines; `#` starts a comment.
inline void apply_config_text(RunConfig& rc, std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto text = std::string(detail::trim(line));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = std::string(detail::trim(std::string_view(text).substr(0, eq)));
    const auto value = std::string(detail::trim(std::string_view(text).substr(eq + 1)));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    try {
      apply_setting(rc, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& rc, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  apply_config_text(rc, in, path.string());
}

/// Every setting with its effective value, in a fixed order.
inline std::vector<std::pair<std::string, std::string>> resolved_settings(const RunConfig& rc) {
  auto num = [](double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  };
  std::vector<std::pair<std::string, std::string>> s{
      {"seed", std::to_string(rc.seed)},
      {"data", rc.data.string()},
      {"out", rc.out.string()},
      {"normals", rc.normals ? "true" : "false"},
      {"train.epochs", std::to_string(rc.epochs)},
      {"train.batch_size", std::to_string(rc.batch_size)},
      {"train.lr", num(rc.adam.lr)},
      {"train.beta1", num(rc.adam.beta1)},
      {"train.beta2", num(rc.adam.beta2)},
      {"train.eps", num(rc.adam.eps)},
      {"gen.classes", std::to_string(rc.corpus.classes)},
      {"gen.per_class", std::to_string(rc.corpus.per_class)},
      {"gen.n_points", std::to_string(rc.corpus.n_points)},
      {"gen.noise", num(rc.corpus.noise)},
      {"ablate.seeds", std::to_string(rc.ablate_seeds)},
      {"ablate.table", rc.ablate_table},
      {"ablate.jobs", std::to_string(rc.jobs)},
      {"eval.split", rc.eval_split},
  };
  for (auto& kv : model_settings(rc.model)) s.push_back(std::move(kv));
  return s;
}

/// `# key = value` lines, used both for the log and as CSV provenance.
inline std::string provenance(const RunConfig& rc, const std::string& command) {
  std::ostringstream os;
  os << "# command = " << command << '\n';
  for (const auto& [k, v] : resolved_settings(rc)) os << "# " << k << " = " << v << '\n';
  return os.str();
}

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// The dataset as the model sees it, with the class count reconciled
/// against the configuration.
inline Dataset load_for(RunConfig& rc) {
  if (rc.data.empty()) throw ConfigError("--data is required");
  if (rc.normals) rc.model.use_normals = true;
  auto data = load_dataset(rc.data, rc.model.use_normals);
  const std::size_t c = data.class_names.size();
  if (rc.explicit_keys.count("model.num_classes") && rc.model.num_classes != c)
    throw ConfigError("model.num_classes = " + std::to_string(rc.model.num_classes) + " but the dataset has " +
                      std::to_string(c) + " classes");
  rc.model.num_classes = c;
  rc.model.class_names = data.class_names;
  return data;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

inline Manifest cmd_gen_data(const RunConfig& rc, std::ostream& log) {
  if (rc.out.empty()) throw ConfigError("gen-data needs --out <dir>");
  log << provenance(rc, "gen-data");
  auto opt = rc.corpus;
  opt.seed = rc.seed;
  const auto manifest = generate_corpus(rc.out, opt);
  std::size_t train = 0;
  for (const auto& e : manifest.entries) train += e.split == Split::train;
  log << "wrote " << manifest.entries.size() << " clouds (" << train << " train, " << manifest.entries.size() - train
      << " test) to " << rc.out.string() << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::size_t best_epoch = 0;
  double best_acc = -1;
};

inline nlohmann::json training_meta(std::size_t epoch, std::uint64_t seed, const TrainResult& r) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["seed"] = seed;
  j["best_epoch"] = r.best_epoch;
  j["best_acc"] = r.best_acc;
  return j;
}

/// Trains on rc.data.  Writes the best-accuracy checkpoint to rc.out, the
/// latest state to rc.out + ".last" and the metrics CSV to `metrics_path`
/// (appending when resuming).  `resume` names a checkpoint whose model,
/// optimizer state and epoch counter are continued.
inline TrainResult cmd_train(RunConfig rc, const std::filesystem::path& metrics_path,
                             const std::optional<std::filesystem::path>& resume, std::ostream& log) {
  if (rc.out.empty()) throw ConfigError("train needs --out <checkpoint>");
  if (rc.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  const auto data = detail::load_for(rc);
  rc.model.validate();
  log << provenance(rc, "train");

  std::size_t start_epoch = 0;
  TrainResult result;
  std::optional<DNet<float>> model;
  AdamState<float> adam;
  if (resume) {
    const auto ck = read_checkpoint(*resume);
    require_same_config(ck.config, rc.model);
    model.emplace(model_from_checkpoint(ck));
    if (auto st = restore_optimizer(*model, ck)) adam = std::move(*st);
    start_epoch = ck.training.value("epoch", std::size_t{0});
    result.best_epoch = ck.training.value("best_epoch", std::size_t{0});
    result.best_acc = ck.training.value("best_acc", -1.0);
    log << "resuming from " << resume->string() << " after epoch " << start_epoch << '\n';
  } else {
    model.emplace(rc.model, derive_seed(rc.seed, {0x1417}));
  }

  const bool append = resume && std::filesystem::exists(metrics_path);
  std::ofstream csv(metrics_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write metrics log '" + metrics_path.string() + "'");
  if (!append) csv << provenance(rc, "train") << "epoch,train_loss,test_acc\n" << std::flush;

  const std::filesystem::path last_path = rc.out.string() + ".last";
  if (rc.epochs == 0 && !resume) {
    write_checkpoint(rc.out, make_checkpoint(*model, &adam, training_meta(0, rc.seed, result)));
    write_checkpoint(last_path, make_checkpoint(*model, &adam, training_meta(0, rc.seed, result)));
  }

  TrainOptions opt;
  opt.epochs = rc.epochs;
  opt.batch_size = rc.batch_size;
  opt.adam = rc.adam;
  opt.seed = rc.seed;
  train_epochs(*model, adam, data, opt, start_epoch, [&](const EpochMetrics& m) {
    csv << m.epoch << ',' << detail::fixed(m.train_loss) << ',' << detail::fixed(m.test_acc) << '\n' << std::flush;
    log << "epoch " << m.epoch << "  loss " << detail::fixed(m.train_loss, 4) << "  test_acc "
        << detail::fixed(m.test_acc, 4) << '\n';
    result.metrics.push_back(m);
    const bool best = m.test_acc > result.best_acc;
    if (best) {
      result.best_acc = m.test_acc;
      result.best_epoch = m.epoch;
    }
    const auto ck = make_checkpoint(*model, &adam, training_meta(m.epoch, rc.seed, result));
    if (best) write_checkpoint(rc.out, ck);
    write_checkpoint(last_path, ck);
  });
  if (!result.metrics.empty())
    log << "best test accuracy " << detail::fixed(result.best_acc, 4) << " at epoch " << result.best_epoch << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// eval

inline EvalReport cmd_eval(RunConfig rc, const std::filesystem::path& checkpoint, std::ostream& out,
                           std::ostream& log) {
  const auto ck = read_checkpoint(checkpoint);
  rc.model = ck.config;
  log << provenance(rc, "eval");
  if (rc.data.empty()) throw ConfigError("--data is required");
  const auto data = load_dataset(rc.data, ck.config.use_normals);
  if (data.class_names.size() != ck.config.num_classes)
    throw ConfigError("checkpoint has " + std::to_string(ck.config.num_classes) + " classes but the dataset has " +
                      std::to_string(data.class_names.size()));
  if (!ck.config.class_names.empty() && ck.config.class_names != data.class_names)
    throw ConfigError("dataset class names differ from the checkpoint's");
  std::vector<Sample> samples;
  if (rc.eval_split == "train" || rc.eval_split == "all") samples.insert(samples.end(), data.train.begin(), data.train.end());
  if (rc.eval_split == "test" || rc.eval_split == "all") samples.insert(samples.end(), data.test.begin(), data.test.end());
  if (rc.eval_split != "train" && rc.eval_split != "test" && rc.eval_split != "all")
    throw ConfigError("eval.split must be train, test or all");
  const auto model = model_from_checkpoint(ck);
  const auto report = evaluate(model, samples);
  out << "split " << rc.eval_split << ": " << report.correct << " / " << report.total << " correct\n";
  out << "instance accuracy " << detail::fixed(report.accuracy(), 4) << '\n';
  double mean = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < report.class_total.size(); ++c) {
    out << "  " << std::left << std::setw(12) << data.class_names[c] << std::right << ' '
        << detail::fixed(report.class_accuracy(c), 4) << "  (" << report.class_correct[c] << '/'
        << report.class_total[c] << ")\n";
    if (report.class_total[c]) {
      mean += report.class_accuracy(c);
      ++present;
    }
  }
  out << "mean class accuracy " << detail::fixed(present ? mean / static_cast<double>(present) : 0.0, 4) << '\n';
  return report;
}

// ---------------------------------------------------------------------------
// score

/// Distinction scores of one cloud as PLY; optionally the fusion weights as
/// CSV (one row per branch, one column per channel).
inline void cmd_score(const RunConfig& rc, const std::filesystem::path& cloud_path,
                      const std::filesystem::path& checkpoint, const std::optional<std::filesystem::path>& weights,
                      std::ostream& log) {
  if (rc.out.empty()) throw ConfigError("score needs --out <file.ply>");
  const auto ck = read_checkpoint(checkpoint);
  RunConfig shown = rc;
  shown.model = ck.config;
  log << provenance(shown, "score");
  const auto model = model_from_checkpoint(ck);
  auto cloud = load_cloud(cloud_path);
  if (ck.config.use_normals && !cloud.has_normals())
    throw DataError("the checkpoint expects normals but " + cloud_path.string() + " has 3 columns");
  if (!ck.config.use_normals) cloud.normals.clear();

  NoGradGuard no_grad;
  const auto trace = model.forward(cloud, {false, 0, false});
  if (!trace.alpha)
    throw ConfigError("the model computes no distinction scores (sampling = " + to_string(ck.config.sampling) +
                      ", sets = " + sets_to_string(ck.config.sets) + ")");
  export_ply_scalar(cloud, trace.alpha->values(), rc.out);
  log << "wrote " << cloud.size() << " distinction scores to " << rc.out.string() << '\n';

  if (weights) {
    if (!trace.psi) throw ConfigError("the model has no learned fusion weights (fusion = " +
                                      to_string(ck.config.fusion.mode) + ")");
    std::ofstream csv(*weights);
    if (!csv) throw IoError("cannot write '" + weights->string() + "'");
    csv << provenance(shown, "score");
    const auto& psi = *trace.psi;
    const std::size_t b = psi.dim(0), w = psi.dim(1);
    csv << "branch";
    for (std::size_t c = 0; c < w; ++c) csv << ",c" << c;
    csv << '\n';
    for (std::size_t r = 0; r < b; ++r) {
      csv << sets_to_string(trace.branch_sets[r]);
      for (std::size_t c = 0; c < w; ++c) csv << ',' << detail::format_float(psi.values()[r * w + c]);
      csv << '\n';
    }
    if (!csv) throw IoError("failed writing '" + weights->string() + "'");
    log << "wrote " << b << " x " << w << " fusion weights to " << weights->string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// ablate

struct AblationCell {
  std::string id;
  ModelConfig config;
  std::vector<double> accuracies;
  std::string error;
};

/// The grid {sampling} x {gate} x {fusion} x {sets} followed by the k and
/// N1-ratio sweeps around the base configuration.
inline std::vector<AblationCell> ablation_cells(const ModelConfig& base, const std::string& table) {
  if (table != "all" && table != "grid" && table != "k" && table != "n1")
    throw ConfigError("ablate.table must be grid, k, n1 or all");
  std::vector<AblationCell> cells;
  if (table == "all" || table == "grid") {
    for (auto sampling : {Sampling::sps, Sampling::fps, Sampling::random})
      for (bool gate : {true, false})
        for (auto fusion : {FusionMode::learned, FusionMode::max, FusionMode::mean, FusionMode::concat})
          for (unsigned sets : {unsigned{kRawSet}, kRawSet | kHighSet, unsigned{kHighSet}, kHighSet | kLowSet,
                                unsigned{kAllSets}}) {
            AblationCell c;
            c.config = base;
            c.config.sampling = sampling;
            c.config.sgc.gating = gate;
            c.config.fusion.mode = fusion;
            c.config.sets = sets;
            c.id = "grid/" + to_string(sampling) + "/" + (gate ? "gate" : "nogate") + "/" + to_string(fusion) + "/" +
                   sets_to_string(sets);
            cells.push_back(std::move(c));
          }
  }
  if (table == "all" || table == "k")
    for (std::size_t k : {5, 10, 15, 20, 25, 30}) {
      AblationCell c;
      c.config = base;
      c.config.sgc.k = k;
      c.id = "k/" + std::to_string(k);
      cells.push_back(std::move(c));
    }
  if (table == "all" || table == "n1")
    for (double r : {0.125, 0.1875, 0.25, 0.3125, 0.375}) {
      AblationCell c;
      c.config = base;
      c.config.n1 = 0;
      c.config.n1_ratio = r;
      std::ostringstream os;
      os << "n1/" << r;
      c.id = os.str();
      cells.push_back(std::move(c));
    }
  return cells;
}

/// Published reference accuracies (ModelNet40, 1024 points) recorded next
/// to the desk-scale table.  They are annotations, not expectations.
inline const char* kAblationReferences =
    "# reference k=20 -> 93.15 (neighbour count sweep: k=5 91.94, 10 92.54, 15 92.75, 20 93.15, 25 93.07, 30 92.75)\n"
    "# reference N1=320 -> 93.15 (set size sweep at 1024 points: 384 92.83, 320 93.15, 256 92.63, 192 92.79, "
    "128 92.34)\n"
    "# reference fusion Max -> 92.34\n"
    "# reference sets ALL -> 93.15 (P_R 92.34, P_R+P_H 92.54, P_H 90.7, P_H+P_L 92.1, ALL 93.15)\n";

/// Final-epoch test accuracy of one training run.
inline double train_and_score(const ModelConfig& config, const Dataset& data, const RunConfig& rc,
                              std::uint64_t seed) {
  DNet<float> model(config, derive_seed(seed, {0x1417}));
  AdamState<float> adam;
  TrainOptions opt;
  opt.epochs = rc.epochs;
  opt.batch_size = rc.batch_size;
  opt.adam = rc.adam;
  opt.seed = seed;
  train_epochs(model, adam, data, opt);
  if (data.test.empty()) throw DataError("ablation needs a test split");
  return evaluate(model, data.test).accuracy();
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

/// Runs every cell over seeds rc.seed, rc.seed+1, ... and writes the CSV to
/// rc.out.  A failing cell is recorded with nan accuracies and a comment
/// line; the remaining cells still run.  With rc.jobs > 1 cells run on
/// worker threads; results do not depend on the job count.
inline std::vector<AblationCell> cmd_ablate(RunConfig rc, std::ostream& log) {
  if (rc.out.empty()) throw ConfigError("ablate needs --out <file.csv>");
  if (rc.ablate_seeds == 0) throw ConfigError("ablate.seeds must be positive");
  const auto data = detail::load_for(rc);
  log << provenance(rc, "ablate");
  auto cells = ablation_cells(rc.model, rc.ablate_table);

  std::mutex mu;
  std::size_t next = 0, done = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next == cells.size()) return;
        i = next++;
      }
      auto& cell = cells[i];
      try {
        cell.config.validate();
        for (std::size_t s = 0; s < rc.ablate_seeds; ++s)
          cell.accuracies.push_back(train_and_score(cell.config, data, rc, rc.seed + s));
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      std::lock_guard lock(mu);
      ++done;
      const auto [m, sd] = mean_std(cell.accuracies);
      log << "[" << done << "/" << cells.size() << "] " << cell.id << "  "
          << (cell.error.empty() ? detail::fixed(m, 4) + " +- " + detail::fixed(sd, 4) : "failed: " + cell.error)
          << '\n';
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(rc.jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::ofstream csv(rc.out);
  if (!csv) throw IoError("cannot write '" + rc.out.string() + "'");
  csv << provenance(rc, "ablate") << kAblationReferences;
  for (const auto& c : cells)
    if (!c.error.empty()) csv << "# cell " << c.id << " failed: " << c.error << '\n';
  csv << "cell_id,sampling,gate,fusion,sets,k,n1_ratio,seed_count,mean_acc,std_acc\n";
  for (const auto& c : cells) {
    const auto [m, sd] = c.error.empty() ? mean_std(c.accuracies) : std::pair{std::nan(""), std::nan("")};
    csv << c.id << ',' << to_string(c.config.sampling) << ',' << (c.config.sgc.gating ? "on" : "off") << ','
        << to_string(c.config.fusion.mode) << ',' << sets_to_string(c.config.sets) << ',' << c.config.sgc.k << ','
        << c.config.n1_ratio << ',' << c.accuracies.size() << ',' << detail::fixed(m) << ',' << detail::fixed(sd)
        << '\n';
  }
  if (!csv) throw IoError("failed writing '" + rc.out.string() + "'");
  return cells;
}

}  // namespace dnet
