// dnet: dataset generation, training, evaluation, score export, ablations.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dnet/cli.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data, out;
  bool normals = false;
  std::vector<std::string> sets;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
};

void add_shared(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--data", f.data, "dataset root (contains manifest.csv)");
  cmd->add_option("--out", f.out, "output path");
  cmd->add_flag("--normals", f.normals, "use 6-column clouds (xyz + normals)");
  cmd->add_option("--set", f.sets, "override one setting, key=value (repeatable)");
}

void add_training(CLI::App* cmd, Flags& f) {
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-size", f.batch_size, "clouds per batch");
  cmd->add_option("--lr", f.lr, "ADAM learning rate");
}

// File first, then --set, then the dedicated flags.
dnet::RunConfig resolve(const Flags& f) {
  dnet::RunConfig rc;
  if (!f.config.empty()) dnet::apply_config_file(rc, f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw dnet::ConfigError("--set expects key=value, got '" + kv + "'");
    dnet::apply_setting(rc, std::string(dnet::detail::trim(std::string_view(kv).substr(0, eq))),
                        std::string(dnet::detail::trim(std::string_view(kv).substr(eq + 1))));
  }
  if (f.seed) dnet::apply_setting(rc, "seed", std::to_string(*f.seed));
  if (f.data) dnet::apply_setting(rc, "data", *f.data);
  if (f.out) dnet::apply_setting(rc, "out", *f.out);
  if (f.normals) dnet::apply_setting(rc, "normals", "true");
  if (f.epochs) dnet::apply_setting(rc, "train.epochs", std::to_string(*f.epochs));
  if (f.batch_size) dnet::apply_setting(rc, "train.batch_size", std::to_string(*f.batch_size));
  if (f.lr) {
    std::ostringstream os;
    os << std::setprecision(17) << *f.lr;
    dnet::apply_setting(rc, "train.lr", os.str());
  }
  if (rc.normals) rc.model.use_normals = true;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D-Net point cloud classification"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic labelled corpus");
  add_shared(gen, f);
  std::optional<std::size_t> classes, per_class, points;
  std::optional<double> noise;
  gen->add_option("--classes", classes, "number of shape classes (1-8)");
  gen->add_option("--per-class", per_class, "instances per class");
  gen->add_option("--points", points, "points per cloud");
  gen->add_option("--noise", noise, "Gaussian noise sigma");

  auto* train = app.add_subcommand("train", "train a classifier");
  add_shared(train, f);
  add_training(train, f);
  std::string metrics;
  std::optional<std::string> resume;
  train->add_option("--metrics", metrics, "metrics CSV (default: <out>.metrics.csv)");
  train->add_option("--resume", resume, "continue from a checkpoint (normally <out>.last)");

  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset");
  add_shared(eval, f);
  std::string checkpoint;
  std::optional<std::string> split;
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--split", split, "train, test or all");

  auto* score = app.add_subcommand("score", "export per-point distinction scores as PLY");
  add_shared(score, f);
  std::string cloud;
  std::optional<std::string> weights;
  score->add_option("--cloud", cloud, "input cloud file")->required();
  score->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  score->add_option("--dump-weights", weights, "also write the fusion weights as CSV");

  auto* ablate = app.add_subcommand("ablate", "run the ablation tables");
  add_shared(ablate, f);
  add_training(ablate, f);
  std::optional<std::size_t> seeds, jobs;
  std::optional<std::string> table;
  ablate->add_option("--seeds", seeds, "seeds per cell");
  ablate->add_option("--table", table, "grid, k, n1 or all");
  ablate->add_option("--jobs", jobs, "cells trained concurrently");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    auto rc = resolve(f);
    if (classes) dnet::apply_setting(rc, "gen.classes", std::to_string(*classes));
    if (per_class) dnet::apply_setting(rc, "gen.per_class", std::to_string(*per_class));
    if (points) dnet::apply_setting(rc, "gen.n_points", std::to_string(*points));
    if (noise) {
      std::ostringstream os;
      os << std::setprecision(17) << *noise;
      dnet::apply_setting(rc, "gen.noise", os.str());
    }
    if (split) dnet::apply_setting(rc, "eval.split", *split);
    if (seeds) dnet::apply_setting(rc, "ablate.seeds", std::to_string(*seeds));
    if (table) dnet::apply_setting(rc, "ablate.table", *table);
    if (jobs) dnet::apply_setting(rc, "ablate.jobs", std::to_string(*jobs));

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-data") {
      dnet::cmd_gen_data(rc, std::cerr);
    } else if (name == "train") {
      if (rc.out.empty()) throw dnet::ConfigError("train needs --out <checkpoint>");
      const std::filesystem::path m = metrics.empty() ? rc.out.string() + ".metrics.csv" : metrics;
      std::optional<std::filesystem::path> from;
      if (resume) from = *resume;
      dnet::cmd_train(rc, m, from, std::cerr);
    } else if (name == "eval") {
      dnet::cmd_eval(rc, checkpoint, std::cout, std::cerr);
    } else if (name == "score") {
      std::optional<std::filesystem::path> w;
      if (weights) w = *weights;
      dnet::cmd_score(rc, cloud, checkpoint, w, std::cerr);
    } else if (name == "ablate") {
      dnet::cmd_ablate(rc, std::cerr);
    }
  } catch (const dnet::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const dnet::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const dnet::ParameterError& e) {
    std::cerr << "invalid parameter: " << e.what() << '\n';
    return kUsage;
  } catch (const dnet::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
