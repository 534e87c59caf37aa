#pragma once

// Model configuration, its JSON form, and the dotted `key = value` settings
// accepted by configuration files and command-line overrides.

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dnet/fusion.hpp"
#include "dnet/sgc.hpp"
#include "dnet/sps.hpp"
#include "json.hpp"

namespace dnet {

enum class Sampling { sps, fps, random };

/// Point sets feeding the branches: the raw cloud and the high / low
/// distinctive sets.
enum PointSetBits : unsigned { kRawSet = 1u, kHighSet = 2u, kLowSet = 4u, kAllSets = 7u };

struct ModelConfig {
  std::size_t num_classes = 8;
  std::vector<std::string> class_names;
  bool use_normals = false;

  std::size_t n1 = 0;          ///< distinctive set size; 0 derives it from n1_ratio
  double n1_ratio = 0.3125;    ///< 320 of 1024 points
  Sampling sampling = Sampling::sps;
  unsigned sets = kAllSets;

  SpsConfig sps;
  SgcConfig sgc;
  TransformConfig transform;
  bool transform_per_branch = false;
  FusionConfig fusion;

  std::vector<std::size_t> head_widths{512, 256};
  double dropout = 0.5;

  std::size_t num_part_classes = 0;  ///< > 0 adds the per-point segmentation head
  std::vector<std::size_t> seg_widths{256, 128};

  std::size_t input_width() const { return use_normals ? 6 : 3; }

  /// Distinctive set size for a cloud of n points.
  std::size_t n1_for(std::size_t n) const {
    const std::size_t v = n1 ? n1 : static_cast<std::size_t>(std::lround(n1_ratio * static_cast<double>(n)));
    return std::max<std::size_t>(v, 1);
  }

  std::size_t branch_count() const {
    return ((sets & kRawSet) ? 1 : 0) + ((sets & kHighSet) ? 1 : 0) + ((sets & kLowSet) ? 1 : 0);
  }
  bool uses_distinctive_sets() const { return (sets & (kHighSet | kLowSet)) != 0; }

  std::size_t global_width() const {
    return fusion.mode == FusionMode::concat ? branch_count() * sgc.lift_width : sgc.lift_width;
  }

  void validate() const {
    if (num_classes < 1) throw ConfigError("num_classes must be positive");
    if (!class_names.empty() && class_names.size() != num_classes)
      throw ConfigError("class_names lists " + std::to_string(class_names.size()) + " names for " +
                        std::to_string(num_classes) + " classes");
    if (sets == 0 || sets > kAllSets) throw ConfigError("at least one point set must be used");
    if (sgc.widths.empty()) throw ConfigError("sgc.widths must not be empty");
    if (sgc.k < 1) throw ConfigError("sgc.k must be positive");
    if (!(n1_ratio > 0 && n1_ratio <= 0.5) && n1 == 0) throw ConfigError("model.n1_ratio must lie in (0, 0.5]");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("model.dropout must lie in [0, 1)");
    if (sps.dim < 1 || sgc.lift_width < 1 || fusion.hidden < 1) throw ConfigError("layer widths must be positive");
  }
};

// ---------------------------------------------------------------------------
// String forms

inline std::string to_string(Sampling s) {
  switch (s) {
    case Sampling::sps: return "sps";
    case Sampling::fps: return "fps";
    case Sampling::random: return "random";
  }
  return "?";
}
inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::learned: return "learned";
    case FusionMode::max: return "max";
    case FusionMode::mean: return "mean";
    case FusionMode::concat: return "concat";
  }
  return "?";
}
inline std::string to_string(GateMode g) { return g == GateMode::scalar ? "scalar" : "channel"; }
inline std::string to_string(NormalizeAxis a) { return a == NormalizeAxis::column ? "column" : "row"; }

inline std::string sets_to_string(unsigned sets) {
  if (sets == kAllSets) return "ALL";
  std::string out;
  auto add = [&](const char* name) { out += out.empty() ? name : std::string("+") + name; };
  if (sets & kRawSet) add("P_R");
  if (sets & kHighSet) add("P_H");
  if (sets & kLowSet) add("P_L");
  return out;
}

inline Sampling parse_sampling(const std::string& s) {
  if (s == "sps") return Sampling::sps;
  if (s == "fps") return Sampling::fps;
  if (s == "random" || s == "rs") return Sampling::random;
  throw ConfigError("unknown sampling '" + s + "' (sps|fps|random)");
}
inline FusionMode parse_fusion(const std::string& s) {
  if (s == "learned") return FusionMode::learned;
  if (s == "max") return FusionMode::max;
  if (s == "mean") return FusionMode::mean;
  if (s == "concat") return FusionMode::concat;
  throw ConfigError("unknown fusion mode '" + s + "' (learned|max|mean|concat)");
}
inline GateMode parse_gate(const std::string& s) {
  if (s == "scalar") return GateMode::scalar;
  if (s == "channel") return GateMode::channel;
  throw ConfigError("unknown gate mode '" + s + "' (scalar|channel)");
}
inline NormalizeAxis parse_axis(const std::string& s) {
  if (s == "column") return NormalizeAxis::column;
  if (s == "row") return NormalizeAxis::row;
  throw ConfigError("unknown normalize axis '" + s + "' (column|row)");
}
inline unsigned parse_sets(const std::string& s) {
  if (s == "ALL" || s == "all") return kAllSets;
  unsigned bits = 0;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part == "P_R" || part == "P")
      bits |= kRawSet;
    else if (part == "P_H")
      bits |= kHighSet;
    else if (part == "P_L")
      bits |= kLowSet;
    else
      throw ConfigError("unknown point set '" + part + "' (P_R, P_H, P_L joined by '+', or ALL)");
  }
  if (!bits) throw ConfigError("empty point set selection");
  return bits;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    while (!part.empty() && part.front() == ' ') part.erase(part.begin());
    while (!part.empty() && part.back() == ' ') part.pop_back();
    out.push_back(parse_size(key, part));
  }
  return out;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

/// Applies one dotted setting to the model configuration.  Returns false
/// when the key does not belong to the model.
inline bool apply_model_setting(ModelConfig& c, const std::string& key, const std::string& v) {
  if (key == "model.num_classes") c.num_classes = parse_size(key, v);
  else if (key == "model.use_normals") c.use_normals = parse_bool(key, v);
  else if (key == "model.n1") c.n1 = parse_size(key, v);
  else if (key == "model.n1_ratio") c.n1_ratio = parse_real(key, v);
  else if (key == "model.sampling") c.sampling = parse_sampling(v);
  else if (key == "model.sets") c.sets = parse_sets(v);
  else if (key == "model.head_widths") c.head_widths = parse_sizes(key, v);
  else if (key == "model.dropout") c.dropout = parse_real(key, v);
  else if (key == "model.num_part_classes") c.num_part_classes = parse_size(key, v);
  else if (key == "model.seg_widths") c.seg_widths = parse_sizes(key, v);
  else if (key == "sps.dim") c.sps.dim = parse_size(key, v);
  else if (key == "sps.normalize_axis") c.sps.normalize_axis = parse_axis(v);
  else if (key == "sgc.k") c.sgc.k = parse_size(key, v);
  else if (key == "sgc.widths") c.sgc.widths = parse_sizes(key, v);
  else if (key == "sgc.dynamic_graph") c.sgc.dynamic_graph = parse_bool(key, v);
  else if (key == "sgc.gating") c.sgc.gating = parse_bool(key, v);
  else if (key == "sgc.gate") c.sgc.gate = parse_gate(v);
  else if (key == "sgc.lift_width") c.sgc.lift_width = parse_size(key, v);
  else if (key == "sgc.transform_per_branch") c.transform_per_branch = parse_bool(key, v);
  else if (key == "transform.edge_width") c.transform.edge_width = parse_size(key, v);
  else if (key == "transform.point_width") c.transform.point_width = parse_size(key, v);
  else if (key == "transform.hidden_width") c.transform.hidden_width = parse_size(key, v);
  else if (key == "fusion.mode") c.fusion.mode = parse_fusion(v);
  else if (key == "fusion.hidden") c.fusion.hidden = parse_size(key, v);
  else return false;
  return true;
}

/// Every model setting with its current value, in a fixed order.
inline std::vector<std::pair<std::string, std::string>> model_settings(const ModelConfig& c) {
  auto num = [](double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  };
  return {
      {"model.num_classes", std::to_string(c.num_classes)},
      {"model.use_normals", c.use_normals ? "true" : "false"},
      {"model.n1", std::to_string(c.n1)},
      {"model.n1_ratio", num(c.n1_ratio)},
      {"model.sampling", to_string(c.sampling)},
      {"model.sets", sets_to_string(c.sets)},
      {"model.head_widths", join_sizes(c.head_widths)},
      {"model.dropout", num(c.dropout)},
      {"model.num_part_classes", std::to_string(c.num_part_classes)},
      {"model.seg_widths", join_sizes(c.seg_widths)},
      {"sps.dim", std::to_string(c.sps.dim)},
      {"sps.normalize_axis", to_string(c.sps.normalize_axis)},
      {"sgc.k", std::to_string(c.sgc.k)},
      {"sgc.widths", join_sizes(c.sgc.widths)},
      {"sgc.dynamic_graph", c.sgc.dynamic_graph ? "true" : "false"},
      {"sgc.gating", c.sgc.gating ? "true" : "false"},
      {"sgc.gate", to_string(c.sgc.gate)},
      {"sgc.lift_width", std::to_string(c.sgc.lift_width)},
      {"sgc.transform_per_branch", c.transform_per_branch ? "true" : "false"},
      {"transform.edge_width", std::to_string(c.transform.edge_width)},
      {"transform.point_width", std::to_string(c.transform.point_width)},
      {"transform.hidden_width", std::to_string(c.transform.hidden_width)},
      {"fusion.mode", to_string(c.fusion.mode)},
      {"fusion.hidden", std::to_string(c.fusion.hidden)},
  };
}

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  for (const auto& [k, v] : model_settings(c)) j["settings"][k] = v;
  j["class_names"] = c.class_names;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.contains("settings") || !j["settings"].is_object()) throw ConfigError("config JSON lacks a settings object");
  for (const auto& [k, v] : j["settings"].items()) {
    if (!v.is_string()) throw ConfigError("config setting " + k + " is not a string");
    if (!apply_model_setting(c, k, v.get<std::string>())) throw ConfigError("unknown config setting " + k);
  }
  if (j.contains("class_names")) c.class_names = j["class_names"].get<std::vector<std::string>>();
  c.validate();
  return c;
}

}  // namespace dnet
