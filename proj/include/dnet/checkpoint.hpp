#pragma once

// Binary checkpoints: "DNET", u32 version, length-prefixed JSON header,
// u32 tensor count, then (name, u8 rank, u32 dims, f32 values) per tensor.
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dnet/io.hpp"
#include "dnet/model.hpp"
#include "dnet/optim.hpp"
#include "json.hpp"

namespace dnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  nlohmann::json training = nlohmann::json::object();  ///< epoch, seed, metrics
  std::uint64_t optimizer_step = 0;                      ///< 0: no optimizer state stored
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw TruncatedError("checkpoint " + path_ + " is truncated while reading " + what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(*take(1, what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    return std::string(take(n, what), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Snapshot of a model's parameters, optionally with the optimizer moments
/// (stored as extra tensors "adam.m/<name>" and "adam.v/<name>").
inline Checkpoint make_checkpoint(const DNet<float>& model, const AdamState<float>* adam = nullptr,
                                  nlohmann::json training = nlohmann::json::object()) {
  Checkpoint ck;
  ck.config = model.config();
  ck.training = std::move(training);
  const auto params = model.named_parameters();
  for (const auto& p : params) ck.tensors.push_back({p.name, p.tensor.shape(), p.tensor.values()});
  if (adam && adam->step > 0) {
    if (adam->m.size() != params.size()) throw StateError("optimizer state does not match the model");
    ck.optimizer_step = adam->step;
    for (std::size_t i = 0; i < params.size(); ++i)
      ck.tensors.push_back({"adam.m/" + params[i].name, params[i].tensor.shape(), adam->m[i]});
    for (std::size_t i = 0; i < params.size(); ++i)
      ck.tensors.push_back({"adam.v/" + params[i].name, params[i].tensor.shape(), adam->v[i]});
  }
  return ck;
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out = "DNET";
  detail::put_u32(out, ck.version);
  nlohmann::json header;
  header["model"] = to_json(ck.config);
  header["training"] = ck.training;
  header["optimizer_step"] = ck.optimizer_step;
  detail::put_string(out, header.dump());
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.shape.size() > 255) throw DimensionError("tensor " + t.name + " has too many axes to store");
    if (numel(t.shape) != t.values.size()) throw DimensionError("tensor " + t.name + " shape/value mismatch");
    detail::put_string(out, t.name);
    out.push_back(static_cast<char>(t.shape.size()));
    for (auto d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  detail::ByteReader in(bytes, path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "DNET", 4) != 0)
    throw FormatError("not a checkpoint (bad magic bytes): " + path);
  in.take(4, "magic");
  Checkpoint ck;
  ck.version = in.u32("version");
  if (ck.version != kCheckpointVersion)
    throw VersionError("checkpoint " + path + " has unsupported version " + std::to_string(ck.version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.str("config block"));
    ck.config = model_config_from_json(header.at("model"));
    ck.training = header.value("training", nlohmann::json::object());
    ck.optimizer_step = header.value("optimizer_step", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path + " has a malformed config block: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint " + path + " has an invalid config: " + e.what());
  }
  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = in.str("tensor name");
    const std::uint8_t rank = in.u8("tensor rank");
    std::size_t total = 1;
    for (std::uint8_t a = 0; a < rank; ++a) {
      t.shape.push_back(in.u32("tensor dims"));
      total *= t.shape.back();
    }
    if (total > bytes.size()) throw TruncatedError("checkpoint " + path + " is truncated in tensor " + t.name);
    const char* raw = in.take(total * 4, "tensor values");
    t.values.resize(total);
    for (std::size_t j = 0; j < total; ++j) {
      const auto* p = reinterpret_cast<const unsigned char*>(raw + 4 * j);
      t.values[j] = std::bit_cast<float>(std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24);
    }
    ck.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw FormatError("checkpoint " + path + " has trailing bytes");
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  auto out = detail::open_out(path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write checkpoint " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

/// Throws ConfigMismatchError naming the first setting that differs.
inline void require_same_config(const ModelConfig& stored, const ModelConfig& expected) {
  const auto a = model_settings(stored), b = model_settings(expected);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].second != b[i].second)
      throw ConfigMismatchError("checkpoint has " + a[i].first + " = " + a[i].second + " but the configuration asks for " +
                                b[i].second);
}

/// Copies the stored parameters into model.  Every tensor is validated
/// before any value is written, so a failure leaves the model untouched.
inline void restore_parameters(DNet<float>& model, const Checkpoint& ck) {
  const auto params = model.named_parameters();
  std::vector<const StoredTensor*> source;
  for (const auto& p : params) {
    const auto* t = ck.find(p.name);
    if (!t) throw TensorMismatchError("checkpoint lacks parameter " + p.name);
    if (t->shape != p.tensor.shape())
      throw TensorMismatchError("parameter " + p.name + " has shape " + to_string(t->shape) + " in the checkpoint but " +
                                to_string(p.tensor.shape()) + " in the model");
    source.push_back(t);
  }
  std::size_t expected = params.size() * (ck.optimizer_step ? 3 : 1);
  if (ck.tensors.size() != expected)
    throw TensorMismatchError("checkpoint stores " + std::to_string(ck.tensors.size()) + " tensors, expected " +
                              std::to_string(expected));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    std::copy(source[i]->values.begin(), source[i]->values.end(), dst.begin());
  }
}

/// Optimizer moments stored with the checkpoint, if any.
inline std::optional<AdamState<float>> restore_optimizer(const DNet<float>& model, const Checkpoint& ck) {
  if (!ck.optimizer_step) return std::nullopt;
  AdamState<float> st;
  st.step = ck.optimizer_step;
  for (const auto& p : model.named_parameters()) {
    const auto* m = ck.find("adam.m/" + p.name);
    const auto* v = ck.find("adam.v/" + p.name);
    if (!m || !v || m->values.size() != p.tensor.numel() || v->values.size() != p.tensor.numel())
      throw TensorMismatchError("optimizer state for " + p.name + " is missing or malformed");
    st.m.push_back(m->values);
    st.v.push_back(v->values);
  }
  return st;
}

/// A model built from the stored configuration with the stored parameters.
inline DNet<float> model_from_checkpoint(const Checkpoint& ck) {
  DNet<float> model(ck.config, 0);
  restore_parameters(model, ck);
  return model;
}

}  // namespace dnet
