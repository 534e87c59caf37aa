#pragma once

// Text formats: point cloud files, PLY scalar export and dataset manifests.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "dnet/geometry.hpp"

namespace dnet {

namespace detail {

inline std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto at = line.find(sep, start);
    out.push_back(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline float parse_float(std::string_view field, std::size_t line_no) {
  float v = 0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw ParseError("invalid number '" + std::string(field) + "'", line_no);
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline void renormalize_normals(std::vector<float>& normals) {
  for (std::size_t i = 0; i + 2 < normals.size(); i += 3) {
    const double len = std::sqrt(double(normals[i]) * normals[i] + double(normals[i + 1]) * normals[i + 1] +
                                 double(normals[i + 2]) * normals[i + 2]);
    if (len > 0)
      for (int d = 0; d < 3; ++d) normals[i + d] = static_cast<float>(normals[i + d] / len);
  }
}

}  // namespace detail

/// Parses "x y z" or "x y z nx ny nz" lines; '#' lines and blank lines are
/// skipped.  All data lines must have the same column count.
inline PointCloud parse_cloud(std::istream& in) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0, columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto fields = detail::split_whitespace(text);
    if (fields.size() != 3 && fields.size() != 6)
      throw ParseError("expected 3 or 6 columns, found " + std::to_string(fields.size()), line_no);
    if (columns && fields.size() != columns)
      throw ParseError("column count changed from " + std::to_string(columns) + " to " +
                           std::to_string(fields.size()),
                       line_no);
    columns = fields.size();
    for (std::size_t c = 0; c < 3; ++c) cloud.points.push_back(detail::parse_float(fields[c], line_no));
    for (std::size_t c = 3; c < columns; ++c) cloud.normals.push_back(detail::parse_float(fields[c], line_no));
  }
  if (cloud.points.empty()) throw ParseError("cloud file contains no points");
  detail::renormalize_normals(cloud.normals);
  return cloud;
}

inline PointCloud load_cloud(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  try {
    return parse_cloud(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Writes one point per line with shortest round-trip float formatting.
inline void write_cloud(std::ostream& out, const PointCloud& cloud, bool with_normals) {
  if (with_normals && !cloud.has_normals()) throw ParameterError("write_cloud: cloud has no normals");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      if (d) out << ' ';
      out << detail::format_float(cloud.points[3 * i + d]);
    }
    if (with_normals)
      for (int d = 0; d < 3; ++d) out << ' ' << detail::format_float(cloud.normals[3 * i + d]);
    out << '\n';
  }
}

inline void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, bool with_normals = false) {
  auto out = detail::open_out(path);
  write_cloud(out, cloud, with_normals);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

/// ASCII PLY with x, y, z and a per-vertex `distinction` scalar.
inline void export_ply_scalar(const PointCloud& cloud, std::span<const float> scores,
                              const std::filesystem::path& path) {
  if (scores.size() != cloud.size())
    throw ParameterError("export_ply_scalar: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(cloud.size()) + " points");
  auto out = detail::open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty float distinction\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i)
    out << detail::format_float(cloud.points[3 * i]) << ' ' << detail::format_float(cloud.points[3 * i + 1]) << ' '
        << detail::format_float(cloud.points[3 * i + 2]) << ' ' << detail::format_float(scores[i]) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

struct PlyScalarCloud {
  PointCloud cloud;
  std::vector<float> scores;
};

/// Reads an ASCII PLY vertex list with x, y, z and one further float property.
inline PlyScalarCloud load_ply_scalar(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::string line;
  std::size_t line_no = 0, vertices = 0;
  std::vector<std::string> props;
  bool header_done = false, seen_magic = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (!seen_magic) {
      if (text != "ply") throw ParseError("missing 'ply' magic", line_no);
      seen_magic = true;
      continue;
    }
    const auto f = detail::split_whitespace(text);
    if (f.empty() || f[0] == "comment") continue;
    if (f[0] == "format") {
      if (f.size() < 2 || f[1] != "ascii") throw ParseError("only ASCII PLY is supported", line_no);
    } else if (f[0] == "element") {
      if (f.size() != 3 || f[1] != "vertex") throw ParseError("unsupported element declaration", line_no);
      vertices = std::stoul(std::string(f[2]));
    } else if (f[0] == "property") {
      if (f.size() != 3) throw ParseError("malformed property", line_no);
      props.emplace_back(f[2]);
    } else if (f[0] == "end_header") {
      header_done = true;
      break;
    } else {
      throw ParseError("unexpected header line", line_no);
    }
  }
  if (!header_done) throw ParseError(path.string() + ": truncated PLY header");
  if (props.size() != 4 || props[0] != "x" || props[1] != "y" || props[2] != "z")
    throw ParseError(path.string() + ": expected properties x y z <scalar>");
  PlyScalarCloud out;
  for (std::size_t v = 0; v < vertices; ++v) {
    if (!std::getline(in, line)) throw ParseError(path.string() + ": fewer vertices than declared", line_no);
    ++line_no;
    const auto f = detail::split_whitespace(detail::trim(line));
    if (f.size() != 4) throw ParseError("expected 4 values per vertex", line_no);
    for (int d = 0; d < 3; ++d) out.cloud.points.push_back(detail::parse_float(f[d], line_no));
    out.scores.push_back(detail::parse_float(f[3], line_no));
  }
  return out;
}

enum class Split { train, test };

struct ManifestEntry {
  std::string path;  ///< relative to the dataset root
  std::string label;
  Split split = Split::train;
};

/// A dataset root directory with `manifest.csv` (header `path,label,split`).
struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  /// Distinct labels in sorted order; a label's position is its class index.
  std::vector<std::string> class_names() const {
    std::vector<std::string> names;
    for (const auto& e : entries) names.push_back(e.label);
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
  }
};

inline Manifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.csv";
  auto in = detail::open_in(path);
  Manifest manifest{root, {}};
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto f = detail::split_fields(text, ',');
    if (!header) {
      if (f.size() != 3 || f[0] != "path" || f[1] != "label" || f[2] != "split")
        throw ParseError(path.string() + ": header must be 'path,label,split'", line_no);
      header = true;
      continue;
    }
    if (f.size() != 3) throw ParseError(path.string() + ": expected 3 fields", line_no);
    ManifestEntry e{std::string(f[0]), std::string(f[1]), Split::train};
    if (f[2] == "train")
      e.split = Split::train;
    else if (f[2] == "test")
      e.split = Split::test;
    else
      throw ParseError(path.string() + ": split must be train or test", line_no);
    manifest.entries.push_back(std::move(e));
  }
  if (!header) throw ParseError(path.string() + ": missing header");
  return manifest;
}

inline void save_manifest(const Manifest& manifest) {
  auto out = detail::open_out(manifest.root / "manifest.csv");
  out << "path,label,split\n";
  for (const auto& e : manifest.entries)
    out << e.path << ',' << e.label << ',' << (e.split == Split::train ? "train" : "test") << '\n';
  if (!out) throw IoError("failed writing manifest in '" + manifest.root.string() + "'");
}

}  // namespace dnet
