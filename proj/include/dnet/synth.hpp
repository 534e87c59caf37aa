#pragma once

// Synthetic primitive shapes sampled uniformly by surface area.
//
// Every point is produced from three uniform numbers drawn from a dedicated
// sampling stream, so two instances generated with the same sampling seed
// have point-wise corresponding surface positions even when their shape
// parameters, noise and pose differ.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dnet/geometry.hpp"

namespace dnet {

enum class ShapeKind { sphere, cube, cylinder, cone, torus, pyramid, plane_cross, capsule };

inline constexpr std::array<ShapeKind, 8> kAllShapeKinds{
    ShapeKind::sphere, ShapeKind::cube,    ShapeKind::cylinder,    ShapeKind::cone,
    ShapeKind::torus,  ShapeKind::pyramid, ShapeKind::plane_cross, ShapeKind::capsule};

inline std::string_view kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::cone: return "cone";
    case ShapeKind::torus: return "torus";
    case ShapeKind::pyramid: return "pyramid";
    case ShapeKind::plane_cross: return "plane-cross";
    case ShapeKind::capsule: return "capsule";
  }
  return "unknown";
}

inline ShapeKind parse_kind(std::string_view name) {
  for (auto k : kAllShapeKinds)
    if (kind_name(k) == name) return k;
  throw ParameterError("unknown shape kind '" + std::string(name) + "'");
}

/// Per-instance dimensions.  Meaning depends on the kind:
///   cube: half extents (a, b, c);  cylinder/capsule: radius a, half length b;
///   cone/pyramid: base radius or half side a, height b;  torus: radii (a, b);
///   plane-cross: half widths a, b and half height c.
struct ShapeParams {
  double a = 1.0, b = 1.0, c = 1.0;
};

struct SynthOptions {
  bool rotate = true;   ///< random rotation about the vertical (z) axis
  bool jitter = true;   ///< per-instance variation of the shape dimensions
  std::optional<std::uint64_t> sample_seed;  ///< overrides the surface sampling stream
};

struct SurfaceSample {
  std::vector<float> points;
  std::vector<float> normals;
  ShapeParams params;
};

inline ShapeParams draw_params(ShapeKind kind, Rng& rng, bool jitter) {
  std::uniform_real_distribution<double> j(0.8, 1.2);
  auto f = [&](double base) { return jitter ? base * j(rng) : base; };
  switch (kind) {
    case ShapeKind::sphere: return {1.0, 1.0, 1.0};
    case ShapeKind::cube: return {f(1.0), f(1.0), f(1.0)};
    case ShapeKind::cylinder: return {f(0.6), f(1.0), 1.0};
    case ShapeKind::cone: return {f(0.8), f(1.8), 1.0};
    case ShapeKind::torus: return {f(1.0), f(0.35), 1.0};
    case ShapeKind::pyramid: return {f(0.9), f(1.5), 1.0};
    case ShapeKind::plane_cross: return {f(1.0), f(1.0), f(0.8)};
    case ShapeKind::capsule: return {f(0.45), f(0.7), 1.0};
  }
  return {};
}

namespace detail {

struct SurfacePoint {
  std::array<double, 3> p, n;
};

inline std::array<double, 3> normalized(std::array<double, 3> v) {
  const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / len, v[1] / len, v[2] / len};
}

/// Picks a piece of a composite surface by area; returns the piece index and
/// rescales u to [0, 1) within the piece.
inline std::size_t pick_piece(std::span<const double> areas, double& u) {
  double total = 0;
  for (double a : areas) total += a;
  double at = u * total;
  for (std::size_t i = 0; i < areas.size(); ++i) {
    if (at < areas[i] || i + 1 == areas.size()) {
      u = std::clamp(at / areas[i], 0.0, std::nextafter(1.0, 0.0));
      return i;
    }
    at -= areas[i];
  }
  return areas.size() - 1;
}

inline SurfacePoint sphere_point(double r, double u, double v) {
  const double z = 2 * u - 1, s = std::sqrt(std::max(0.0, 1 - z * z));
  const double phi = 2 * std::numbers::pi * v;
  std::array<double, 3> n{s * std::cos(phi), s * std::sin(phi), z};
  return {{r * n[0], r * n[1], r * n[2]}, n};
}

inline SurfacePoint surface_point(ShapeKind kind, const ShapeParams& q, double u, double v, double w) {
  constexpr double pi = std::numbers::pi;
  switch (kind) {
    case ShapeKind::sphere: return sphere_point(1.0, u, v);
    case ShapeKind::cube: {
      const double areas[] = {q.b * q.c, q.a * q.c, q.a * q.b};
      const std::size_t axis = pick_piece(areas, u);
      const double sign = u < 0.5 ? -1.0 : 1.0;
      const double half[] = {q.a, q.b, q.c};
      std::array<double, 3> p{}, n{};
      const std::size_t o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
      p[axis] = sign * half[axis];
      p[o1] = (2 * v - 1) * half[o1];
      p[o2] = (2 * w - 1) * half[o2];
      n[axis] = sign;
      return {p, n};
    }
    case ShapeKind::cylinder: {
      const double r = q.a, h = q.b;
      const double areas[] = {2 * pi * r * 2 * h, pi * r * r, pi * r * r};
      const std::size_t piece = pick_piece(areas, u);
      const double phi = 2 * pi * v;
      if (piece == 0)
        return {{r * std::cos(phi), r * std::sin(phi), (2 * u - 1) * h}, {std::cos(phi), std::sin(phi), 0}};
      const double rad = r * std::sqrt(w);
      const double z = piece == 1 ? h : -h;
      return {{rad * std::cos(phi), rad * std::sin(phi), z}, {0, 0, piece == 1 ? 1.0 : -1.0}};
    }
    case ShapeKind::cone: {
      const double r = q.a, height = q.b, slant = std::sqrt(r * r + height * height);
      const double areas[] = {pi * r * slant, pi * r * r};
      const std::size_t piece = pick_piece(areas, u);
      const double phi = 2 * pi * v;
      if (piece == 0) {
        const double t = std::sqrt(w);
        return {{t * r * std::cos(phi), t * r * std::sin(phi), height / 2 - t * height},
                {height * std::cos(phi) / slant, height * std::sin(phi) / slant, r / slant}};
      }
      const double rad = r * std::sqrt(w);
      return {{rad * std::cos(phi), rad * std::sin(phi), -height / 2}, {0, 0, -1}};
    }
    case ShapeKind::torus: {
      const double big = q.a, small = q.b;
      // Tube angle with density proportional to big + small*cos(psi).
      const double target = u * 2 * pi * big;
      double psi = 2 * pi * u;
      for (int it = 0; it < 50; ++it) {
        const double fval = big * psi + small * std::sin(psi) - target;
        const double dval = big + small * std::cos(psi);
        const double step = fval / dval;
        psi -= step;
        if (std::abs(step) < 1e-15) break;
      }
      const double phi = 2 * pi * v;
      const std::array<double, 3> n{std::cos(psi) * std::cos(phi), std::cos(psi) * std::sin(phi), std::sin(psi)};
      const double ring = big + small * std::cos(psi);
      return {{ring * std::cos(phi), ring * std::sin(phi), small * std::sin(psi)}, n};
    }
    case ShapeKind::pyramid: {
      const double a = q.a, height = q.b;
      const double slant = std::sqrt(height * height + a * a);
      const double face = a * slant;
      const double areas[] = {face, face, face, face, 4 * a * a};
      const std::size_t piece = pick_piece(areas, u);
      if (piece == 4) return {{(2 * v - 1) * a, (2 * w - 1) * a, -height / 2}, {0, 0, -1}};
      // Face with outward direction along +x rotated by piece * 90 degrees.
      double s = v, t = w;
      if (s + t > 1) {
        s = 1 - s;
        t = 1 - t;
      }
      const std::array<double, 3> p0{a, -a, -height / 2}, p1{a, a, -height / 2}, apex{0, 0, height / 2};
      std::array<double, 3> p{};
      for (int d = 0; d < 3; ++d) p[d] = p0[d] + s * (p1[d] - p0[d]) + t * (apex[d] - p0[d]);
      std::array<double, 3> n = normalized({height, 0, a});
      const double ang = piece * pi / 2, c = std::cos(ang), sn = std::sin(ang);
      auto rot = [&](std::array<double, 3> x) {
        return std::array<double, 3>{c * x[0] - sn * x[1], sn * x[0] + c * x[1], x[2]};
      };
      return {rot(p), rot(n)};
    }
    case ShapeKind::plane_cross: {
      const double areas[] = {q.a * q.c, q.b * q.c};
      const std::size_t piece = pick_piece(areas, u);
      const double z = (2 * w - 1) * q.c;
      if (piece == 0) return {{0, (2 * v - 1) * q.a, z}, {1, 0, 0}};
      return {{(2 * v - 1) * q.b, 0, z}, {0, 1, 0}};
    }
    case ShapeKind::capsule: {
      const double r = q.a, h = q.b;
      const double areas[] = {2 * pi * r * 2 * h, 2 * pi * r * r, 2 * pi * r * r};
      const std::size_t piece = pick_piece(areas, u);
      const double phi = 2 * pi * v;
      if (piece == 0)
        return {{r * std::cos(phi), r * std::sin(phi), (2 * w - 1) * h}, {std::cos(phi), std::sin(phi), 0}};
      // Hemisphere: uniform height gives uniform area.
      const double zc = w, s = std::sqrt(std::max(0.0, 1 - zc * zc));
      const double sign = piece == 1 ? 1.0 : -1.0;
      const std::array<double, 3> n{s * std::cos(phi), s * std::sin(phi), sign * zc};
      return {{r * n[0], r * n[1], sign * h + r * n[2]}, n};
    }
  }
  throw ParameterError("unknown shape kind");
}

}  // namespace detail

/// Noise-free surface samples in the shape's own frame.
inline SurfaceSample sample_surface(ShapeKind kind, std::size_t n_points, Rng& sample_rng, const ShapeParams& params) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SurfaceSample out;
  out.params = params;
  out.points.reserve(3 * n_points);
  out.normals.reserve(3 * n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double u = unit(sample_rng), v = unit(sample_rng), w = unit(sample_rng);
    const auto sp = detail::surface_point(kind, params, u, v, w);
    for (int d = 0; d < 3; ++d) {
      out.points.push_back(static_cast<float>(sp.p[d]));
      out.normals.push_back(static_cast<float>(sp.n[d]));
    }
  }
  return out;
}

namespace detail {

inline void perturb_and_pose(PointCloud& cloud, double noise_sigma, bool rotate, Rng& rng) {
  if (noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& x : cloud.points) x = static_cast<float>(x + noise(rng));
  }
  if (rotate) {
    std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
    const double a = angle(rng), c = std::cos(a), s = std::sin(a);
    auto turn = [&](std::vector<float>& xyz) {
      for (std::size_t i = 0; i + 2 < xyz.size(); i += 3) {
        const double x = xyz[i], y = xyz[i + 1];
        xyz[i] = static_cast<float>(c * x - s * y);
        xyz[i + 1] = static_cast<float>(s * x + c * y);
      }
    };
    turn(cloud.points);
    turn(cloud.normals);
  }
}

}  // namespace detail

/// One synthetic instance: surface samples with Gaussian noise, optional
/// random pose, normalized to the unit sphere.  Normals are the analytic
/// surface normals (before noise).  The label is the kind's index.
inline PointCloud synth_generate(ShapeKind kind, std::size_t n_points, double noise_sigma, std::uint64_t seed,
                                 const SynthOptions& options = {}) {
  if (n_points < 8) throw ParameterError("synth_generate: need at least 8 points");
  if (noise_sigma < 0) throw ParameterError("synth_generate: noise sigma must be non-negative");
  Rng instance(derive_seed(seed, {1}));
  Rng sampler(options.sample_seed ? *options.sample_seed : derive_seed(seed, {2}));
  const auto params = draw_params(kind, instance, options.jitter);
  auto surface = sample_surface(kind, n_points, sampler, params);
  PointCloud cloud;
  cloud.points = std::move(surface.points);
  cloud.normals = std::move(surface.normals);
  cloud.label = static_cast<int>(kind);
  detail::perturb_and_pose(cloud, noise_sigma, options.rotate, instance);
  return normalize_unit_sphere(cloud);
}

inline PointCloud synth_generate(std::string_view kind, std::size_t n_points, double noise_sigma, std::uint64_t seed,
                                 const SynthOptions& options = {}) {
  return synth_generate(parse_kind(kind), n_points, noise_sigma, seed, options);
}

/// Two-part shape for per-point segmentation: a unit sphere (part 0) with a
/// conical spike (part 1) on one side.
inline PointCloud synth_sphere_spike(std::size_t n_points, double noise_sigma, std::uint64_t seed,
                                     const SynthOptions& options = {}) {
  if (n_points < 8) throw ParameterError("synth_sphere_spike: need at least 8 points");
  Rng instance(derive_seed(seed, {1}));
  Rng sampler(options.sample_seed ? *options.sample_seed : derive_seed(seed, {2}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n_spike = n_points / 4;
  const ShapeParams spike{0.35, 1.0, 1.0};
  PointCloud cloud;
  for (std::size_t i = 0; i < n_points; ++i) {
    const double u = unit(sampler), v = unit(sampler), w = unit(sampler);
    const bool on_spike = i < n_spike;
    auto sp = on_spike ? detail::surface_point(ShapeKind::cone, spike, 0.0, v, w) : detail::sphere_point(1.0, u, v);
    if (on_spike) sp.p[2] += 0.5 + 0.9;  // base near the sphere, apex at z = 1.9
    for (int d = 0; d < 3; ++d) {
      cloud.points.push_back(static_cast<float>(sp.p[d]));
      cloud.normals.push_back(static_cast<float>(sp.n[d]));
    }
    cloud.part_labels.push_back(on_spike ? 1 : 0);
  }
  cloud.label = 0;
  detail::perturb_and_pose(cloud, noise_sigma, options.rotate, instance);
  return normalize_unit_sphere(cloud);
}

}  // namespace dnet
