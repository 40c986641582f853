#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "relpose/errors.hpp"
#include "relpose/geometry.hpp"
#include "relpose/motion.hpp"
#include "relpose/rng.hpp"
#include "relpose/types.hpp"

// Synthetic two-view scenes with controllable difficulty axes: correspondence
// count, observation noise, outlier fraction, planarity, motion direction and
// rotation magnitude. Deterministic per seed.

namespace relpose {

inline constexpr double kFieldOfView = 0.5;          // half-extent in normalized coordinates
inline constexpr double kOutlierSampsonMin = 1e-2;   // labels stay unambiguous

struct SceneConfig {
  int n_points = 30;
  double noise_sigma = 1e-3;          // isotropic, normalized coordinates
  double outlier_fraction = 0.0;      // [0, 1]
  double planar_ratio = 0.0;          // fraction of points on a random plane
  std::optional<double> phi_forward_deg;  // angle(t, z-axis); nullopt = uniform hemisphere
  double rotation_magnitude_deg = 10.0;
  double depth_near = 4.0;
  double depth_far = 12.0;
  std::uint64_t rng_seed = 0;
};

// Generation metadata stored with a scene. phi_forward_deg echoes the
// realized angle between the translation direction and the z-axis.
struct SceneMeta {
  int n_points = 0;
  double noise_sigma = 0.0;
  double outlier_fraction = 0.0;
  double planar_ratio = 0.0;
  double phi_forward_deg = 0.0;
  double rotation_magnitude_deg = 0.0;
  std::string regime;
};

struct ScenePair {
  std::string scene_id;
  CameraPose gt_pose;
  CorrespondenceSet corr;
  std::vector<std::uint8_t> outlier_mask;
  SceneMeta meta;
};

inline std::string scene_id_from_seed(std::uint64_t seed) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "s%016llx", static_cast<unsigned long long>(seed));
  return std::string(buf);
}

// Degenerate when the geometry is near-planar, correspondence-starved or
// close to pure sideway motion.
inline std::string regime_label(double planar_ratio, int n_points, double phi_forward_deg) {
  const bool degenerate = planar_ratio >= 0.8 || n_points <= 12 || phi_forward_deg >= 75.0;
  return degenerate ? "degenerate" : "well-conditioned";
}

namespace detail {

inline Vec3 random_unit_vector(Rng& rng) {
  for (;;) {
    const Vec3 v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

}  // namespace detail

inline ScenePair generate_scene(const SceneConfig& cfg) {
  if (cfg.n_points < 0) throw std::invalid_argument("generate_scene: negative point count");
  if (!(cfg.depth_near > 0.0) || !(cfg.depth_far > cfg.depth_near))
    throw std::invalid_argument("generate_scene: invalid depth range");

  Rng rng(cfg.rng_seed);

  // ground-truth pose: rotation of the given magnitude about a random axis,
  // translation at the requested forward angle (or uniform on the z >= 0
  // hemisphere)
  const Vec3 axis = detail::random_unit_vector(rng);
  const double angle = cfg.rotation_magnitude_deg * kPi / 180.0;
  const Mat3 R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();

  Vec3 t;
  if (cfg.phi_forward_deg.has_value()) {
    const double phi = *cfg.phi_forward_deg * kPi / 180.0;
    const double psi = rng.uniform(0.0, 2.0 * kPi);
    t = Vec3(std::sin(phi) * std::cos(psi), std::sin(phi) * std::sin(psi), std::cos(phi));
  } else {
    do {
      t = detail::random_unit_vector(rng);
    } while (t.z() < 0.0);
  }
  const CameraPose gt(R, t);
  const Mat3 E_gt = skew(t) * R;

  // random scene plane through a frustum point at mid depth
  const double mid_depth = 0.5 * (cfg.depth_near + cfg.depth_far);
  const Vec3 plane_point(mid_depth * rng.uniform(-0.3, 0.3), mid_depth * rng.uniform(-0.3, 0.3), mid_depth);
  Vec3 plane_normal = detail::random_unit_vector(rng);
  if (std::abs(plane_normal.z()) < 0.3) plane_normal.z() = plane_normal.z() < 0.0 ? -0.3 : 0.3;
  plane_normal.normalize();
  const double plane_offset = plane_normal.dot(plane_point);

  const int n = cfg.n_points;
  const int n_planar = static_cast<int>(std::round(cfg.planar_ratio * n));
  const int n_outliers = static_cast<int>(std::round(cfg.outlier_fraction * n));

  Eigen::Matrix<double, Eigen::Dynamic, 4> points(n, 4);
  long budget = 20000 + 2000L * std::max(1, n);
  int made = 0;
  while (made < n) {
    if (--budget < 0) throw InfeasibleConfig("generate_scene: resampling budget exhausted");

    const double u = rng.uniform(-kFieldOfView, kFieldOfView);
    const double v = rng.uniform(-kFieldOfView, kFieldOfView);
    double depth;
    if (made < n_planar) {
      const double denom = plane_normal.dot(Vec3(u, v, 1.0));
      if (std::abs(denom) < 1e-9) continue;
      depth = plane_offset / denom;
      if (depth < cfg.depth_near || depth > cfg.depth_far) continue;
    } else {
      depth = rng.uniform(cfg.depth_near, cfg.depth_far);
    }
    const Vec3 X(depth * u, depth * v, depth);

    const Vec3 u2 = R * X + t;
    if (u2.z() <= kDepthEps) continue;
    const Vec2 x2(u2.x() / u2.z(), u2.y() / u2.z());
    if (std::abs(x2.x()) > kFieldOfView || std::abs(x2.y()) > kFieldOfView) continue;

    // noise, resampled until the pair stays within 5 sigma of the epipolar
    // constraint so inlier labels are unambiguous
    Vec2 n1, n2;
    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
      n1 = Vec2(rng.normal(0.0, cfg.noise_sigma), rng.normal(0.0, cfg.noise_sigma));
      n2 = Vec2(rng.normal(0.0, cfg.noise_sigma), rng.normal(0.0, cfg.noise_sigma));
      const Vec3 p1(u + n1.x(), v + n1.y(), 1.0);
      const Vec3 p2(x2.x() + n2.x(), x2.y() + n2.y(), 1.0);
      ok = cfg.noise_sigma == 0.0 || sampson_error(E_gt, p1, p2) <= 5.0 * cfg.noise_sigma;
    }
    if (!ok) continue;

    points.row(made) << u + n1.x(), v + n1.y(), x2.x() + n2.x(), x2.y() + n2.y();
    ++made;
  }

  // replace a random subset with epipolar-inconsistent matches
  std::vector<std::uint8_t> outlier_mask(n, 0);
  if (n_outliers > 0) {
    const std::vector<int> chosen = rng.sample_distinct(n, n_outliers);
    for (const int i : chosen) {
      for (;;) {
        if (--budget < 0) throw InfeasibleConfig("generate_scene: outlier budget exhausted");
        const Vec2 fake(rng.uniform(-kFieldOfView, kFieldOfView), rng.uniform(-kFieldOfView, kFieldOfView));
        const Vec3 p1(points(i, 0), points(i, 1), 1.0);
        const Vec3 p2(fake.x(), fake.y(), 1.0);
        if (sampson_error(E_gt, p1, p2) > kOutlierSampsonMin) {
          points(i, 2) = fake.x();
          points(i, 3) = fake.y();
          outlier_mask[i] = 1;
          break;
        }
      }
    }
  }

  ScenePair scene;
  scene.scene_id = scene_id_from_seed(cfg.rng_seed);
  scene.gt_pose = gt;
  scene.corr = CorrespondenceSet(points);
  scene.outlier_mask = std::move(outlier_mask);
  scene.meta.n_points = n;
  scene.meta.noise_sigma = cfg.noise_sigma;
  scene.meta.outlier_fraction = cfg.outlier_fraction;
  scene.meta.planar_ratio = cfg.planar_ratio;
  scene.meta.phi_forward_deg = std::acos(std::clamp(t.z(), -1.0, 1.0)) * 180.0 / kPi;
  scene.meta.rotation_magnitude_deg = cfg.rotation_magnitude_deg;
  scene.meta.regime = regime_label(cfg.planar_ratio, n, scene.meta.phi_forward_deg);
  return scene;
}

// Per-axis sampling ranges for dataset generation. A collapsed range (lo ==
// hi) pins the axis.
struct DatasetTemplate {
  int n_points_min = 8;
  int n_points_max = 60;
  double noise_sigma_min = 1e-4;
  double noise_sigma_max = 3e-3;
  double outlier_fraction_min = 0.0;
  double outlier_fraction_max = 0.2;
  double planar_ratio_min = 0.0;
  double planar_ratio_max = 1.0;
  std::optional<double> phi_forward_min;  // both set -> sample in range; both empty -> hemisphere
  std::optional<double> phi_forward_max;
  double rotation_magnitude_min = 2.0;
  double rotation_magnitude_max = 30.0;
  double depth_near = 4.0;
  double depth_far = 12.0;
};

inline SceneConfig sample_scene_config(const DatasetTemplate& tpl, std::uint64_t scene_seed) {
  Rng rng(splitmix64(scene_seed ^ 0xc0ffee));
  SceneConfig cfg;
  cfg.n_points = tpl.n_points_min +
                 static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(tpl.n_points_max - tpl.n_points_min + 1)));
  cfg.noise_sigma = rng.uniform(tpl.noise_sigma_min, tpl.noise_sigma_max);
  cfg.outlier_fraction = rng.uniform(tpl.outlier_fraction_min, tpl.outlier_fraction_max);
  cfg.planar_ratio = rng.uniform(tpl.planar_ratio_min, tpl.planar_ratio_max);
  if (tpl.phi_forward_min.has_value() && tpl.phi_forward_max.has_value())
    cfg.phi_forward_deg = rng.uniform(*tpl.phi_forward_min, *tpl.phi_forward_max);
  cfg.rotation_magnitude_deg = rng.uniform(tpl.rotation_magnitude_min, tpl.rotation_magnitude_max);
  cfg.depth_near = tpl.depth_near;
  cfg.depth_far = tpl.depth_far;
  cfg.rng_seed = scene_seed;
  return cfg;
}

// count scenes with per-axis values sampled independently per scene;
// per-scene seeds derive from the master seed so any subset regenerates
// identically. A sampled configuration whose motion leaves no shared field
// of view is re-drawn from a derived seed.
inline std::vector<ScenePair> generate_scenes(const DatasetTemplate& tpl, int count, std::uint64_t master_seed) {
  if (count < 1) throw std::invalid_argument("generate_scenes: count must be >= 1");
  std::vector<ScenePair> scenes;
  scenes.reserve(count);
  for (int i = 0; i < count; ++i) {
    std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(i));
    for (int retry = 0;; ++retry) {
      try {
        scenes.push_back(generate_scene(sample_scene_config(tpl, seed)));
        break;
      } catch (const InfeasibleConfig&) {
        if (retry >= 16) throw;
        seed = derive_seed(seed, 0xfeedULL + retry);
      }
    }
  }
  return scenes;
}

}  // namespace relpose
