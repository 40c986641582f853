#include <catch2/catch_amalgamated.hpp>

#include "relpose/ransac.hpp"
#include "relpose/simulator.hpp"
#include "test_support.hpp"

using namespace relpose;
using namespace relpose::testing;

TEST_CASE("ransac on noise-free inliers") {
  const OracleScene scene = make_oracle_scene(3, 50);
  RansacConfig cfg;
  cfg.inlier_threshold = 1e-6;
  cfg.rng_seed = 9;
  const RansacResult result = ransac_relative_pose(scene.corr, cfg);
  CHECK(result.inlier_count == 50);
  CHECK(rotation_angle_deg(result.pose.rotation, scene.pose.rotation) < 1e-6);
  CHECK(direction_angle_deg(result.pose.translation, scene.pose.translation) < 1e-6);
}

TEST_CASE("ransac separates labeled outliers") {
  // 40 noisy inliers + 10 uniform outliers, aggregated over 20 seeds
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SceneConfig cfg;
    cfg.n_points = 50;
    cfg.noise_sigma = 1e-3;
    cfg.outlier_fraction = 0.2;
    cfg.rotation_magnitude_deg = 12.0;
    cfg.rng_seed = seed;
    const ScenePair scene = generate_scene(cfg);

    RansacConfig rcfg;
    rcfg.inlier_threshold = 3e-3;
    rcfg.rng_seed = seed * 31;
    rcfg.max_iterations = 500;
    const RansacResult result = ransac_relative_pose(scene.corr, rcfg);

    int true_inliers_recovered = 0;
    int outliers_admitted = 0;
    for (int i = 0; i < scene.corr.size(); ++i) {
      if (!scene.outlier_mask[i] && result.inliers[i]) ++true_inliers_recovered;
      if (scene.outlier_mask[i] && result.inliers[i]) ++outliers_admitted;
    }
    CHECK(true_inliers_recovered >= 38);
    CHECK(outliers_admitted <= 1);
  }
}

TEST_CASE("ransac needs at least five correspondences") {
  Eigen::Matrix<double, Eigen::Dynamic, 4> pts(4, 4);
  pts.setRandom();
  CHECK_THROWS_AS(ransac_relative_pose(CorrespondenceSet(pts), RansacConfig{}), InsufficientCorrespondences);
}

TEST_CASE("ransac reports no consensus on pure noise") {
  Rng rng(123);
  Eigen::Matrix<double, Eigen::Dynamic, 4> pts(20, 4);
  for (int i = 0; i < 20; ++i)
    pts.row(i) << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
  RansacConfig cfg;
  cfg.inlier_threshold = 1e-9;
  cfg.min_inliers = 15;
  cfg.max_iterations = 50;
  CHECK_THROWS_AS(ransac_relative_pose(CorrespondenceSet(pts), cfg), NoConsensus);
}

TEST_CASE("ransac is deterministic for a fixed seed") {
  const OracleScene scene = make_oracle_scene(4, 40, 1e-3);
  RansacConfig cfg;
  cfg.rng_seed = 77;
  const RansacResult a = ransac_relative_pose(scene.corr, cfg);
  const RansacResult b = ransac_relative_pose(scene.corr, cfg);
  CHECK(a.pose.rotation == b.pose.rotation);
  CHECK(a.pose.translation == b.pose.translation);
  CHECK(a.inliers == b.inliers);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("homography ratio separates planar from general scenes") {
  RansacConfig cfg;
  cfg.inlier_threshold = 1e-6;
  cfg.rng_seed = 5;

  SECTION("fully planar noise-free scene") {
    SceneConfig scfg;
    scfg.n_points = 40;
    scfg.noise_sigma = 0.0;
    scfg.planar_ratio = 1.0;
    scfg.rng_seed = 21;
    const ScenePair scene = generate_scene(scfg);
    CHECK(fit_homography_ratio(scene.corr, cfg) == 1.0);
  }

  SECTION("half planar scene stays in a sane band") {
    int inside = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      SceneConfig scfg;
      scfg.n_points = 60;
      scfg.noise_sigma = 1e-5;
      scfg.planar_ratio = 0.5;
      scfg.rng_seed = seed;
      const ScenePair scene = generate_scene(scfg);
      RansacConfig hcfg;
      hcfg.inlier_threshold = 1e-3;
      hcfg.rng_seed = seed;
      const double ratio = fit_homography_ratio(scene.corr, hcfg);
      if (ratio >= 0.45 && ratio <= 0.7) ++inside;
    }
    CHECK(inside == 20);
  }

  SECTION("fewer than four points") {
    Eigen::Matrix<double, Eigen::Dynamic, 4> pts(3, 4);
    pts.setRandom();
    CHECK_THROWS_AS(fit_homography_ratio(CorrespondenceSet(pts), cfg), InsufficientCorrespondences);
  }
}
