#include <catch2/catch_amalgamated.hpp>

#include "relpose/simulator.hpp"
#include "relpose/uncertainty.hpp"
#include "test_support.hpp"

using namespace relpose;
using namespace relpose::testing;

namespace {

// dense SPD matrix with a reasonable condition number
MatX random_spd(Rng& rng, int dim) {
  MatX A(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) A(r, c) = rng.normal();
  return A.transpose() * A + 0.1 * MatX::Identity(dim, dim);
}

OptimizedEstimate refined_scene_estimate(std::uint64_t seed, int n, double noise) {
  const OracleScene scene = make_oracle_scene(seed, n, noise);
  return refine(scene.pose, scene.corr, {});
}

}  // namespace

TEST_CASE("information matrix basics") {
  CHECK((information_matrix(MatX::Identity(2, 2)) - MatX::Identity(2, 2)).norm() == 0.0);

  Rng rng(31);
  MatX J(20, 11);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 11; ++c) J(r, c) = rng.normal();
  const MatX info = information_matrix(J);
  CHECK((info - (J.transpose() * J)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((info - info.transpose()).cwiseAbs().maxCoeff() == 0.0);

  J.col(4).setZero();
  const MatX info0 = information_matrix(J);
  CHECK(info0.row(4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(info0.col(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("block assembly matches the dense product") {
  const OptimizedEstimate est = refined_scene_estimate(91, 12, 1e-3);
  const BlockInformation block = information_matrix(est.jacobian);
  const MatX dense = information_matrix(est.jacobian.dense());
  CHECK((block.dense() - dense).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, dense.cwiseAbs().maxCoeff()));
}

TEST_CASE("schur complement on tiny matrices") {
  MatX diag(2, 2);
  diag << 4, 0, 0, 9;
  CHECK(parameter_inverse_variance(diag, 0) == 4.0);

  MatX coupled(2, 2);
  coupled << 2, 1, 1, 2;
  CHECK(parameter_inverse_variance(coupled, 0) == Catch::Approx(1.5).margin(1e-15));
}

TEST_CASE("schur complement equals the marginal precision") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 35;  // 10 points
    const MatX info = random_spd(rng, dim);
    const MatX cov = info.inverse();
    for (const int index : {0, 1, 2, 3, 4, 17}) {
      const double schur = parameter_inverse_variance(info, index);
      const double oracle = 1.0 / cov(index, index);
      CHECK(schur == Catch::Approx(oracle).epsilon(1e-8));
    }
  }
}

TEST_CASE("singular remaining block raises") {
  MatX info = MatX::Zero(3, 3);
  info(0, 0) = 1.0;  // parameters 1..2 carry no information
  CHECK_THROWS_AS(parameter_inverse_variance(info, 0), SingularInformation);
}

TEST_CASE("block elimination equals the dense schur complement") {
  for (std::uint64_t seed = 300; seed < 310; ++seed) {
    const OptimizedEstimate est = refined_scene_estimate(seed, 20, 1e-3);
    const BlockInformation block = information_matrix(est.jacobian);
    const MatX dense = block.dense();
    const Vec5 fast = pose_inverse_variances(block);
    for (int k = 0; k < 5; ++k) {
      const double slow = parameter_inverse_variance(dense, k);
      CHECK(fast[k] == Catch::Approx(slow).epsilon(1e-8));
    }
  }
}

TEST_CASE("well conditioned scenes have strictly positive precisions") {
  const OptimizedEstimate est = refined_scene_estimate(101, 200, 1e-3);
  const GaussianEstimate unc = pose_uncertainty(est);
  CHECK(unc.valid);
  for (int k = 0; k < 5; ++k) CHECK(unc.inverse_variances[k] > 0.0);
}

TEST_CASE("pose_uncertainty requires convergence") {
  OptimizedEstimate est = refined_scene_estimate(102, 10, 1e-3);
  est.converged = false;
  CHECK_THROWS_AS(pose_uncertainty(est), std::invalid_argument);
}

TEST_CASE("residual weighting scales precisions by c^2") {
  const OptimizedEstimate est = refined_scene_estimate(103, 15, 1e-3);
  const Vec5 base = pose_inverse_variances(information_matrix(est.jacobian, 1.0));
  const Vec5 half = pose_inverse_variances(information_matrix(est.jacobian, 2.0));
  for (int k = 0; k < 5; ++k) CHECK(half[k] == Catch::Approx(0.25 * base[k]).epsilon(1e-12));
}

TEST_CASE("near planar scenes lose translation precision") {
  // A/B comparison against the general-position counterpart with the same
  // seed; the planar scene should carry less total translation information
  int planar_weaker = 0;
  int usable = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    SceneConfig planar;
    planar.n_points = 80;
    planar.noise_sigma = 1e-3;
    planar.planar_ratio = 0.98;
    planar.rng_seed = seed;
    SceneConfig general = planar;
    general.planar_ratio = 0.0;

    const auto run = [](const SceneConfig& cfg) -> std::optional<double> {
      const ScenePair scene = generate_scene(cfg);
      try {
        const OptimizedEstimate est = refine(scene.gt_pose, scene.corr, {});
        const GaussianEstimate unc = pose_uncertainty(est);
        if (!unc.valid) return std::nullopt;
        return unc.inverse_variances[kAlpha] + unc.inverse_variances[kBeta];
      } catch (const Error&) {
        return std::nullopt;
      }
    };

    const auto planar_ivar = run(planar);
    const auto general_ivar = run(general);
    if (!planar_ivar || !general_ivar) continue;
    ++usable;
    if (*planar_ivar < *general_ivar) ++planar_weaker;
  }
  REQUIRE(usable >= 45);
  CHECK(planar_weaker >= static_cast<int>(0.9 * usable));
}

TEST_CASE("rotation is better constrained than translation across a sweep") {
  std::vector<double> rot, trans;
  for (std::uint64_t seed = 700; seed < 750; ++seed) {
    try {
      const OptimizedEstimate est = refined_scene_estimate(seed, 40, 1e-3);
      const GaussianEstimate unc = pose_uncertainty(est);
      if (!unc.valid) continue;
      rot.push_back(unc.inverse_variances[kYaw] + unc.inverse_variances[kPitch] + unc.inverse_variances[kRoll]);
      trans.push_back(unc.inverse_variances[kAlpha] + unc.inverse_variances[kBeta]);
    } catch (const Error&) {
    }
  }
  REQUIRE(rot.size() >= 40);
  std::sort(rot.begin(), rot.end());
  std::sort(trans.begin(), trans.end());
  CHECK(rot[rot.size() / 2] > trans[trans.size() / 2]);
}
