#include <catch2/catch_amalgamated.hpp>

#include "relpose/harness.hpp"
#include "relpose/simulator.hpp"
#include "relpose/training.hpp"
#include "test_support.hpp"

using namespace relpose;
using namespace relpose::testing;

namespace {

GaussianEstimate make_geo(const Vec5& means, const Vec5& ivars, bool valid = true) {
  GaussianEstimate e;
  e.means = means;
  e.inverse_variances = ivars;
  e.valid = valid;
  return e;
}

std::vector<TrainingScene> smoke_dataset(int count, std::uint64_t seed, int min_points = 10, int max_points = 30) {
  DatasetTemplate tpl;
  tpl.n_points_min = min_points;
  tpl.n_points_max = max_points;
  const std::vector<ScenePair> scenes = generate_scenes(tpl, count, seed);
  PipelineOptions opts;
  opts.threads = 4;
  return precompute_training_scenes(scenes, opts);
}

double fd_gradient(const TrainingScene& scene, NetworkWeights& w, MatX& array, Eigen::Index r, Eigen::Index c,
                   double loss_weight, double step) {
  const double saved = array(r, c);
  array(r, c) = saved + step;
  const GaussianEstimate plus = forward(scene.corr, w);
  const double lp = fused_loss_with_grad(scene.geo, plus, scene.gt_pose, loss_weight).value;
  array(r, c) = saved - step;
  const GaussianEstimate minus = forward(scene.corr, w);
  const double lm = fused_loss_with_grad(scene.geo, minus, scene.gt_pose, loss_weight).value;
  array(r, c) = saved;
  return (lp - lm) / (2 * step);
}

}  // namespace

TEST_CASE("loss basics") {
  const CameraPose gt(rotation_from_euler({0.1, 0.0, 0.0}), vector_from_sphere({1.2, 0.7}));
  SECTION("exact fused pose gives zero loss") {
    const MotionParams fused = motion_from_pose(gt);
    CHECK(loss(fused, gt, 1.0) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("single rotation term") {
    MotionParams fused = motion_from_pose(gt);
    fused.yaw = 0.0;  // gt yaw is 0.1
    CHECK(loss(fused, gt, 1.0) == Catch::Approx(0.1).margin(1e-12));
  }
  SECTION("circular nearest neighbour of the ground truth") {
    const CameraPose gt_roll(rotation_from_euler({0.0, 0.0, 3.1}), vector_from_sphere({1.2, 0.7}));
    MotionParams fused = motion_from_pose(gt_roll);
    fused.roll = -3.1;
    CHECK(loss(fused, gt_roll, 1.0) == Catch::Approx(2 * kPi - 6.2).margin(1e-12));
  }
}

TEST_CASE("gradient matches finite differences on all weight groups") {
  // tiny network: d = 8, L = 2, n = 6
  NetworkWeights w = NetworkWeights::random(8, 2, 21);
  const OracleScene oracle = make_oracle_scene(22, 6, 1e-3);
  TrainingScene scene;
  scene.corr = oracle.corr;
  scene.gt_pose = oracle.pose;
  Vec5 geo_means = motion_from_pose(oracle.pose).vector();
  geo_means[kYaw] += 0.05;
  geo_means[kBeta] -= 0.1;
  Vec5 geo_ivars;
  geo_ivars << 2.0, 1.0, 3.0, 0.5, 0.8;
  scene.geo = make_geo(geo_means, geo_ivars);

  const BatchGradient bg = gradient({scene}, w, 1.0);

  std::vector<MatX*> warrs;
  w.for_each_array([&](const std::string&, MatX& m) { warrs.push_back(&m); });
  std::vector<std::pair<std::string, const MatX*>> garrs;
  bg.grad.for_each_array([&](const std::string& name, const MatX& m) { garrs.emplace_back(name, &m); });

  Rng rng(23);
  for (size_t a = 0; a < warrs.size(); ++a) {
    MatX& arr = *warrs[a];
    const MatX& grad = *garrs[a].second;
    double worst = 0.0;
    // a handful of random entries per array
    for (int probe = 0; probe < 4; ++probe) {
      const Eigen::Index r = static_cast<Eigen::Index>(rng.uniform_index(arr.rows()));
      const Eigen::Index c = static_cast<Eigen::Index>(rng.uniform_index(arr.cols()));
      const double fd = fd_gradient(scene, w, arr, r, c, 1.0, 1e-5);
      const double denom = std::max({1.0, std::abs(fd), std::abs(grad(r, c))});
      worst = std::max(worst, std::abs(fd - grad(r, c)) / denom);
    }
    INFO("array " << garrs[a].first);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("overwhelming geometric confidence silences the pose head") {
  NetworkWeights w = NetworkWeights::random(8, 2, 25);
  const OracleScene oracle = make_oracle_scene(26, 8, 1e-3);
  TrainingScene scene;
  scene.corr = oracle.corr;
  scene.gt_pose = oracle.pose;
  scene.geo = make_geo(motion_from_pose(oracle.pose).vector(), Vec5::Constant(1e12));

  const BatchGradient bg = gradient({scene}, w, 1.0);
  CHECK(bg.grad.pose_w1.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(bg.grad.pose_w2.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(bg.grad.pose_b2.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("invalid geometry reduces to the unfused learned loss") {
  NetworkWeights w = NetworkWeights::random(8, 2, 27);
  const OracleScene oracle = make_oracle_scene(28, 7, 1e-3);
  TrainingScene scene;
  scene.corr = oracle.corr;
  scene.gt_pose = oracle.pose;
  scene.geo = make_geo(Vec5::Zero(), Vec5::Zero(), false);

  const GaussianEstimate dnn = forward(scene.corr, w);
  const FusedLossGrad fl = fused_loss_with_grad(scene.geo, dnn, scene.gt_pose, 1.0);
  // the fused loss *is* the unfused learned loss
  CHECK(fl.value == loss(dnn.motion(), scene.gt_pose, 1.0));
  CHECK(fl.d_ivars.cwiseAbs().maxCoeff() == 0.0);

  // and the mean sensitivities are exactly the raw loss derivatives
  for (int k = 0; k < 5; ++k) {
    const double eps = 1e-7;
    GaussianEstimate plus = dnn, minus = dnn;
    plus.means[k] += eps;
    minus.means[k] -= eps;
    const double fd =
        (loss(plus.motion(), scene.gt_pose, 1.0) - loss(minus.motion(), scene.gt_pose, 1.0)) / (2 * eps);
    CHECK(fl.d_means[k] == Catch::Approx(fd).margin(1e-6));
  }
}

TEST_CASE("training reduces the loss at desk scale") {
  const std::vector<TrainingScene> dataset = smoke_dataset(200, 31);
  TrainConfig cfg;
  cfg.d = 16;
  cfg.L = 2;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.seed = 5;
  cfg.threads = 4;
  const TrainResult result = train(dataset, cfg);
  REQUIRE(result.epoch_loss.size() == 30);
  CHECK(result.epoch_loss.back() < 0.5 * result.epoch_loss.front());
}

TEST_CASE("training is bitwise deterministic") {
  const std::vector<TrainingScene> dataset = smoke_dataset(40, 33, 8, 16);
  TrainConfig cfg;
  cfg.d = 8;
  cfg.L = 1;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 9;
  cfg.threads = 4;
  const TrainResult a = train(dataset, cfg);
  const TrainResult b = train(dataset, cfg);
  CHECK(a.epoch_loss == b.epoch_loss);
  std::vector<const MatX*> first;
  a.weights.for_each_array([&](const std::string&, const MatX& m) { first.push_back(&m); });
  int k = 0;
  bool identical = true;
  b.weights.for_each_array([&](const std::string&, const MatX& m) {
    if (m != *first[k++]) identical = false;
  });
  CHECK(identical);
}

TEST_CASE("training rejects an empty dataset") {
  CHECK_THROWS_AS(train({}, TrainConfig{}), std::invalid_argument);
}
