#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "relpose/network.hpp"
#include "relpose/serialization.hpp"
#include "test_support.hpp"

using namespace relpose;
using namespace relpose::testing;

namespace {

CorrespondenceSet random_corr(std::uint64_t seed, int n) {
  Rng rng(seed);
  Eigen::Matrix<double, Eigen::Dynamic, 4> pts(n, 4);
  for (int i = 0; i < n; ++i)
    pts.row(i) << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
  return CorrespondenceSet(pts);
}

std::vector<int> random_permutation(Rng& rng, int n) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
  return perm;
}

}  // namespace

TEST_CASE("embedding is a pointwise map") {
  const NetworkWeights w = NetworkWeights::random(32, 4, 1);
  const CorrespondenceSet corr = random_corr(2, 7);
  const MatX f = embed_correspondences(corr, w);
  REQUIRE(f.rows() == 7);
  REQUIRE(f.cols() == 32);

  Rng rng(3);
  const std::vector<int> perm = random_permutation(rng, 7);
  const MatX fp = embed_correspondences(corr.select(perm), w);
  for (int i = 0; i < 7; ++i) CHECK((fp.row(i) - f.row(perm[i])).cwiseAbs().maxCoeff() == 0.0);

  const NetworkWeights zeros = NetworkWeights::zeros(32, 4);
  CHECK(embed_correspondences(corr, zeros).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(embed_correspondences(CorrespondenceSet(), w), EmptyInput);
}

TEST_CASE("attention layer with a zero update MLP is the identity") {
  NetworkWeights w = NetworkWeights::random(16, 1, 4);
  w.layers[0].u1.setZero();
  w.layers[0].ub1.setZero();
  w.layers[0].u2.setZero();
  w.layers[0].ub2.setZero();
  const CorrespondenceSet corr = random_corr(5, 9);
  const MatX f = embed_correspondences(corr, w);
  const MatX out = attention_layer(f, w.layers[0]);
  CHECK((out - f).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-node attention attends to itself") {
  const NetworkWeights w = NetworkWeights::random(8, 1, 5);
  const CorrespondenceSet corr = random_corr(6, 1);
  const MatX f = embed_correspondences(corr, w);
  AttentionTrace trace;
  attention_layer(f, w.layers[0], &trace);
  REQUIRE(trace.attn.rows() == 1);
  CHECK(trace.attn(0, 0) == 1.0);
  CHECK((trace.message - trace.v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("softmax rows sum to one") {
  const NetworkWeights w = NetworkWeights::random(32, 4, 6);
  const CorrespondenceSet corr = random_corr(7, 23);
  ForwardTrace trace;
  forward(corr, w, &trace);
  for (const auto& at : trace.attn)
    for (int i = 0; i < at.attn.rows(); ++i) CHECK(std::abs(at.attn.row(i).sum() - 1.0) < 1e-12);
}

TEST_CASE("attention layer is permutation equivariant") {
  const NetworkWeights w = NetworkWeights::random(16, 1, 8);
  const CorrespondenceSet corr = random_corr(9, 12);
  const MatX f = embed_correspondences(corr, w);
  const MatX out = attention_layer(f, w.layers[0]);

  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<int> perm = random_permutation(rng, 12);
    MatX fp(12, 16);
    for (int i = 0; i < 12; ++i) fp.row(i) = f.row(perm[i]);
    const MatX outp = attention_layer(fp, w.layers[0]);
    double worst = 0.0;
    for (int i = 0; i < 12; ++i) worst = std::max(worst, (outp.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("forward output is permutation invariant") {
  const NetworkWeights w = NetworkWeights::random(32, 4, 11);
  const CorrespondenceSet corr = random_corr(12, 15);
  const GaussianEstimate base = forward(corr, w);
  CHECK(base.valid);
  for (int k = 0; k < 5; ++k) {
    CHECK(base.inverse_variances[k] > 0.0);
    CHECK(std::isfinite(base.inverse_variances[k]));
  }

  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const GaussianEstimate other = forward(corr.select(random_permutation(rng, 15)), w);
    CHECK((other.means - base.means).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((other.inverse_variances - base.inverse_variances).cwiseAbs().maxCoeff() <
          1e-10 * base.inverse_variances.maxCoeff());
  }
}

TEST_CASE("translation head feeds the sphere conversion") {
  // stub head: all weights zero, raw translation biased to (1, 1, 0)
  NetworkWeights w = NetworkWeights::zeros(8, 1);
  w.pose_b2(0, 3) = 1.0;
  w.pose_b2(0, 4) = 1.0;
  w.pose_b2(0, 5) = 0.0;
  const GaussianEstimate est = forward(random_corr(14, 4), w);
  CHECK(est.means[kAlpha] == Catch::Approx(kPi / 4).margin(1e-15));
  CHECK(est.means[kBeta] == 0.0);
  CHECK(est.means[kYaw] == 0.0);
}

TEST_CASE("inverse variance link saturates as documented") {
  CHECK(ivar_from_raw(0.0) == 1.0);
  CHECK(ivar_from_raw(-20.0) == kIvarMin);
  CHECK(ivar_from_raw(25.0) == kIvarMax);
  CHECK(ivar_from_raw(-1e4) == 0.0);  // exp underflow escape
  CHECK(ivar_from_raw_derivative(-1e4) == 0.0);
  CHECK(ivar_from_raw_derivative(0.5) == std::exp(0.5));
}

TEST_CASE("weights serialization round trip") {
  const NetworkWeights w = NetworkWeights::random(8, 2, 15);
  const auto dir = std::filesystem::temp_directory_path() / "relpose_test_weights";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "w.json").string();
  write_weights(path, w);
  const NetworkWeights back = read_weights(path);
  CHECK(back.d == 8);
  CHECK(back.L == 2);
  bool identical = true;
  std::vector<const MatX*> lhs;
  w.for_each_array([&](const std::string&, const MatX& m) { lhs.push_back(&m); });
  int k = 0;
  back.for_each_array([&](const std::string&, const MatX& m) {
    if (m != *lhs[k++]) identical = false;
  });
  CHECK(identical);
}

TEST_CASE("weights loader rejects shape mismatches with a diagnostic") {
  const NetworkWeights w = NetworkWeights::random(8, 1, 16);
  Json j = weights_to_json(w);
  j["arrays"][0]["shape"] = {3, 8};
  try {
    weights_from_json(j);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("embed.w1") != std::string::npos);
  }

  Json bad_version = weights_to_json(w);
  bad_version["format_version"] = 99;
  CHECK_THROWS_AS(weights_from_json(bad_version), DataError);
}
