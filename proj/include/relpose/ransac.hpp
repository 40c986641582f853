#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "relpose/five_point.hpp"
#include "relpose/geometry.hpp"
#include "relpose/rng.hpp"
#include "relpose/types.hpp"

namespace relpose {

struct RansacConfig {
  int max_iterations = 1000;
  double inlier_threshold = 1e-3;  // Sampson bound, normalized coordinates
  int min_inliers = 6;
  std::uint64_t rng_seed = 0;
};

struct RansacResult {
  CameraPose pose;
  EssentialMatrix essential;
  std::vector<std::uint8_t> inliers;
  int inlier_count = 0;
  int iterations = 0;
};

namespace detail {

// Levenberg-Marquardt on the stacked Sampson errors over the minimal
// 5-dof pose chart of E. Used to polish a RANSAC consensus set.
inline Mat3 polish_essential_sampson(const Mat3& E0, const CorrespondenceSet& corr, const std::vector<int>& idx) {
  const CameraPose seed_pose = factorize_essential(EssentialMatrix(E0))[0];
  const EulerAngles e = euler_from_rotation_any(seed_pose.rotation);
  const SphereAngles s = sphere_from_vector(seed_pose.translation);
  Vec5 p;
  p << e.yaw, e.pitch, e.roll, s.alpha, s.beta;

  const auto essential_at = [](const Vec5& q) {
    const Mat3 R = rotation_from_euler({q[0], q[1], q[2]});
    const Vec3 t = vector_from_sphere({q[3], q[4]});
    return (skew(t) * R).eval();
  };
  const auto residuals_at = [&](const Vec5& q) {
    const Mat3 E = essential_at(q);
    VecX r(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) r[k] = sampson_error(E, corr.x1h(idx[k]), corr.x2h(idx[k]));
    return r;
  };

  VecX r = residuals_at(p);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  for (int iter = 0; iter < 25; ++iter) {
    MatX J(idx.size(), 5);
    for (int c = 0; c < 5; ++c) {
      Vec5 plus = p, minus = p;
      plus[c] += 1e-7;
      minus[c] -= 1e-7;
      J.col(c) = (residuals_at(plus) - residuals_at(minus)) / 2e-7;
    }
    const Mat5 JtJ = J.transpose() * J;
    const Vec5 g = J.transpose() * r;
    bool stepped = false;
    for (int tries = 0; tries < 8 && !stepped; ++tries) {
      Mat5 A = JtJ;
      for (int k = 0; k < 5; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-12);
      const Vec5 delta = A.ldlt().solve(-g);
      const Vec5 trial = p + delta;
      const VecX rt = residuals_at(trial);
      if (rt.allFinite() && rt.squaredNorm() < cost) {
        p = trial;
        r = rt;
        cost = rt.squaredNorm();
        lambda = std::max(lambda * 0.1, 1e-12);
        stepped = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped || g.cwiseAbs().maxCoeff() < 1e-14) break;
  }
  return essential_at(p);
}

// iterations needed for 99.9% confidence of one all-inlier sample
inline int adaptive_iterations(double inlier_ratio, int sample_size, int cap) {
  if (inlier_ratio <= 0.0) return cap;
  const double p_good = std::pow(inlier_ratio, sample_size);
  if (p_good >= 1.0) return 0;
  const double denom = std::log(1.0 - p_good);
  if (denom >= 0.0) return cap;
  const double needed = std::log(1.0 - 0.999) / denom;
  if (!(needed < static_cast<double>(cap))) return cap;
  return static_cast<int>(std::ceil(needed));
}

}  // namespace detail

// Robust relative pose by 5-point minimal samples scored with the Sampson
// error. Deterministic for a fixed seed.
inline RansacResult ransac_relative_pose(const CorrespondenceSet& corr, const RansacConfig& cfg) {
  const int n = corr.size();
  if (n < 5) throw InsufficientCorrespondences("ransac_relative_pose: fewer than 5 correspondences");

  Rng rng(cfg.rng_seed);
  Mat3 best_E = Mat3::Zero();
  int best_count = -1;
  double best_score = std::numeric_limits<double>::infinity();

  int required = cfg.max_iterations;
  int iter = 0;
  for (; iter < required; ++iter) {
    const std::vector<int> sample = rng.sample_distinct(n, 5);
    std::vector<EssentialMatrix> candidates;
    try {
      candidates = essential_from_five(corr.select(sample));
    } catch (const DegenerateConfiguration&) {
      continue;
    }

    for (const EssentialMatrix& E : candidates) {
      // truncated-quadratic consensus: centered models win over models that
      // merely graze the same inlier count
      int count = 0;
      double score = 0.0;
      const double cap = cfg.inlier_threshold * cfg.inlier_threshold;
      for (int i = 0; i < n; ++i) {
        const double e = sampson_error(E.matrix, corr.x1h(i), corr.x2h(i));
        if (e < cfg.inlier_threshold) ++count;
        score += std::min(e * e, cap);
      }
      if (score < best_score || (score == best_score && count > best_count)) {
        best_count = count;
        best_score = score;
        best_E = E.matrix;
        required = std::min(cfg.max_iterations,
                            std::max(iter + 1, detail::adaptive_iterations(static_cast<double>(count) / n, 5, cfg.max_iterations)));
      }
    }
  }

  // Local optimization: Sampson LM on the strict consensus set, repeated
  // while the consensus grows. Kept only when count (then score) improves,
  // so the polish can never make the model worse.
  {
    const double cap = cfg.inlier_threshold * cfg.inlier_threshold;
    for (int round = 0; round < 4; ++round) {
      std::vector<int> inlier_idx;
      for (int i = 0; i < n; ++i)
        if (sampson_error(best_E, corr.x1h(i), corr.x2h(i)) < cfg.inlier_threshold) inlier_idx.push_back(i);
      if (static_cast<int>(inlier_idx.size()) < 5) break;
      Mat3 polished;
      try {
        polished = detail::polish_essential_sampson(best_E, corr, inlier_idx);
      } catch (const Error&) {
        break;
      }
      int count = 0;
      double score = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = sampson_error(polished, corr.x1h(i), corr.x2h(i));
        if (e < cfg.inlier_threshold) ++count;
        score += std::min(e * e, cap);
      }
      if (count < best_count || (count == best_count && score >= best_score)) break;
      best_E = polished;
      best_score = score;
      best_count = count;
    }
  }

  if (best_count < cfg.min_inliers) throw NoConsensus("ransac_relative_pose: best consensus below min_inliers");

  RansacResult result;
  result.essential = EssentialMatrix(best_E);
  result.inliers.assign(n, 0);
  std::vector<int> inlier_idx;
  for (int i = 0; i < n; ++i) {
    if (sampson_error(result.essential.matrix, corr.x1h(i), corr.x2h(i)) < cfg.inlier_threshold) {
      result.inliers[i] = 1;
      inlier_idx.push_back(i);
    }
  }
  result.inlier_count = static_cast<int>(inlier_idx.size());
  result.iterations = iter;
  result.pose = decompose_essential(result.essential, corr.select(inlier_idx));
  return result;
}

// Fraction of correspondences consistent with a single homography, fitted by
// 4-point DLT inside RANSAC. Used as a planar-degeneracy indicator.
inline double fit_homography_ratio(const CorrespondenceSet& corr, const RansacConfig& cfg) {
  const int n = corr.size();
  if (n < 4) throw InsufficientCorrespondences("fit_homography_ratio: fewer than 4 correspondences");

  Rng rng(cfg.rng_seed);
  int best_count = 0;
  int required = cfg.max_iterations;
  for (int iter = 0; iter < required; ++iter) {
    const std::vector<int> sample = rng.sample_distinct(n, 4);
    Mat3 H;
    try {
      H = homography_dlt(corr, sample);
    } catch (const Error&) {
      continue;
    }
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (homography_transfer_error(H, corr.x1(i), corr.x2(i)) < cfg.inlier_threshold) ++count;
    if (count > best_count) {
      best_count = count;
      required = std::min(cfg.max_iterations,
                          std::max(iter + 1, detail::adaptive_iterations(static_cast<double>(count) / n, 4, cfg.max_iterations)));
    }
  }
  return static_cast<double>(best_count) / static_cast<double>(n);
}

}  // namespace relpose
