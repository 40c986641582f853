#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "relpose/bundle_adjust.hpp"
#include "relpose/errors.hpp"
#include "relpose/types.hpp"

// First-order covariance of the refined geometric solution: information
// matrix J^T J assembled from the bundle-adjustment Jacobian blocks, and
// per-parameter inverse variances via Schur complement. Point blocks are
// eliminated first so the cost stays linear in the point count.

namespace relpose {

inline constexpr double kPdEps = 1e-12;

// Generic dense information matrix, symmetrized after computation.
inline MatX information_matrix(const MatX& jacobian) {
  if (!jacobian.allFinite()) throw std::invalid_argument("information_matrix: non-finite Jacobian");
  MatX info = jacobian.transpose() * jacobian;
  info = 0.5 * (info + info.transpose()).eval();
  return info;
}

// Block-sparse information matrix of a bundle-adjustment Jacobian.
struct BlockInformation {
  Mat5 pose = Mat5::Zero();
  std::vector<Mat3> points;                            // per-point 3x3 blocks
  std::vector<Eigen::Matrix<double, 5, 3>> coupling;   // pose-point strips

  int point_count() const { return static_cast<int>(points.size()); }
  int dimension() const { return 5 + 3 * point_count(); }

  MatX dense() const {
    const int n = point_count();
    MatX info = MatX::Zero(dimension(), dimension());
    info.topLeftCorner<5, 5>() = pose;
    for (int i = 0; i < n; ++i) {
      info.block<3, 3>(5 + 3 * i, 5 + 3 * i) = points[i];
      info.block<5, 3>(0, 5 + 3 * i) = coupling[i];
      info.block<3, 5>(5 + 3 * i, 0) = coupling[i].transpose();
    }
    return info;
  }
};

// Assembles J^T J / sigma_meas^2 blockwise from the recorded sparsity,
// without forming dense products.
inline BlockInformation information_matrix(const BaJacobian& jacobian, double sigma_meas = 1.0) {
  const int n = jacobian.point_count();
  const double w = 1.0 / (sigma_meas * sigma_meas);
  BlockInformation info;
  info.points.resize(n);
  info.coupling.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& A = jacobian.pose_blocks[i];
    const auto& B1 = jacobian.point_blocks_cam1[i];
    const auto& B2 = jacobian.point_blocks_cam2[i];
    info.pose += w * (A.transpose() * A);
    info.points[i] = w * (B1.transpose() * B1 + B2.transpose() * B2);
    info.coupling[i] = w * (A.transpose() * B2);
  }
  info.pose = (0.5 * (info.pose + info.pose.transpose())).eval();
  for (int i = 0; i < n; ++i) info.points[i] = (0.5 * (info.points[i] + info.points[i].transpose())).eval();
  return info;
}

namespace detail {

// Jacobi equilibration: scale so the diagonal is 1, check the smallest
// eigenvalue of the scaled matrix, solve in scaled units.
inline MatX equilibrated(const MatX& m, VecX& scale) {
  const int k = static_cast<int>(m.rows());
  scale.resize(k);
  for (int i = 0; i < k; ++i) scale[i] = m(i, i) > 0.0 ? 1.0 / std::sqrt(m(i, i)) : 1.0;
  return scale.asDiagonal() * m * scale.asDiagonal();
}

inline void require_positive_definite(const MatX& scaled, const char* what) {
  const Eigen::SelfAdjointEigenSolver<MatX> eig(scaled, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= kPdEps)
    throw SingularInformation(what);
}

}  // namespace detail

// Marginal precision of parameter `index` given the rest:
// info(i,i) - info(i,J) info(J,J)^-1 info(J,i).
inline double parameter_inverse_variance(const MatX& info, int index) {
  const int dim = static_cast<int>(info.rows());
  if (index < 0 || index >= dim) throw std::invalid_argument("parameter_inverse_variance: index out of range");
  if (dim == 1) return info(0, 0);

  std::vector<int> rest;
  rest.reserve(dim - 1);
  for (int i = 0; i < dim; ++i)
    if (i != index) rest.push_back(i);

  MatX sub(dim - 1, dim - 1);
  VecX cross(dim - 1);
  for (int r = 0; r < dim - 1; ++r) {
    cross[r] = info(index, rest[r]);
    for (int c = 0; c < dim - 1; ++c) sub(r, c) = info(rest[r], rest[c]);
  }

  VecX scale;
  const MatX scaled = detail::equilibrated(sub, scale);
  detail::require_positive_definite(scaled, "parameter_inverse_variance: remaining-parameter block is singular");
  const VecX cross_scaled = scale.asDiagonal() * cross;
  const VecX solved = scaled.ldlt().solve(cross_scaled);
  return info(index, index) - cross_scaled.dot(solved);
}

// Reduced 5x5 pose information after eliminating every 3x3 point block.
inline Mat5 reduced_pose_information(const BlockInformation& info) {
  Mat5 S = info.pose;
  for (int i = 0; i < info.point_count(); ++i) {
    const Mat3& W = info.points[i];
    Vec3 scale;
    for (int k = 0; k < 3; ++k) scale[k] = W(k, k) > 0.0 ? 1.0 / std::sqrt(W(k, k)) : 1.0;
    const Mat3 Ws = scale.asDiagonal() * W * scale.asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(Ws);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= kPdEps)
      throw SingularInformation("reduced_pose_information: singular point block");
    const Eigen::Matrix<double, 5, 3> Cs = info.coupling[i] * scale.asDiagonal();
    S -= Cs * Ws.ldlt().solve(Cs.transpose());
  }
  return (0.5 * (S + S.transpose())).eval();
}

// All five pose inverse variances by block-sparse elimination.
inline Vec5 pose_inverse_variances(const BlockInformation& info) {
  const Mat5 S = reduced_pose_information(info);
  Vec5 out;
  for (int i = 0; i < 5; ++i) out[i] = parameter_inverse_variance(S, i);
  return out;
}

// Gaussian summary of a converged bundle-adjustment estimate. Schur
// failures downgrade `valid` instead of throwing.
inline GaussianEstimate pose_uncertainty(const OptimizedEstimate& estimate, double sigma_meas = 1.0) {
  if (!estimate.converged) throw std::invalid_argument("pose_uncertainty: estimate not converged");
  GaussianEstimate out;
  out.means = estimate.params.pose;
  try {
    out.inverse_variances = pose_inverse_variances(information_matrix(estimate.jacobian, sigma_meas));
    out.valid = out.inverse_variances.allFinite() && (out.inverse_variances.array() >= 0.0).all();
    if (!out.valid) out.inverse_variances.setZero();
  } catch (const SingularInformation&) {
    out.inverse_variances.setZero();
    out.valid = false;
  }
  return out;
}

}  // namespace relpose
