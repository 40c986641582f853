#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "relpose/errors.hpp"
#include "relpose/geometry.hpp"
#include "relpose/motion.hpp"
#include "relpose/types.hpp"

// Nonlinear least-squares refinement of the two-view reprojection error over
// the minimal pose chart {yaw, pitch, roll, alpha, beta} plus the 3D points,
// with camera 1 pinned at [I 0]. Residual layout per point i:
// rows (4i..4i+3) = [x1 - pi(P1, Xi); x2 - pi(P2, Xi)].

namespace relpose {

struct BaParameterVector {
  Vec5 pose = Vec5::Zero();                          // yaw, pitch, roll, alpha, beta
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;   // camera-1 frame

  int point_count() const { return static_cast<int>(points.rows()); }
  int dimension() const { return 5 + 3 * point_count(); }

  CameraPose camera_pose() const {
    return CameraPose(rotation_from_euler({pose[kYaw], pose[kPitch], pose[kRoll]}),
                      vector_from_sphere({pose[kAlpha], pose[kBeta]}));
  }
};

// Jacobian of the stacked residuals with the block sparsity kept explicit:
// each residual row touches the 5 pose columns and its own point's 3 columns
// only, and camera-1 rows touch point columns only.
struct BaJacobian {
  // camera-2 residual rows w.r.t. pose (camera-1 rows are structurally zero)
  std::vector<Eigen::Matrix<double, 2, 5>> pose_blocks;
  // both image residual rows w.r.t. the point
  std::vector<Eigen::Matrix<double, 2, 3>> point_blocks_cam1;
  std::vector<Eigen::Matrix<double, 2, 3>> point_blocks_cam2;

  int point_count() const { return static_cast<int>(pose_blocks.size()); }
  int rows() const { return 4 * point_count(); }
  int cols() const { return 5 + 3 * point_count(); }

  MatX dense() const {
    const int n = point_count();
    MatX J = MatX::Zero(rows(), cols());
    for (int i = 0; i < n; ++i) {
      J.block<2, 3>(4 * i, 5 + 3 * i) = point_blocks_cam1[i];
      J.block<2, 5>(4 * i + 2, 0) = pose_blocks[i];
      J.block<2, 3>(4 * i + 2, 5 + 3 * i) = point_blocks_cam2[i];
    }
    return J;
  }
};

namespace detail {

inline Mat3 drot_y(double a) {
  Mat3 r;
  r << -std::sin(a), 0.0, std::cos(a), 0.0, 0.0, 0.0, -std::cos(a), 0.0, -std::sin(a);
  return r;
}

inline Mat3 drot_x(double a) {
  Mat3 r;
  r << 0.0, 0.0, 0.0, 0.0, -std::sin(a), -std::cos(a), 0.0, std::cos(a), -std::sin(a);
  return r;
}

inline Mat3 drot_z(double a) {
  Mat3 r;
  r << -std::sin(a), -std::cos(a), 0.0, std::cos(a), -std::sin(a), 0.0, 0.0, 0.0, 0.0;
  return r;
}

// Fixed chart offsets used to keep the minimal parameterization away from
// its singularities: the effective pose is R = R(euler) * rot_offset,
// t = trans_offset * t(alpha, beta). Identity offsets give the standard
// fusion chart.
struct ChartOffsets {
  Mat3 rotation = Mat3::Identity();
  Mat3 translation = Mat3::Identity();
  bool is_identity = true;
};

inline Eigen::Matrix<double, 2, 3> dproj(const Vec3& u) {
  const double iz = 1.0 / u.z();
  Eigen::Matrix<double, 2, 3> d;
  d << iz, 0.0, -u.x() * iz * iz, 0.0, iz, -u.y() * iz * iz;
  return d;
}

struct BaEvaluation {
  VecX residuals;
  BaJacobian jacobian;
  double cost = 0.0;
};

// Core residual/Jacobian evaluation in the (possibly offset) chart.
inline BaEvaluation ba_evaluate(const BaParameterVector& params, const CorrespondenceSet& corr,
                                const ChartOffsets& offsets, bool with_jacobian) {
  const int n = params.point_count();
  if (corr.size() != n) throw EmptyInput("ba_evaluate: point/correspondence count mismatch");

  const double yaw = params.pose[kYaw], pitch = params.pose[kPitch], roll = params.pose[kRoll];
  const double alpha = params.pose[kAlpha], beta = params.pose[kBeta];

  const Mat3 Ry = rot_y(yaw), Rx = rot_x(pitch), Rz = rot_z(roll);
  const Mat3 R_chart = Ry * Rx * Rz;
  const Mat3 R_eff = R_chart * offsets.rotation;
  const Vec3 t_chart = vector_from_sphere({alpha, beta});
  const Vec3 t_eff = offsets.translation * t_chart;

  std::array<Mat3, 3> dR;
  Vec3 dt_alpha, dt_beta;
  if (with_jacobian) {
    dR[0] = drot_y(yaw) * Rx * Rz;
    dR[1] = Ry * drot_x(pitch) * Rz;
    dR[2] = Ry * Rx * drot_z(roll);
    const double ca = std::cos(alpha), sa = std::sin(alpha);
    const double cb = std::cos(beta), sb = std::sin(beta);
    dt_alpha = offsets.translation * Vec3(-sa, ca * cb, ca * sb);
    dt_beta = offsets.translation * Vec3(0.0, -sa * sb, sa * cb);
  }

  BaEvaluation eval;
  eval.residuals.resize(4 * n);
  if (with_jacobian) {
    eval.jacobian.pose_blocks.resize(n);
    eval.jacobian.point_blocks_cam1.resize(n);
    eval.jacobian.point_blocks_cam2.resize(n);
  }

  for (int i = 0; i < n; ++i) {
    const Vec3 X = params.points.row(i).transpose();
    if (X.z() <= kDepthEps) throw BehindCamera("ba_evaluate: point behind camera 1");
    const Vec3 u2 = R_eff * X + t_eff;
    if (u2.z() <= kDepthEps) throw BehindCamera("ba_evaluate: point behind camera 2");

    eval.residuals.segment<2>(4 * i) = corr.x1(i) - Vec2(X.x() / X.z(), X.y() / X.z());
    eval.residuals.segment<2>(4 * i + 2) = corr.x2(i) - Vec2(u2.x() / u2.z(), u2.y() / u2.z());

    if (with_jacobian) {
      const Eigen::Matrix<double, 2, 3> d1 = dproj(X);
      const Eigen::Matrix<double, 2, 3> d2 = dproj(u2);
      eval.jacobian.point_blocks_cam1[i] = -d1;
      eval.jacobian.point_blocks_cam2[i] = -d2 * R_eff;
      Eigen::Matrix<double, 2, 5> P;
      const Vec3 Xo = offsets.rotation * X;
      for (int k = 0; k < 3; ++k) P.col(k) = -d2 * (dR[k] * Xo);
      P.col(3) = -d2 * dt_alpha;
      P.col(4) = -d2 * dt_beta;
      eval.jacobian.pose_blocks[i] = P;
    }
  }
  eval.cost = eval.residuals.squaredNorm();
  return eval;
}

// Chart offsets keeping pitch away from +-pi/2 and alpha away from {0, pi}.
inline ChartOffsets choose_chart(const Mat3& R, const Vec3& t, double margin = 1e-4) {
  ChartOffsets offsets;

  const auto pitch_margin = [](const Mat3& Rc) { return std::hypot(Rc(1, 0), Rc(1, 1)); };
  if (pitch_margin(R) < margin) {
    const std::array<Mat3, 3> cands = {rot_x(kPi / 2), rot_z(kPi / 2), rot_x(kPi / 2) * rot_z(kPi / 2)};
    double best = pitch_margin(R);
    for (const Mat3& S : cands) {
      const double m = pitch_margin(R * S.transpose());
      if (m > best) {
        best = m;
        offsets.rotation = S;
        offsets.is_identity = false;
      }
    }
  }

  const auto alpha_margin = [](const Vec3& tc) { return std::hypot(tc.y(), tc.z()); };
  if (alpha_margin(t) < margin) {
    const std::array<Mat3, 2> cands = {rot_z(kPi / 2), rot_y(kPi / 2)};
    double best = alpha_margin(t);
    for (const Mat3& S : cands) {
      const double m = alpha_margin(S.transpose() * t);
      if (m > best) {
        best = m;
        offsets.translation = S;
        offsets.is_identity = false;
      }
    }
  }
  return offsets;
}

inline Vec5 chart_params(const Mat3& R_eff, const Vec3& t_eff, const ChartOffsets& offsets) {
  const EulerAngles e = euler_from_rotation_any(R_eff * offsets.rotation.transpose());
  const SphereAngles s = sphere_from_vector(offsets.translation.transpose() * t_eff);
  Vec5 p;
  p << e.yaw, e.pitch, e.roll, s.alpha, s.beta;
  return p;
}

}  // namespace detail

// Stacked reprojection residuals and their analytic Jacobian in the standard
// fusion chart.
inline std::pair<VecX, BaJacobian> residuals_and_jacobian(const BaParameterVector& params,
                                                          const CorrespondenceSet& corr) {
  detail::BaEvaluation eval = detail::ba_evaluate(params, corr, detail::ChartOffsets{}, true);
  return {std::move(eval.residuals), std::move(eval.jacobian)};
}

inline VecX ba_residuals(const BaParameterVector& params, const CorrespondenceSet& corr) {
  return detail::ba_evaluate(params, corr, detail::ChartOffsets{}, false).residuals;
}

struct OptimizedEstimate {
  BaParameterVector params;
  VecX residuals;
  BaJacobian jacobian;
  double final_cost = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct LmOptions {
  int max_iterations = 100;
  double initial_lambda = 1e-4;
  double relative_cost_tol = 1e-10;
  double gradient_tol = 1e-10;
};

// Levenberg-Marquardt over the inlier subset, exploiting the block
// structure of the normal equations (point blocks eliminated by Schur
// complement each step).
inline OptimizedEstimate refine(const CameraPose& initial_pose, const CorrespondenceSet& corr,
                                const std::vector<std::uint8_t>& inliers, const LmOptions& opts = {}) {
  std::vector<int> idx;
  for (int i = 0; i < corr.size(); ++i)
    if (i >= static_cast<int>(inliers.size()) || inliers[i]) idx.push_back(i);
  const int n = static_cast<int>(idx.size());
  if (n < 5) throw InsufficientCorrespondences("refine: fewer than 5 inliers");

  const CorrespondenceSet sub = corr.select(idx);
  const detail::ChartOffsets offsets = detail::choose_chart(initial_pose.rotation, initial_pose.translation);

  BaParameterVector params;
  params.pose = detail::chart_params(initial_pose.rotation, initial_pose.translation, offsets);
  params.points.resize(n, 3);
  std::vector<int> unplaced;
  std::vector<double> depths;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    try {
      const Vec3 X = triangulate(initial_pose, sub.x1(i), sub.x2(i));
      const Vec3 u2 = initial_pose.rotation * X + initial_pose.translation;
      if (X.z() > kDepthEps && u2.z() > kDepthEps) {
        params.points.row(i) = X.transpose();
        depths.push_back(X.z());
        placed = true;
      }
    } catch (const Error&) {
    }
    if (!placed) unplaced.push_back(i);
  }
  // points whose initial triangulation is unusable start on the camera-1 ray
  // at a representative depth; LM moves them from there
  if (!unplaced.empty()) {
    std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
    const double fallback = depths.empty() ? 5.0 : depths[depths.size() / 2];
    for (const int i : unplaced) {
      double depth = fallback;
      bool ok = false;
      for (int attempt = 0; attempt < 8 && !ok; ++attempt, depth *= 0.5) {
        const Vec3 X(sub.x1(i).x() * depth, sub.x1(i).y() * depth, depth);
        const Vec3 u2 = initial_pose.rotation * X + initial_pose.translation;
        if (u2.z() > kDepthEps) {
          params.points.row(i) = X.transpose();
          ok = true;
        }
      }
      if (!ok) throw BehindCamera("refine: cannot place an initial point in front of both cameras");
    }
  }

  detail::BaEvaluation eval = detail::ba_evaluate(params, sub, offsets, true);
  double cost = eval.cost;
  if (!std::isfinite(cost)) throw DivergedOptimization("refine: non-finite initial cost");

  double lambda = opts.initial_lambda;
  bool converged = cost < 1e-24;
  int iter = 0;

  for (; iter < opts.max_iterations && !converged; ++iter) {
    // assemble block normal equations
    Mat5 pose_info = Mat5::Zero();
    Vec5 pose_grad = Vec5::Zero();
    std::vector<Mat3> W(n);
    std::vector<Eigen::Matrix<double, 5, 3>> C(n);
    std::vector<Vec3> point_grad(n);
    double grad_inf = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto& A = eval.jacobian.pose_blocks[i];
      const auto& B1 = eval.jacobian.point_blocks_cam1[i];
      const auto& B2 = eval.jacobian.point_blocks_cam2[i];
      const Vec2 r1 = eval.residuals.segment<2>(4 * i);
      const Vec2 r2 = eval.residuals.segment<2>(4 * i + 2);
      pose_info += A.transpose() * A;
      W[i] = B1.transpose() * B1 + B2.transpose() * B2;
      C[i] = A.transpose() * B2;
      pose_grad += A.transpose() * r2;
      point_grad[i] = B1.transpose() * r1 + B2.transpose() * r2;
      grad_inf = std::max(grad_inf, point_grad[i].cwiseAbs().maxCoeff());
    }
    grad_inf = std::max(grad_inf, pose_grad.cwiseAbs().maxCoeff());
    if (grad_inf < opts.gradient_tol) {
      converged = true;
      break;
    }

    // damped Schur solve for the pose, then back-substitution
    bool accepted = false;
    while (!accepted) {
      Mat5 S = pose_info;
      for (int k = 0; k < 5; ++k) S(k, k) += lambda * std::max(pose_info(k, k), 1e-12);
      Vec5 rhs = -pose_grad;
      std::vector<Mat3> W_inv(n);
      bool ok = true;
      for (int i = 0; i < n; ++i) {
        Mat3 Wd = W[i];
        for (int k = 0; k < 3; ++k) Wd(k, k) += lambda * std::max(W[i](k, k), 1e-12);
        W_inv[i] = Wd.inverse();
        if (!W_inv[i].allFinite()) {
          ok = false;
          break;
        }
        S -= C[i] * W_inv[i] * C[i].transpose();
        rhs += C[i] * (W_inv[i] * point_grad[i]);
      }

      BaParameterVector trial = params;
      double trial_cost = std::numeric_limits<double>::infinity();
      if (ok) {
        const Vec5 delta_pose = S.ldlt().solve(rhs);
        if (delta_pose.allFinite()) {
          trial.pose = params.pose + delta_pose;
          for (int i = 0; i < n; ++i) {
            const Vec3 delta_point = -W_inv[i] * (point_grad[i] + C[i].transpose() * delta_pose);
            trial.points.row(i) = params.points.row(i) + delta_point.transpose();
          }
          try {
            trial_cost = detail::ba_evaluate(trial, sub, offsets, false).cost;
          } catch (const BehindCamera&) {
            trial_cost = std::numeric_limits<double>::infinity();
          }
        }
      }

      if (std::isnan(trial_cost)) throw DivergedOptimization("refine: non-finite cost");

      if (trial_cost < cost) {
        const double rel_decrease = (cost - trial_cost) / std::max(cost, 1e-300);
        params = std::move(trial);
        cost = trial_cost;
        eval = detail::ba_evaluate(params, sub, offsets, true);
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (rel_decrease < opts.relative_cost_tol || cost < 1e-24) converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e10) {
          accepted = true;  // stalled; LM cannot make progress at this scale
          converged = true;
        }
      }
    }
  }

  // map back to the standard chart and report residuals/Jacobian there
  OptimizedEstimate out;
  const Mat3 R_chart = rotation_from_euler({params.pose[kYaw], params.pose[kPitch], params.pose[kRoll]});
  const Vec3 t_chart = vector_from_sphere({params.pose[kAlpha], params.pose[kBeta]});
  const Mat3 R_eff = R_chart * offsets.rotation;
  const Vec3 t_eff = (offsets.translation * t_chart).normalized();
  out.params.pose = detail::chart_params(R_eff, t_eff, detail::ChartOffsets{});
  out.params.points = params.points;
  detail::BaEvaluation final_eval = detail::ba_evaluate(out.params, sub, detail::ChartOffsets{}, true);
  out.residuals = std::move(final_eval.residuals);
  out.jacobian = std::move(final_eval.jacobian);
  out.final_cost = final_eval.cost;
  out.converged = converged;
  out.iterations = iter;
  if (!std::isfinite(out.final_cost)) throw DivergedOptimization("refine: non-finite final cost");
  return out;
}

}  // namespace relpose
