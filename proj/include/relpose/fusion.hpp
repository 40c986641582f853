#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "relpose/errors.hpp"
#include "relpose/motion.hpp"
#include "relpose/types.hpp"

// Per-parameter Gaussian fusion of the geometric and learned estimates. The
// fused mean is the precision-weighted average and the fused precision is the
// sum of the branch precisions. Angles are fused circularly: the geometric
// mean is first shifted by 2k*pi to the representative nearest the learned
// mean.

namespace relpose {

struct Fused1d {
  double mean = 0.0;
  double inverse_variance = 0.0;
};

inline Fused1d fuse_gaussian_1d(double mean_g, double ivar_g, double mean_d, double ivar_d) {
  if (ivar_g < 0.0 || ivar_d < 0.0) throw std::invalid_argument("fuse_gaussian_1d: negative inverse variance");
  if (ivar_g + ivar_d <= 0.0) throw NoInformation("fuse_gaussian_1d: both inverse variances are zero");
  // exact passthrough when one branch carries no information
  if (ivar_g == 0.0) return {mean_d, ivar_d};
  if (ivar_d == 0.0) return {mean_g, ivar_g};
  const double ivar = ivar_g + ivar_d;
  return {(ivar_g * mean_g + ivar_d * mean_d) / ivar, ivar};
}

struct FusedPose {
  MotionParams params;
  GaussianEstimate estimate;
};

// geo may be invalid (treated as zero precision on every parameter); the
// learned branch must be valid.
inline FusedPose fuse_pose(const GaussianEstimate& geo, const GaussianEstimate& dnn) {
  if (!dnn.valid) throw std::invalid_argument("fuse_pose: learned estimate must be valid");

  Vec5 geo_ivar = geo.valid ? geo.inverse_variances : Vec5::Zero();

  FusedPose out;
  out.estimate.valid = true;
  for (int k = 0; k < 5; ++k) {
    double mean_g = geo.means[k];
    if (k != kAlpha) mean_g = circular_nearest(dnn.means[k], mean_g);
    const Fused1d f = fuse_gaussian_1d(mean_g, geo_ivar[k], dnn.means[k], dnn.inverse_variances[k]);
    out.estimate.means[k] = f.mean;
    out.estimate.inverse_variances[k] = f.inverse_variance;
  }
  out.estimate.means[kAlpha] = std::clamp(out.estimate.means[kAlpha], 0.0, kPi);
  out.estimate.means[kBeta] = wrap_half_open(out.estimate.means[kBeta]);
  out.params = MotionParams::from_vector(out.estimate.means);
  return out;
}

}  // namespace relpose
