#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "relpose/errors.hpp"
#include "relpose/fusion.hpp"
#include "relpose/motion.hpp"
#include "relpose/network.hpp"
#include "relpose/parallel.hpp"
#include "relpose/rng.hpp"
#include "relpose/types.hpp"

// Loss on the fused output and its exact reverse-mode gradient w.r.t. the
// network weights. The geometric estimate is a constant input per scene:
// gradients flow through fusion into the learned branch only, and the
// circular re-anchoring shifts are treated as constants within a step.

namespace relpose {

struct TrainingScene {
  CorrespondenceSet corr;
  CameraPose gt_pose;
  GaussianEstimate geo;  // may be invalid; fusion then passes the network through
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 40;
  double loss_weight = 1.0;  // weight of the rotation term
  std::uint64_t seed = 7;
  double grad_clip = 1.0;    // global gradient-norm bound
  int d = 32;
  int L = 4;
  int threads = 1;
};

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// L1 pose loss: |t(alpha_f, beta_f) - t*|_1 + w |theta_Rf - rep(theta_R*)|_1
// where rep() is the per-component circular-nearest representative of the
// ground-truth Euler angles relative to the fused ones.
inline double loss(const MotionParams& fused, const CameraPose& gt_pose, double w) {
  const EulerAngles gt_euler = euler_from_rotation_any(gt_pose.rotation);
  const Vec3 t_fused = vector_from_sphere({fused.alpha, fused.beta});
  const Vec3 t_gt = gt_pose.translation.normalized();

  double value = (t_fused - t_gt).cwiseAbs().sum();
  const double fused_rot[3] = {fused.yaw, fused.pitch, fused.roll};
  const double gt_rot[3] = {gt_euler.yaw, gt_euler.pitch, gt_euler.roll};
  for (int k = 0; k < 3; ++k) value += w * std::abs(fused_rot[k] - circular_nearest(fused_rot[k], gt_rot[k]));
  return value;
}

struct FusedLossGrad {
  double value = 0.0;
  MotionParams fused;
  GaussianEstimate fused_estimate;
  Vec5 d_means = Vec5::Zero();  // w.r.t. the learned means
  Vec5 d_ivars = Vec5::Zero();  // w.r.t. the learned inverse variances
};

inline FusedLossGrad fused_loss_with_grad(const GaussianEstimate& geo, const GaussianEstimate& dnn,
                                          const CameraPose& gt_pose, double w) {
  FusedLossGrad out;
  const FusedPose fused = fuse_pose(geo, dnn);
  out.fused = fused.params;
  out.fused_estimate = fused.estimate;
  out.value = loss(fused.params, gt_pose, w);

  const Vec5 geo_ivar = geo.valid ? geo.inverse_variances : Vec5::Zero();

  // dL/dfused
  Vec5 d_fused = Vec5::Zero();
  const EulerAngles gt_euler = euler_from_rotation_any(gt_pose.rotation);
  const double gt_rot[3] = {gt_euler.yaw, gt_euler.pitch, gt_euler.roll};
  const double fused_rot[3] = {fused.params.yaw, fused.params.pitch, fused.params.roll};
  for (int k = 0; k < 3; ++k) d_fused[k] = w * sign_of(fused_rot[k] - circular_nearest(fused_rot[k], gt_rot[k]));

  const double ca = std::cos(fused.params.alpha), sa = std::sin(fused.params.alpha);
  const double cb = std::cos(fused.params.beta), sb = std::sin(fused.params.beta);
  const Vec3 t_fused(ca, sa * cb, sa * sb);
  const Vec3 t_gt = gt_pose.translation.normalized();
  const Vec3 s = (t_fused - t_gt).unaryExpr([](double v) { return sign_of(v); });
  d_fused[kAlpha] = s.dot(Vec3(-sa, ca * cb, ca * sb));
  d_fused[kBeta] = s.dot(Vec3(0.0, -sa * sb, sa * cb));

  // clamped fused alpha has zero sensitivity
  {
    const double mean_g = geo.means[kAlpha];
    const Fused1d pre = fuse_gaussian_1d(mean_g, geo_ivar[kAlpha], dnn.means[kAlpha],
                                         dnn.inverse_variances[kAlpha]);
    if (pre.mean < 0.0 || pre.mean > kPi) d_fused[kAlpha] = 0.0;
  }

  // through the per-parameter fusion; the circular shift of the geometric
  // mean is constant w.r.t. the learned branch
  for (int k = 0; k < 5; ++k) {
    const double iv_g = geo_ivar[k];
    const double iv_d = dnn.inverse_variances[k];
    const double total = iv_g + iv_d;
    if (iv_g == 0.0) {
      out.d_means[k] = d_fused[k];
      out.d_ivars[k] = 0.0;
      continue;
    }
    double mean_g = geo.means[k];
    if (k != kAlpha) mean_g = circular_nearest(dnn.means[k], mean_g);
    const double fused_pre = iv_d > 0.0 ? (iv_g * mean_g + iv_d * dnn.means[k]) / total : mean_g;
    out.d_means[k] = d_fused[k] * (iv_d / total);
    out.d_ivars[k] = d_fused[k] * (dnn.means[k] - fused_pre) / total;
  }
  return out;
}

namespace detail {

inline void backward_linear(const MatX& input, const MatX& d_out, const MatX& weight, MatX& grad_w, MatX& grad_b,
                            MatX& d_input, bool accumulate_input) {
  grad_w += input.transpose() * d_out;
  grad_b += d_out.colwise().sum();
  if (accumulate_input)
    d_input += d_out * weight.transpose();
  else
    d_input = d_out * weight.transpose();
}

inline MatX relu_mask(const MatX& pre) {
  return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

}  // namespace detail

// Accumulates dL/dweights for one scene into `grad`, given the loss
// derivatives w.r.t. the learned means and inverse variances.
inline void network_backward(const CorrespondenceSet& corr, const NetworkWeights& w, const ForwardTrace& t,
                             const Vec5& d_means, const Vec5& d_ivars, NetworkWeights& grad) {
  const int n = corr.size();
  const int d = w.d;

  // head outputs
  MatX d_pose_out = MatX::Zero(1, 6);
  d_pose_out(0, 0) = d_means[kYaw];
  d_pose_out(0, 1) = d_means[kPitch];
  d_pose_out(0, 2) = d_means[kRoll];

  if (!t.t_singular) {
    const Vec3 u = t.t_dir;
    Vec3 d_dir = Vec3::Zero();
    const double s2 = 1.0 - u.x() * u.x();
    if (s2 > 1e-12) d_dir.x() += d_means[kAlpha] * (-1.0 / std::sqrt(s2));
    const double denom = u.y() * u.y() + u.z() * u.z();
    if (denom > 1e-18) {
      d_dir.y() += d_means[kBeta] * (-u.z() / denom);
      d_dir.z() += d_means[kBeta] * (u.y() / denom);
    }
    const Vec3 d_raw = (d_dir - u * u.dot(d_dir)) / t.t_norm;
    d_pose_out(0, 3) = d_raw.x();
    d_pose_out(0, 4) = d_raw.y();
    d_pose_out(0, 5) = d_raw.z();
  }

  MatX d_unc_raw = MatX::Zero(1, 5);
  for (int k = 0; k < 5; ++k) d_unc_raw(0, k) = d_ivars[k] * ivar_from_raw_derivative(t.unc_raw(0, k));

  // pose head
  MatX d_pooled = MatX::Zero(1, d);
  {
    const MatX hp = relu(t.pose_pre);
    MatX d_hp(1, d);
    detail::backward_linear(hp, d_pose_out, w.pose_w2, grad.pose_w2, grad.pose_b2, d_hp, false);
    const MatX d_pre = d_hp.cwiseProduct(detail::relu_mask(t.pose_pre));
    detail::backward_linear(t.pooled, d_pre, w.pose_w1, grad.pose_w1, grad.pose_b1, d_pooled, true);
  }
  // uncertainty head
  {
    const MatX hu = relu(t.unc_pre);
    MatX d_hu(1, d);
    detail::backward_linear(hu, d_unc_raw, w.unc_w2, grad.unc_w2, grad.unc_b2, d_hu, false);
    const MatX d_pre = d_hu.cwiseProduct(detail::relu_mask(t.unc_pre));
    detail::backward_linear(t.pooled, d_pre, w.unc_w1, grad.unc_w1, grad.unc_b1, d_pooled, true);
  }

  // average pooling and pre-pool MLP
  const MatX d_G = MatX::Ones(n, 1) * (d_pooled / static_cast<double>(n));
  const MatX d_pool_pre = d_G.cwiseProduct(detail::relu_mask(t.pool_pre));
  MatX d_features(n, d);
  detail::backward_linear(t.features.back(), d_pool_pre, w.pool_w, grad.pool_w, grad.pool_b, d_features, false);

  // attention layers, reversed
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = w.L - 1; l >= 0; --l) {
    const AttentionLayerWeights& lw = w.layers[l];
    AttentionLayerWeights& gl = grad.layers[l];
    const AttentionTrace& at = t.attn[l];
    const MatX& f_in = t.features[l];

    const MatX d_update = d_features;  // residual: d_features flows to both terms

    MatX concat(n, 2 * d);
    concat.leftCols(d) = f_in;
    concat.rightCols(d) = at.message;

    const MatX hidden = relu(at.update_pre);
    MatX d_hidden(n, 2 * d);
    detail::backward_linear(hidden, d_update, lw.u2, gl.u2, gl.ub2, d_hidden, false);
    const MatX d_update_pre = d_hidden.cwiseProduct(detail::relu_mask(at.update_pre));
    MatX d_concat(n, 2 * d);
    detail::backward_linear(concat, d_update_pre, lw.u1, gl.u1, gl.ub1, d_concat, false);

    MatX d_f = d_features + d_concat.leftCols(d);
    const MatX d_message = d_concat.rightCols(d);

    // attention backward
    const MatX d_attn = d_message * at.v.transpose();
    const MatX d_v = at.attn.transpose() * d_message;
    MatX d_scores(n, n);
    for (int i = 0; i < n; ++i) {
      const double dot = d_attn.row(i).dot(at.attn.row(i));
      d_scores.row(i) = (d_attn.row(i).array() - dot) * at.attn.row(i).array();
    }
    const MatX d_q = d_scores * at.k * inv_sqrt_d;
    const MatX d_k = d_scores.transpose() * at.q * inv_sqrt_d;

    detail::backward_linear(f_in, d_q, lw.wq, gl.wq, gl.bq, d_f, true);
    detail::backward_linear(f_in, d_k, lw.wk, gl.wk, gl.bk, d_f, true);
    detail::backward_linear(f_in, d_v, lw.wv, gl.wv, gl.bv, d_f, true);
    d_features = std::move(d_f);
  }

  // embedding
  const MatX hidden = relu(t.embed_pre);
  MatX d_hidden(n, d);
  detail::backward_linear(hidden, d_features, w.embed_w2, grad.embed_w2, grad.embed_b2, d_hidden, false);
  const MatX d_embed_pre = d_hidden.cwiseProduct(detail::relu_mask(t.embed_pre));
  grad.embed_w1 += corr.points.transpose() * d_embed_pre;
  grad.embed_b1 += d_embed_pre.colwise().sum();
}

struct BatchGradient {
  NetworkWeights grad;   // d(mean loss)/dweights
  double mean_loss = 0.0;
};

// Mean-loss gradient over a batch. Scenes are evaluated independently (in
// parallel if requested) and reduced in index order, so the result does not
// depend on the thread count.
inline BatchGradient gradient(const std::vector<TrainingScene>& batch, const NetworkWeights& w,
                              double loss_weight, int threads = 1) {
  if (batch.empty()) throw std::invalid_argument("gradient: empty batch");
  const int b = static_cast<int>(batch.size());

  std::vector<NetworkWeights> grads(b);
  std::vector<double> losses(b, 0.0);
  parallel_for(b, threads, [&](int i) {
    grads[i] = NetworkWeights::zeros(w.d, w.L);
    ForwardTrace trace;
    const GaussianEstimate dnn = forward(batch[i].corr, w, &trace);
    const FusedLossGrad fl = fused_loss_with_grad(batch[i].geo, dnn, batch[i].gt_pose, loss_weight);
    losses[i] = fl.value;
    network_backward(batch[i].corr, w, trace, fl.d_means, fl.d_ivars, grads[i]);
  });

  BatchGradient out;
  out.grad = NetworkWeights::zeros(w.d, w.L);
  for (int i = 0; i < b; ++i) {
    out.mean_loss += losses[i];
    std::vector<const MatX*> src;
    grads[i].for_each_array([&](const std::string&, const MatX& m) { src.push_back(&m); });
    int k = 0;
    out.grad.for_each_array([&](const std::string&, MatX& m) { m += *src[k++]; });
  }
  const double scale = 1.0 / static_cast<double>(b);
  out.mean_loss *= scale;
  out.grad.for_each_array([&](const std::string&, MatX& m) { m *= scale; });
  if (!std::isfinite(out.mean_loss)) throw NonFiniteLoss("gradient: non-finite batch loss");
  return out;
}

struct TrainResult {
  NetworkWeights weights;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

// Minibatch Adam with cosine-decayed step size and global gradient-norm
// clipping. Deterministic for a fixed config.
inline TrainResult train(const std::vector<TrainingScene>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const int n = static_cast<int>(dataset.size());

  TrainResult result;
  result.weights = NetworkWeights::random(cfg.d, cfg.L, cfg.seed);

  NetworkWeights adam_m = NetworkWeights::zeros(cfg.d, cfg.L);
  NetworkWeights adam_v = NetworkWeights::zeros(cfg.d, cfg.L);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_steps = std::max(1, cfg.epochs * batches_per_epoch);
  int step = 0;

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic Fisher-Yates shuffle
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5u + static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
      std::swap(order[i], order[j]);
    }

    double epoch_loss_sum = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min(n, lo + cfg.batch_size);
      std::vector<TrainingScene> batch;
      batch.reserve(hi - lo);
      for (int i = lo; i < hi; ++i) batch.push_back(dataset[order[i]]);

      BatchGradient bg;
      try {
        bg = gradient(batch, result.weights, cfg.loss_weight, cfg.threads);
      } catch (const NonFiniteLoss&) {
        throw NonFiniteLoss("train: non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
      }
      epoch_loss_sum += bg.mean_loss * (hi - lo);

      // global-norm clip
      double sq = 0.0;
      bg.grad.for_each_array([&](const std::string&, const MatX& m) { sq += m.squaredNorm(); });
      const double gnorm = std::sqrt(sq);
      if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) {
        const double s = cfg.grad_clip / gnorm;
        bg.grad.for_each_array([&](const std::string&, MatX& m) { m *= s; });
      }

      const double lr = cfg.learning_rate * 0.5 *
                        (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
      ++step;

      std::vector<MatX*> gp, mp, vp;
      bg.grad.for_each_array([&](const std::string&, MatX& m) { gp.push_back(&m); });
      adam_m.for_each_array([&](const std::string&, MatX& m) { mp.push_back(&m); });
      adam_v.for_each_array([&](const std::string&, MatX& m) { vp.push_back(&m); });
      int k = 0;
      const double bc1 = 1.0 - std::pow(beta1, step);
      const double bc2 = 1.0 - std::pow(beta2, step);
      result.weights.for_each_array([&](const std::string&, MatX& wm) {
        MatX& g = *gp[k];
        MatX& m = *mp[k];
        MatX& v = *vp[k];
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        const MatX m_hat = m / bc1;
        const MatX v_hat = v / bc2;
        wm -= lr * (m_hat.array() / (v_hat.array().sqrt() + adam_eps)).matrix();
        ++k;
      });
    }
    result.epoch_loss.push_back(epoch_loss_sum / n);
  }
  return result;
}

}  // namespace relpose
