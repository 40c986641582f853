#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "relpose/errors.hpp"
#include "relpose/motion.hpp"
#include "relpose/rng.hpp"
#include "relpose/types.hpp"

// The learned branch: a pointwise embedding of the correspondences followed
// by L residual self-attention message-passing layers, average pooling and
// two head MLPs. The pose head regresses the three Euler angles directly and
// a raw translation 3-vector that is unit-normalized before conversion to
// sphere angles; the uncertainty head emits raw log-precisions mapped through
// exp to the five inverse variances.

namespace relpose {

inline constexpr double kIvarMin = 1e-6;
inline constexpr double kIvarMax = 1e8;
// below this raw value exp underflows to exactly zero; kept as an escape so a
// zero-confidence head is representable
inline constexpr double kIvarRawUnderflow = -745.0;

inline double ivar_from_raw(double raw) {
  const double e = std::exp(raw);
  if (e == 0.0) return 0.0;
  return std::clamp(e, kIvarMin, kIvarMax);
}

inline double ivar_from_raw_derivative(double raw) {
  const double e = std::exp(raw);
  if (e <= kIvarMin || e >= kIvarMax) return 0.0;
  return e;
}

struct AttentionLayerWeights {
  MatX wq, bq;  // d x d, 1 x d
  MatX wk, bk;
  MatX wv, bv;
  MatX u1, ub1;  // 2d x 2d, 1 x 2d
  MatX u2, ub2;  // 2d x d,  1 x d
};

struct NetworkWeights {
  int d = 32;
  int L = 4;

  MatX embed_w1, embed_b1;  // 4 x d, 1 x d
  MatX embed_w2, embed_b2;  // d x d, 1 x d
  std::vector<AttentionLayerWeights> layers;
  MatX pool_w, pool_b;      // d x d, 1 x d
  MatX pose_w1, pose_b1;    // d x d, 1 x d
  MatX pose_w2, pose_b2;    // d x 6, 1 x 6
  MatX unc_w1, unc_b1;      // d x d, 1 x d
  MatX unc_w2, unc_b2;      // d x 5, 1 x 5

  // per-parameter median of the geometric inverse variances over a training
  // set; consumed by the median-uncertainty baseline
  Vec5 median_geo_ivar = Vec5::Zero();

  template <typename Fn>
  void for_each_array(Fn&& fn) {
    fn("embed.w1", embed_w1);
    fn("embed.b1", embed_b1);
    fn("embed.w2", embed_w2);
    fn("embed.b2", embed_b2);
    for (int l = 0; l < L; ++l) {
      const std::string p = "attn" + std::to_string(l) + ".";
      fn(p + "wq", layers[l].wq);
      fn(p + "bq", layers[l].bq);
      fn(p + "wk", layers[l].wk);
      fn(p + "bk", layers[l].bk);
      fn(p + "wv", layers[l].wv);
      fn(p + "bv", layers[l].bv);
      fn(p + "u1", layers[l].u1);
      fn(p + "ub1", layers[l].ub1);
      fn(p + "u2", layers[l].u2);
      fn(p + "ub2", layers[l].ub2);
    }
    fn("pool.w", pool_w);
    fn("pool.b", pool_b);
    fn("pose.w1", pose_w1);
    fn("pose.b1", pose_b1);
    fn("pose.w2", pose_w2);
    fn("pose.b2", pose_b2);
    fn("unc.w1", unc_w1);
    fn("unc.b1", unc_b1);
    fn("unc.w2", unc_w2);
    fn("unc.b2", unc_b2);
  }

  template <typename Fn>
  void for_each_array(Fn&& fn) const {
    const_cast<NetworkWeights*>(this)->for_each_array(
        [&](const std::string& name, MatX& m) { fn(name, static_cast<const MatX&>(m)); });
  }

  static NetworkWeights zeros(int d, int L) {
    NetworkWeights w;
    w.d = d;
    w.L = L;
    w.embed_w1 = MatX::Zero(4, d);
    w.embed_b1 = MatX::Zero(1, d);
    w.embed_w2 = MatX::Zero(d, d);
    w.embed_b2 = MatX::Zero(1, d);
    w.layers.resize(L);
    for (auto& layer : w.layers) {
      layer.wq = MatX::Zero(d, d);
      layer.bq = MatX::Zero(1, d);
      layer.wk = MatX::Zero(d, d);
      layer.bk = MatX::Zero(1, d);
      layer.wv = MatX::Zero(d, d);
      layer.bv = MatX::Zero(1, d);
      layer.u1 = MatX::Zero(2 * d, 2 * d);
      layer.ub1 = MatX::Zero(1, 2 * d);
      layer.u2 = MatX::Zero(2 * d, d);
      layer.ub2 = MatX::Zero(1, d);
    }
    w.pool_w = MatX::Zero(d, d);
    w.pool_b = MatX::Zero(1, d);
    w.pose_w1 = MatX::Zero(d, d);
    w.pose_b1 = MatX::Zero(1, d);
    w.pose_w2 = MatX::Zero(d, 6);
    w.pose_b2 = MatX::Zero(1, 6);
    w.unc_w1 = MatX::Zero(d, d);
    w.unc_b1 = MatX::Zero(1, d);
    w.unc_w2 = MatX::Zero(d, 5);
    w.unc_b2 = MatX::Zero(1, 5);
    return w;
  }

  // Deterministic scaled-normal initialization. The translation bias starts
  // at +z so the direction normalization is well-conditioned from step one.
  static NetworkWeights random(int d, int L, std::uint64_t seed) {
    NetworkWeights w = zeros(d, L);
    Rng rng(seed);
    w.for_each_array([&](const std::string&, MatX& m) {
      if (m.rows() == 1) return;  // biases stay zero
      const double scale = 1.0 / std::sqrt(static_cast<double>(m.rows()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = scale * rng.normal();
    });
    w.pose_b2(0, 5) = 1.0;
    return w;
  }
};

inline MatX relu(const MatX& m) { return m.cwiseMax(0.0); }

// Pointwise embedding MLP; row i depends only on correspondence i. Rows are
// evaluated one at a time so the output is bitwise identical under input
// permutation (blocked matrix kernels are not).
inline MatX embed_correspondences(const CorrespondenceSet& corr, const NetworkWeights& w,
                                  MatX* hidden_pre = nullptr) {
  const int n = corr.size();
  if (n < 1) throw EmptyInput("embed_correspondences: empty correspondence set");
  MatX pre(n, w.d);
  MatX out(n, w.d);
  for (int i = 0; i < n; ++i) {
    pre.row(i) = corr.points.row(i).lazyProduct(w.embed_w1) + w.embed_b1.row(0);
    out.row(i) = pre.row(i).cwiseMax(0.0).lazyProduct(w.embed_w2) + w.embed_b2.row(0);
  }
  if (hidden_pre) *hidden_pre = pre;
  return out;
}

struct AttentionTrace {
  MatX q, k, v;        // n x d
  MatX attn;           // n x n, row-stochastic
  MatX message;        // n x d
  MatX update_pre;     // n x 2d, pre-activation of the update MLP
};

// One residual self-attention message-passing step:
// f <- f + MLP([f, softmax(Q K^T / sqrt(d)) V]).
inline MatX attention_layer(const MatX& features, const AttentionLayerWeights& lw,
                            AttentionTrace* trace = nullptr) {
  const int n = static_cast<int>(features.rows());
  const int d = static_cast<int>(features.cols());
  if (n < 1) throw EmptyInput("attention_layer: empty feature set");

  const MatX q = (features * lw.wq).rowwise() + lw.bq.row(0);
  const MatX k = (features * lw.wk).rowwise() + lw.bk.row(0);
  const MatX v = (features * lw.wv).rowwise() + lw.bv.row(0);

  MatX attn = q * k.transpose() / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < n; ++i) {
    const double row_max = attn.row(i).maxCoeff();
    attn.row(i) = (attn.row(i).array() - row_max).exp();
    attn.row(i) /= attn.row(i).sum();
  }
  const MatX message = attn * v;

  MatX concat(n, 2 * d);
  concat.leftCols(d) = features;
  concat.rightCols(d) = message;
  const MatX update_pre = (concat * lw.u1).rowwise() + lw.ub1.row(0);
  const MatX update = (relu(update_pre) * lw.u2).rowwise() + lw.ub2.row(0);

  if (trace) {
    trace->q = q;
    trace->k = k;
    trace->v = v;
    trace->attn = attn;
    trace->message = message;
    trace->update_pre = update_pre;
  }
  return features + update;
}

struct ForwardTrace {
  MatX embed_pre;                     // n x d
  std::vector<MatX> features;        // L + 1 entries, n x d
  std::vector<AttentionTrace> attn;  // L entries
  MatX pool_pre;                     // n x d
  MatX pooled;                       // 1 x d
  MatX pose_pre, unc_pre;            // 1 x d
  MatX pose_out;                     // 1 x 6
  MatX unc_raw;                      // 1 x 5
  Vec3 t_raw = Vec3::Zero();
  Vec3 t_dir = Vec3::Zero();
  double t_norm = 0.0;
  bool t_singular = false;
  GaussianEstimate estimate;
};

// Full learned-branch forward pass. Always yields a valid estimate.
inline GaussianEstimate forward(const CorrespondenceSet& corr, const NetworkWeights& w,
                                ForwardTrace* trace = nullptr) {
  const int n = corr.size();
  if (n < 1) throw EmptyInput("forward: empty correspondence set");

  ForwardTrace local;
  ForwardTrace& t = trace ? *trace : local;

  t.features.clear();
  t.attn.clear();
  t.features.reserve(w.L + 1);
  t.attn.resize(w.L);

  t.features.push_back(embed_correspondences(corr, w, &t.embed_pre));
  for (int l = 0; l < w.L; ++l) t.features.push_back(attention_layer(t.features.back(), w.layers[l], &t.attn[l]));

  t.pool_pre = (t.features.back() * w.pool_w).rowwise() + w.pool_b.row(0);
  t.pooled = relu(t.pool_pre).colwise().mean();

  t.pose_pre = t.pooled * w.pose_w1 + w.pose_b1;
  t.pose_out = relu(t.pose_pre) * w.pose_w2 + w.pose_b2;
  t.unc_pre = t.pooled * w.unc_w1 + w.unc_b1;
  t.unc_raw = relu(t.unc_pre) * w.unc_w2 + w.unc_b2;

  t.t_raw = Vec3(t.pose_out(0, 3), t.pose_out(0, 4), t.pose_out(0, 5));
  t.t_norm = t.t_raw.norm();
  t.t_singular = !(t.t_norm > 1e-12);

  GaussianEstimate& est = t.estimate;
  est.means[kYaw] = t.pose_out(0, 0);
  est.means[kPitch] = t.pose_out(0, 1);
  est.means[kRoll] = t.pose_out(0, 2);
  if (t.t_singular) {
    t.t_dir = Vec3::UnitX();
    est.means[kAlpha] = 0.0;
    est.means[kBeta] = 0.0;
  } else {
    t.t_dir = t.t_raw / t.t_norm;
    const SphereAngles s = sphere_from_vector(t.t_dir);
    est.means[kAlpha] = s.alpha;
    est.means[kBeta] = s.beta;
  }
  for (int i = 0; i < 5; ++i) est.inverse_variances[i] = ivar_from_raw(t.unc_raw(0, i));
  est.valid = true;
  return est;
}

}  // namespace relpose
