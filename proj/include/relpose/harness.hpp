#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "relpose/bundle_adjust.hpp"
#include "relpose/errors.hpp"
#include "relpose/fusion.hpp"
#include "relpose/network.hpp"
#include "relpose/parallel.hpp"
#include "relpose/ransac.hpp"
#include "relpose/serialization.hpp"
#include "relpose/simulator.hpp"
#include "relpose/training.hpp"
#include "relpose/uncertainty.hpp"

// End-to-end pipelines over dataset files, angular-error metrics, baseline
// modes and CSV emission. Per-scene failures are recorded in the result row;
// only file-level problems abort a run.

namespace relpose {

// (rotation error, translation error), both in degrees
inline std::pair<double, double> evaluate_pose(const CameraPose& est, const CameraPose& gt) {
  const Mat3 dR = est.rotation * gt.rotation.transpose();
  const double cos_rot = std::clamp(0.5 * (dR.trace() - 1.0), -1.0, 1.0);
  const double rot_err = std::acos(cos_rot) * 180.0 / kPi;
  const double cos_trans = std::clamp(est.translation.normalized().dot(gt.translation.normalized()), -1.0, 1.0);
  const double trans_err = std::acos(cos_trans) * 180.0 / kPi;
  return {rot_err, trans_err};
}

enum class PipelineMode { kGeo, kDnn, kFused, kMedian, kNoUnc };

inline std::optional<PipelineMode> parse_mode(const std::string& name) {
  if (name == "geo") return PipelineMode::kGeo;
  if (name == "dnn") return PipelineMode::kDnn;
  if (name == "fused") return PipelineMode::kFused;
  if (name == "median") return PipelineMode::kMedian;
  if (name == "no_unc") return PipelineMode::kNoUnc;
  return std::nullopt;
}

inline bool mode_needs_weights(PipelineMode mode) { return mode != PipelineMode::kGeo; }
inline bool mode_needs_geometry(PipelineMode mode) {
  return mode == PipelineMode::kGeo || mode == PipelineMode::kFused || mode == PipelineMode::kMedian;
}

struct PipelineOptions {
  RansacConfig ransac;        // rng_seed is derived per scene
  double sigma_meas = 1.0;
  int threads = 1;
};

struct SceneResult {
  std::string scene_id;
  SceneMeta meta;
  MotionParams gt;
  bool geo_valid = false;
  int inlier_count = 0;
  std::optional<double> h_ratio;
  std::optional<MotionParams> geo, dnn, fused;
  std::optional<Vec5> geo_ivar, dnn_ivar, fused_ivar;
  std::optional<double> rot_err_geo, trans_err_geo;
  std::optional<double> rot_err_dnn, trans_err_dnn;
  std::optional<double> rot_err_fused, trans_err_fused;
};

inline std::uint64_t scene_seed_base(const std::string& scene_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (const char c : scene_id) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Geometric branch: RANSAC + bundle adjustment + Schur uncertainty. Any
// failure yields an invalid estimate.
struct GeoBranchResult {
  GaussianEstimate estimate;     // valid=false on failure
  std::optional<MotionParams> pose_params;
  int inlier_count = 0;
};

inline GeoBranchResult run_geometric_branch(const CorrespondenceSet& corr, const RansacConfig& cfg,
                                            double sigma_meas) {
  GeoBranchResult out;
  try {
    const RansacResult ransac = ransac_relative_pose(corr, cfg);
    out.inlier_count = ransac.inlier_count;
    const OptimizedEstimate refined = refine(ransac.pose, corr, ransac.inliers);
    if (!refined.converged) return out;
    out.pose_params = MotionParams::from_vector(refined.params.pose);
    out.estimate = pose_uncertainty(refined, sigma_meas);
  } catch (const Error&) {
    out.estimate.valid = false;
  }
  return out;
}

inline SceneResult evaluate_scene(const ScenePair& scene, PipelineMode mode, const NetworkWeights* weights,
                                  const PipelineOptions& opts) {
  SceneResult row;
  row.scene_id = scene.scene_id;
  row.meta = scene.meta;
  row.gt = motion_from_pose(scene.gt_pose);
  const std::uint64_t base = scene_seed_base(scene.scene_id);

  if (scene.corr.size() >= 4) {
    RansacConfig hcfg = opts.ransac;
    hcfg.rng_seed = splitmix64(base ^ 0x48524f4dULL);
    try {
      row.h_ratio = fit_homography_ratio(scene.corr, hcfg);
    } catch (const Error&) {
    }
  }

  if (mode_needs_geometry(mode)) {
    RansacConfig gcfg = opts.ransac;
    gcfg.rng_seed = splitmix64(base ^ 0x45504950ULL);
    const GeoBranchResult geo = run_geometric_branch(scene.corr, gcfg, opts.sigma_meas);
    row.inlier_count = geo.inlier_count;
    row.geo_valid = geo.estimate.valid;
    if (geo.pose_params) {
      row.geo = geo.pose_params;
      row.geo_ivar = geo.estimate.inverse_variances;
      const auto [rot_err, trans_err] = evaluate_pose(pose_from_motion(*row.geo), scene.gt_pose);
      row.rot_err_geo = rot_err;
      row.trans_err_geo = trans_err;
    }

    if (mode == PipelineMode::kGeo) return row;

    GaussianEstimate dnn;
    try {
      dnn = forward(scene.corr, *weights);
    } catch (const Error&) {
      return row;  // no learned branch for this scene
    }
    if (mode == PipelineMode::kMedian) dnn.inverse_variances = weights->median_geo_ivar;
    row.dnn = dnn.motion();
    row.dnn_ivar = dnn.inverse_variances;
    const auto [rd, td] = evaluate_pose(pose_from_motion(*row.dnn), scene.gt_pose);
    row.rot_err_dnn = rd;
    row.trans_err_dnn = td;

    GaussianEstimate geo_for_fusion = geo.estimate;
    if (geo.pose_params) geo_for_fusion.means = geo.pose_params->vector();
    try {
      const FusedPose fused = fuse_pose(geo_for_fusion, dnn);
      row.fused = fused.params;
      row.fused_ivar = fused.estimate.inverse_variances;
      const auto [rf, tf] = evaluate_pose(pose_from_motion(*row.fused), scene.gt_pose);
      row.rot_err_fused = rf;
      row.trans_err_fused = tf;
    } catch (const Error&) {
      // fusion impossible (e.g. zero information on both branches); recorded
      // as a row without a fused estimate
    }
    return row;
  }

  // learned-only modes
  GaussianEstimate dnn;
  try {
    dnn = forward(scene.corr, *weights);
  } catch (const Error&) {
    return row;
  }
  row.dnn = dnn.motion();
  row.dnn_ivar = dnn.inverse_variances;
  const auto [rd, td] = evaluate_pose(pose_from_motion(*row.dnn), scene.gt_pose);
  row.rot_err_dnn = rd;
  row.trans_err_dnn = td;
  // learned pose taken directly, no fusion step
  row.fused = row.dnn;
  row.fused_ivar = row.dnn_ivar;
  row.rot_err_fused = rd;
  row.trans_err_fused = td;
  return row;
}

inline std::vector<SceneResult> evaluate_scenes(const std::vector<ScenePair>& scenes, PipelineMode mode,
                                                const NetworkWeights* weights, const PipelineOptions& opts) {
  if (mode_needs_weights(mode) && weights == nullptr)
    throw std::invalid_argument("evaluate_scenes: mode requires weights");
  std::vector<SceneResult> results(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), opts.threads,
               [&](int i) { results[i] = evaluate_scene(scenes[i], mode, weights, opts); });
  std::sort(results.begin(), results.end(),
            [](const SceneResult& a, const SceneResult& b) { return a.scene_id < b.scene_id; });
  return results;
}

// ---- results CSV ----

inline constexpr int kResultsSchemaVersion = 1;

inline const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols = {
      "schema_version", "scene_id", "regime", "n_points", "noise_sigma", "outlier_fraction", "planar_ratio",
      "phi_forward_deg", "rotation_magnitude_deg", "geo_valid", "inlier_count", "h_ratio",
      "gt_yaw", "gt_pitch", "gt_roll", "gt_alpha", "gt_beta",
      "geo_yaw", "geo_pitch", "geo_roll", "geo_alpha", "geo_beta",
      "geo_ivar_yaw", "geo_ivar_pitch", "geo_ivar_roll", "geo_ivar_alpha", "geo_ivar_beta",
      "dnn_yaw", "dnn_pitch", "dnn_roll", "dnn_alpha", "dnn_beta",
      "dnn_ivar_yaw", "dnn_ivar_pitch", "dnn_ivar_roll", "dnn_ivar_alpha", "dnn_ivar_beta",
      "fused_yaw", "fused_pitch", "fused_roll", "fused_alpha", "fused_beta",
      "fused_ivar_yaw", "fused_ivar_pitch", "fused_ivar_roll", "fused_ivar_alpha", "fused_ivar_beta",
      "rot_err_geo", "trans_err_geo", "rot_err_dnn", "trans_err_dnn", "rot_err_fused", "trans_err_fused",
      "total_trans_ivar", "total_rot_ivar"};
  return cols;
}

namespace detail {

inline void append_motion(std::vector<std::string>& cells, const std::optional<MotionParams>& m) {
  if (m) {
    cells.push_back(format_double(m->yaw));
    cells.push_back(format_double(m->pitch));
    cells.push_back(format_double(m->roll));
    cells.push_back(format_double(m->alpha));
    cells.push_back(format_double(m->beta));
  } else {
    for (int i = 0; i < 5; ++i) cells.emplace_back();
  }
}

inline void append_vec5(std::vector<std::string>& cells, const std::optional<Vec5>& v) {
  if (v) {
    for (int i = 0; i < 5; ++i) cells.push_back(format_double((*v)[i]));
  } else {
    for (int i = 0; i < 5; ++i) cells.emplace_back();
  }
}

inline void append_opt(std::vector<std::string>& cells, const std::optional<double>& v) {
  cells.push_back(v ? format_double(*v) : std::string());
}

}  // namespace detail

inline std::vector<std::string> result_row_cells(const SceneResult& r) {
  std::vector<std::string> cells;
  cells.reserve(results_columns().size());
  cells.push_back(std::to_string(kResultsSchemaVersion));
  cells.push_back(r.scene_id);
  cells.push_back(r.meta.regime);
  cells.push_back(std::to_string(r.meta.n_points));
  cells.push_back(format_double(r.meta.noise_sigma));
  cells.push_back(format_double(r.meta.outlier_fraction));
  cells.push_back(format_double(r.meta.planar_ratio));
  cells.push_back(format_double(r.meta.phi_forward_deg));
  cells.push_back(format_double(r.meta.rotation_magnitude_deg));
  cells.push_back(r.geo_valid ? "1" : "0");
  cells.push_back(std::to_string(r.inlier_count));
  detail::append_opt(cells, r.h_ratio);
  detail::append_motion(cells, r.gt);
  detail::append_motion(cells, r.geo);
  detail::append_vec5(cells, r.geo_ivar);
  detail::append_motion(cells, r.dnn);
  detail::append_vec5(cells, r.dnn_ivar);
  detail::append_motion(cells, r.fused);
  detail::append_vec5(cells, r.fused_ivar);
  detail::append_opt(cells, r.rot_err_geo);
  detail::append_opt(cells, r.trans_err_geo);
  detail::append_opt(cells, r.rot_err_dnn);
  detail::append_opt(cells, r.trans_err_dnn);
  detail::append_opt(cells, r.rot_err_fused);
  detail::append_opt(cells, r.trans_err_fused);
  if (r.geo_valid && r.geo_ivar) {
    cells.push_back(format_double((*r.geo_ivar)[kAlpha] + (*r.geo_ivar)[kBeta]));
    cells.push_back(format_double((*r.geo_ivar)[kYaw] + (*r.geo_ivar)[kPitch] + (*r.geo_ivar)[kRoll]));
  } else {
    cells.emplace_back();
    cells.emplace_back();
  }
  return cells;
}

inline void write_results_csv(const std::string& path, const std::vector<SceneResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_results_csv: cannot open " + path);
  const auto& cols = results_columns();
  for (size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const SceneResult& r : results) {
    const auto cells = result_row_cells(r);
    for (size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  }
  if (!out) throw DataError("write_results_csv: write failure on " + path);
}

// generic CSV table used by analyze
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_csv: cannot open " + path);
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.eof()) break;
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.empty() || line.back() == ',') cells.emplace_back();
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      cells.resize(table.header.size());
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) throw DataError("read_csv: empty file " + path);
  return table;
}

inline void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_csv: cannot open " + path);
  for (size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) throw DataError("write_csv: write failure on " + path);
}

inline const std::vector<std::string>& analyze_sort_keys() {
  static const std::vector<std::string> keys = {"total_trans_ivar", "total_rot_ivar", "h_ratio", "phi_forward",
                                                "inlier_count"};
  return keys;
}

// Sorts rows by the requested key (missing values last) and replaces every
// error column by a trailing moving average over the window; windows are
// truncated at the start. Missing cells do not contribute and stay missing.
inline CsvTable analyze(const CsvTable& input, const std::string& sort_key, int window) {
  if (window < 1) throw std::invalid_argument("analyze: window must be >= 1");
  std::string column_name = sort_key;
  if (sort_key == "phi_forward") column_name = "phi_forward_deg";
  const int key_col = input.column(column_name);
  if (key_col < 0) throw DataError("analyze: unknown sort key " + sort_key);
  const int id_col = input.column("scene_id");

  const auto parse = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    try {
      size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) return std::nullopt;
      return v;
    } catch (...) {
      return std::nullopt;
    }
  };

  CsvTable out;
  out.header = input.header;
  out.rows = input.rows;
  std::stable_sort(out.rows.begin(), out.rows.end(), [&](const auto& a, const auto& b) {
    const auto va = parse(a[key_col]);
    const auto vb = parse(b[key_col]);
    if (va.has_value() != vb.has_value()) return va.has_value();
    if (va && vb && *va != *vb) return *va < *vb;
    if (id_col >= 0) return a[id_col] < b[id_col];
    return false;
  });

  static const std::array<const char*, 6> err_cols = {"rot_err_geo",   "trans_err_geo", "rot_err_dnn",
                                                      "trans_err_dnn", "rot_err_fused", "trans_err_fused"};
  for (const char* name : err_cols) {
    const int col = out.column(name);
    if (col < 0) continue;
    std::vector<std::optional<double>> values(out.rows.size());
    for (size_t r = 0; r < out.rows.size(); ++r) values[r] = parse(out.rows[r][col]);
    for (size_t r = 0; r < out.rows.size(); ++r) {
      if (!values[r]) continue;
      double sum = 0.0;
      int count = 0;
      const size_t lo = r + 1 >= static_cast<size_t>(window) ? r + 1 - window : 0;
      for (size_t k = lo; k <= r; ++k) {
        if (values[k]) {
          sum += *values[k];
          ++count;
        }
      }
      out.rows[r][col] = format_double(sum / count);
    }
  }
  return out;
}

// ---- attention profile ----

struct AttentionProfile {
  std::array<double, 10> mean_distance{};  // deciles 10%..100% of the attention set
  long samples = 0;
};

// For every correspondence, its last-layer attention weights to all others
// are sorted; the spatial distance at each decile of that distribution is
// averaged over correspondences and scenes.
inline AttentionProfile attention_profile(const std::vector<ScenePair>& scenes, const NetworkWeights& weights) {
  AttentionProfile profile;
  std::array<double, 10> sums{};
  long count = 0;
  for (const ScenePair& scene : scenes) {
    const int n = scene.corr.size();
    if (n < 2) continue;
    ForwardTrace trace;
    forward(scene.corr, weights, &trace);
    const MatX& attn = trace.attn.back().attn;
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<double, double>> others;  // (attention, spatial distance)
      others.reserve(n - 1);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dist = 0.5 * ((scene.corr.x1(i) - scene.corr.x1(j)).norm() +
                                   (scene.corr.x2(i) - scene.corr.x2(j)).norm());
        others.emplace_back(attn(i, j), dist);
      }
      std::sort(others.begin(), others.end());
      const int m = static_cast<int>(others.size());
      for (int k = 1; k <= 10; ++k) {
        const int idx = std::min(m - 1, static_cast<int>(std::ceil(k * 0.1 * m)) - 1);
        sums[k - 1] += others[std::max(0, idx)].second;
      }
      ++count;
    }
  }
  profile.samples = count;
  for (int k = 0; k < 10; ++k) profile.mean_distance[k] = count > 0 ? sums[k] / count : 0.0;
  return profile;
}

inline void write_attention_profile_csv(const std::string& path, const AttentionProfile& profile) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_attention_profile_csv: cannot open " + path);
  out << "attention_percentile,mean_spatial_distance\n";
  for (int k = 0; k < 10; ++k) out << (10 * (k + 1)) << "," << format_double(profile.mean_distance[k]) << '\n';
  if (!out) throw DataError("write_attention_profile_csv: write failure on " + path);
}

// Loads a dataset (and weights when the mode needs them), evaluates every
// scene and writes the results CSV. Returns the rows for further analysis.
inline std::vector<SceneResult> run_pipeline(const std::string& data_path,
                                             const std::optional<std::string>& weights_path, PipelineMode mode,
                                             const std::string& out_path, const PipelineOptions& opts = {}) {
  const std::vector<ScenePair> scenes = read_dataset(data_path);
  std::optional<NetworkWeights> weights;
  if (mode_needs_weights(mode)) {
    if (!weights_path) throw DataError("run_pipeline: mode requires a weights file");
    weights = read_weights(*weights_path);
  }
  const std::vector<SceneResult> results = evaluate_scenes(scenes, mode, weights ? &*weights : nullptr, opts);
  write_results_csv(out_path, results);
  return results;
}

// ---- training-side helpers ----

// Geometric estimates are computed once per scene and cached with it; the
// training loop never reruns RANSAC or bundle adjustment.
inline std::vector<TrainingScene> precompute_training_scenes(const std::vector<ScenePair>& scenes,
                                                             const PipelineOptions& opts) {
  std::vector<TrainingScene> out(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), opts.threads, [&](int i) {
    RansacConfig cfg = opts.ransac;
    cfg.rng_seed = splitmix64(scene_seed_base(scenes[i].scene_id) ^ 0x45504950ULL);
    const GeoBranchResult geo = run_geometric_branch(scenes[i].corr, cfg, opts.sigma_meas);
    out[i].corr = scenes[i].corr;
    out[i].gt_pose = scenes[i].gt_pose;
    out[i].geo = geo.estimate;
    if (geo.pose_params) out[i].geo.means = geo.pose_params->vector();
  });
  return out;
}

// per-parameter median of the geometric inverse variances over valid scenes
inline Vec5 median_geo_inverse_variances(const std::vector<TrainingScene>& scenes) {
  Vec5 out = Vec5::Zero();
  for (int k = 0; k < 5; ++k) {
    std::vector<double> values;
    for (const TrainingScene& s : scenes)
      if (s.geo.valid) values.push_back(s.geo.inverse_variances[k]);
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    const size_t m = values.size();
    out[k] = m % 2 == 1 ? values[m / 2] : 0.5 * (values[m / 2 - 1] + values[m / 2]);
  }
  return out;
}

}  // namespace relpose
