#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relpose/errors.hpp"
#include "relpose/network.hpp"
#include "relpose/simulator.hpp"
#include "relpose/training.hpp"
#include "relpose/types.hpp"

// File formats:
//   dataset  - JSON Lines, one scene per line
//   weights  - single JSON document, versioned
//   results  - CSV, written by the harness
// Doubles are serialized with shortest-round-trip precision, so files are
// lossless and byte-stable for fixed inputs.

namespace relpose {

using Json = nlohmann::ordered_json;

inline constexpr int kWeightsFormatVersion = 1;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

// ---- dataset (JSON Lines) ----

inline Json scene_to_json(const ScenePair& scene) {
  Json j;
  j["scene_id"] = scene.scene_id;
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[3 * r + c] = scene.gt_pose.rotation(r, c);
  j["gt_rotation"] = rot;
  j["gt_translation"] = {scene.gt_pose.translation.x(), scene.gt_pose.translation.y(),
                         scene.gt_pose.translation.z()};
  Json corr = Json::array();
  for (int i = 0; i < scene.corr.size(); ++i)
    corr.push_back({scene.corr.points(i, 0), scene.corr.points(i, 1), scene.corr.points(i, 2),
                    scene.corr.points(i, 3)});
  j["correspondences"] = std::move(corr);
  Json mask = Json::array();
  for (const auto m : scene.outlier_mask) mask.push_back(static_cast<bool>(m));
  j["outlier_mask"] = std::move(mask);
  j["meta"] = {{"n_points", scene.meta.n_points},
               {"noise_sigma", scene.meta.noise_sigma},
               {"outlier_fraction", scene.meta.outlier_fraction},
               {"planar_ratio", scene.meta.planar_ratio},
               {"phi_forward_deg", scene.meta.phi_forward_deg},
               {"rotation_magnitude_deg", scene.meta.rotation_magnitude_deg},
               {"regime", scene.meta.regime}};
  return j;
}

inline ScenePair scene_from_json(const Json& j) {
  try {
    ScenePair scene;
    scene.scene_id = j.at("scene_id").get<std::string>();
    const auto rot = j.at("gt_rotation").get<std::vector<double>>();
    if (rot.size() != 9) throw DataError("scene_from_json: gt_rotation must have 9 entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) scene.gt_pose.rotation(r, c) = rot[3 * r + c];
    const auto tr = j.at("gt_translation").get<std::vector<double>>();
    if (tr.size() != 3) throw DataError("scene_from_json: gt_translation must have 3 entries");
    scene.gt_pose.translation = Vec3(tr[0], tr[1], tr[2]);

    const auto& corr = j.at("correspondences");
    Eigen::Matrix<double, Eigen::Dynamic, 4> pts(corr.size(), 4);
    for (size_t i = 0; i < corr.size(); ++i) {
      const auto row = corr[i].get<std::vector<double>>();
      if (row.size() != 4) throw DataError("scene_from_json: correspondence rows must have 4 entries");
      for (int c = 0; c < 4; ++c) pts(static_cast<Eigen::Index>(i), c) = row[c];
    }
    scene.corr = CorrespondenceSet(pts);
    if (!scene.corr.all_finite()) throw DataError("scene_from_json: non-finite correspondence");

    for (const auto& m : j.at("outlier_mask")) scene.outlier_mask.push_back(m.get<bool>() ? 1 : 0);
    if (scene.outlier_mask.size() != static_cast<size_t>(scene.corr.size()))
      throw DataError("scene_from_json: outlier_mask length mismatch");

    const auto& meta = j.at("meta");
    scene.meta.n_points = meta.at("n_points").get<int>();
    scene.meta.noise_sigma = meta.at("noise_sigma").get<double>();
    scene.meta.outlier_fraction = meta.at("outlier_fraction").get<double>();
    scene.meta.planar_ratio = meta.at("planar_ratio").get<double>();
    scene.meta.phi_forward_deg = meta.at("phi_forward_deg").get<double>();
    scene.meta.rotation_magnitude_deg = meta.at("rotation_magnitude_deg").get<double>();
    scene.meta.regime = meta.at("regime").get<std::string>();
    return scene;
  } catch (const Json::exception& e) {
    throw DataError(std::string("scene_from_json: ") + e.what());
  }
}

inline void write_dataset(const std::string& path, const std::vector<ScenePair>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_dataset: cannot open " + path);
  for (const ScenePair& scene : scenes) out << scene_to_json(scene).dump() << '\n';
  if (!out) throw DataError("write_dataset: write failure on " + path);
}

inline std::vector<ScenePair> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_dataset: cannot open " + path);
  std::vector<ScenePair> scenes;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw DataError("read_dataset: " + path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    scenes.push_back(scene_from_json(j));
  }
  return scenes;
}

// ---- network weights ----

inline Json weights_to_json(const NetworkWeights& w) {
  Json j;
  j["format_version"] = kWeightsFormatVersion;
  j["d"] = w.d;
  j["L"] = w.L;
  Json arrays = Json::array();
  w.for_each_array([&](const std::string& name, const MatX& m) {
    Json a;
    a["name"] = name;
    a["shape"] = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    std::vector<double> values;
    values.reserve(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
    a["values"] = std::move(values);
    arrays.push_back(std::move(a));
  });
  j["arrays"] = std::move(arrays);
  j["median_geo_ivar"] = {w.median_geo_ivar[0], w.median_geo_ivar[1], w.median_geo_ivar[2],
                          w.median_geo_ivar[3], w.median_geo_ivar[4]};
  return j;
}

inline NetworkWeights weights_from_json(const Json& j) {
  try {
    if (j.at("format_version").get<int>() != kWeightsFormatVersion)
      throw DataError("weights_from_json: unsupported format_version");
    const int d = j.at("d").get<int>();
    const int L = j.at("L").get<int>();
    if (d < 1 || L < 1) throw DataError("weights_from_json: invalid dims");
    NetworkWeights w = NetworkWeights::zeros(d, L);

    std::map<std::string, const Json*> by_name;
    for (const auto& a : j.at("arrays")) by_name[a.at("name").get<std::string>()] = &a;

    w.for_each_array([&](const std::string& name, MatX& m) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("weights_from_json: missing array " + name);
      const Json& a = *it->second;
      const auto shape = a.at("shape").get<std::vector<int>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
        throw DataError("weights_from_json: array " + name + " expects shape " + std::to_string(m.rows()) +
                        "x" + std::to_string(m.cols()));
      const auto values = a.at("values").get<std::vector<double>>();
      if (values.size() != static_cast<size_t>(m.size()))
        throw DataError("weights_from_json: array " + name + " value count mismatch");
      size_t k = 0;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[k++];
      if (!m.allFinite()) throw DataError("weights_from_json: array " + name + " has non-finite values");
      by_name.erase(it);
    });
    if (!by_name.empty()) throw DataError("weights_from_json: unknown array " + by_name.begin()->first);

    if (j.contains("median_geo_ivar")) {
      const auto med = j.at("median_geo_ivar").get<std::vector<double>>();
      if (med.size() != 5) throw DataError("weights_from_json: median_geo_ivar must have 5 entries");
      for (int i = 0; i < 5; ++i) w.median_geo_ivar[i] = med[i];
    }
    return w;
  } catch (const Json::exception& e) {
    throw DataError(std::string("weights_from_json: ") + e.what());
  }
}

inline void write_weights(const std::string& path, const NetworkWeights& w,
                          const std::vector<double>& training_loss = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_weights: cannot open " + path);
  Json j = weights_to_json(w);
  if (!training_loss.empty()) j["training_loss"] = training_loss;
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write_weights: write failure on " + path);
}

inline NetworkWeights read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_weights: cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw DataError("read_weights: " + path + ": " + e.what());
  }
  return weights_from_json(j);
}

// ---- config files ----

namespace detail {

// axis given either as a scalar or as a [lo, hi] range
inline void parse_axis(const Json& j, const char* key, double& lo, double& hi) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if (v.is_array()) {
    if (v.size() != 2) throw DataError(std::string("config: ") + key + " range must have 2 entries");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  } else {
    lo = hi = v.get<double>();
  }
  if (hi < lo) throw DataError(std::string("config: ") + key + " range is inverted");
}

}  // namespace detail

inline DatasetTemplate dataset_template_from_json(const Json& j) {
  DatasetTemplate tpl;
  try {
    if (j.contains("n_points")) {
      double lo = tpl.n_points_min, hi = tpl.n_points_max;
      detail::parse_axis(j, "n_points", lo, hi);
      tpl.n_points_min = static_cast<int>(lo);
      tpl.n_points_max = static_cast<int>(hi);
    }
    detail::parse_axis(j, "noise_sigma", tpl.noise_sigma_min, tpl.noise_sigma_max);
    detail::parse_axis(j, "outlier_fraction", tpl.outlier_fraction_min, tpl.outlier_fraction_max);
    detail::parse_axis(j, "planar_ratio", tpl.planar_ratio_min, tpl.planar_ratio_max);
    if (j.contains("phi_forward_deg") && !j.at("phi_forward_deg").is_null()) {
      double lo = 0.0, hi = 0.0;
      detail::parse_axis(j, "phi_forward_deg", lo, hi);
      tpl.phi_forward_min = lo;
      tpl.phi_forward_max = hi;
    }
    detail::parse_axis(j, "rotation_magnitude_deg", tpl.rotation_magnitude_min, tpl.rotation_magnitude_max);
    if (j.contains("depth_range")) {
      const auto range = j.at("depth_range").get<std::vector<double>>();
      if (range.size() != 2) throw DataError("config: depth_range must have 2 entries");
      tpl.depth_near = range[0];
      tpl.depth_far = range[1];
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("dataset_template_from_json: ") + e.what());
  }
  return tpl;
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  try {
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("loss_weight")) cfg.loss_weight = j.at("loss_weight").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("grad_clip")) cfg.grad_clip = j.at("grad_clip").get<double>();
    if (j.contains("d")) cfg.d = j.at("d").get<int>();
    if (j.contains("L")) cfg.L = j.at("L").get<int>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("train_config_from_json: ") + e.what());
  }
  if (cfg.learning_rate <= 0.0 || cfg.batch_size < 1 || cfg.epochs < 1 || cfg.d < 1 || cfg.L < 1)
    throw DataError("train_config_from_json: values must be positive");
  return cfg;
}

inline Json json_from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("json_from_file: cannot open " + path);
  try {
    Json j;
    in >> j;
    return j;
  } catch (const Json::exception& e) {
    throw DataError("json_from_file: " + path + ": " + e.what());
  }
}

}  // namespace relpose
