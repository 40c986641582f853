#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "relpose/harness.hpp"
#include "test_support.hpp"

using namespace relpose;
using namespace relpose::testing;

namespace {

std::filesystem::path test_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "relpose_test_harness";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<ScenePair> clean_scenes(int count, std::uint64_t seed, int n_points = 25) {
  DatasetTemplate tpl;
  tpl.noise_sigma_min = tpl.noise_sigma_max = 0.0;
  tpl.outlier_fraction_min = tpl.outlier_fraction_max = 0.0;
  tpl.planar_ratio_min = tpl.planar_ratio_max = 0.0;
  tpl.n_points_min = tpl.n_points_max = n_points;
  return generate_scenes(tpl, count, seed);
}

}  // namespace

TEST_CASE("evaluate_pose basics") {
  Rng rng(1);
  const CameraPose pose = random_pose(rng);
  const auto [r0, t0] = evaluate_pose(pose, pose);
  CHECK(r0 < 1e-5);
  CHECK(t0 < 1e-5);

  const CameraPose flipped(pose.rotation, -pose.translation);
  CHECK(evaluate_pose(flipped, pose).second == Catch::Approx(180.0).margin(1e-9));

  const CameraPose rotated(rot_y(0.1) * pose.rotation, pose.translation);
  CHECK(evaluate_pose(rotated, pose).first == Catch::Approx(0.1 * 180.0 / kPi).margin(1e-6));
}

TEST_CASE("geo pipeline solves a clean dataset") {
  const auto dir = test_dir();
  const std::string data = (dir / "clean.jsonl").string();
  const std::string out = (dir / "geo.csv").string();
  write_dataset(data, clean_scenes(100, 11));

  PipelineOptions opts;
  opts.threads = 4;
  const auto results = run_pipeline(data, std::nullopt, PipelineMode::kGeo, out, opts);
  REQUIRE(results.size() == 100);

  std::vector<double> rot, trans;
  for (const auto& row : results) {
    REQUIRE(row.rot_err_geo.has_value());
    rot.push_back(*row.rot_err_geo);
    trans.push_back(*row.trans_err_geo);
    CHECK(row.geo_valid);
  }
  std::sort(rot.begin(), rot.end());
  std::sort(trans.begin(), trans.end());
  CHECK(rot[rot.size() / 2] < 1e-5);
  CHECK(trans[trans.size() / 2] < 1e-5);
}

TEST_CASE("zero learned confidence keeps the geometric solution exactly") {
  const auto dir = test_dir();
  const std::string data = (dir / "fusedin.jsonl").string();
  write_dataset(data, clean_scenes(20, 13));

  // uncertainty head pinned below the exp underflow cutoff: learned inverse
  // variances are exactly zero
  NetworkWeights w = NetworkWeights::random(8, 1, 3);
  w.unc_w2.setZero();
  w.unc_b2.setConstant(-1e4);
  const std::string wpath = (dir / "zero_unc.json").string();
  write_weights(wpath, w);

  PipelineOptions opts;
  const std::string out_fused = (dir / "fused.csv").string();
  const auto fused = run_pipeline(data, wpath, PipelineMode::kFused, out_fused, opts);
  const std::string out_geo = (dir / "geo_ref.csv").string();
  const auto geo = run_pipeline(data, std::nullopt, PipelineMode::kGeo, out_geo, opts);

  REQUIRE(fused.size() == geo.size());
  int compared = 0;
  for (size_t i = 0; i < fused.size(); ++i) {
    if (!fused[i].geo_valid) continue;
    REQUIRE(fused[i].scene_id == geo[i].scene_id);
    CHECK(*fused[i].rot_err_fused == *geo[i].rot_err_geo);
    CHECK(*fused[i].trans_err_fused == *geo[i].trans_err_geo);
    ++compared;
  }
  CHECK(compared >= 18);
}

TEST_CASE("missing dataset aborts with a data error") {
  CHECK_THROWS_AS(run_pipeline("/nonexistent/data.jsonl", std::nullopt, PipelineMode::kGeo, "/tmp/x.csv", {}),
                  DataError);
}

TEST_CASE("results csv is byte stable and recomputable") {
  const auto dir = test_dir();
  const std::string data = (dir / "stable.jsonl").string();
  DatasetTemplate tpl;
  tpl.n_points_min = 10;
  tpl.n_points_max = 40;
  write_dataset(data, generate_scenes(tpl, 30, 17));

  PipelineOptions opts;
  opts.threads = 4;
  const std::string out_a = (dir / "run_a.csv").string();
  const std::string out_b = (dir / "run_b.csv").string();
  run_pipeline(data, std::nullopt, PipelineMode::kGeo, out_a, opts);
  opts.threads = 1;  // thread count must not affect the bytes
  run_pipeline(data, std::nullopt, PipelineMode::kGeo, out_b, opts);
  CHECK(file_bytes(out_a) == file_bytes(out_b));

  // stored angular errors reproduce exactly from the stored estimates
  const std::vector<ScenePair> scenes = read_dataset(data);
  const CsvTable table = read_csv(out_a);
  const int id_col = table.column("scene_id");
  const int rot_col = table.column("rot_err_geo");
  const auto param_cols = [&](const char* prefix) {
    std::array<int, 5> cols{};
    const std::array<std::string, 5> names = {"_yaw", "_pitch", "_roll", "_alpha", "_beta"};
    for (int k = 0; k < 5; ++k) cols[k] = table.column(prefix + names[k]);
    return cols;
  };
  const auto geo_cols = param_cols("geo");
  int checked = 0;
  for (const auto& row : table.rows) {
    if (row[geo_cols[0]].empty()) continue;
    MotionParams geo;
    geo.yaw = std::stod(row[geo_cols[0]]);
    geo.pitch = std::stod(row[geo_cols[1]]);
    geo.roll = std::stod(row[geo_cols[2]]);
    geo.alpha = std::stod(row[geo_cols[3]]);
    geo.beta = std::stod(row[geo_cols[4]]);
    const auto scene = std::find_if(scenes.begin(), scenes.end(),
                                    [&](const ScenePair& s) { return s.scene_id == row[id_col]; });
    REQUIRE(scene != scenes.end());
    const auto [rot_err, trans_err] = evaluate_pose(pose_from_motion(geo), scene->gt_pose);
    CHECK(format_double(rot_err) == row[rot_col]);
    ++checked;
  }
  CHECK(checked >= 25);
}

TEST_CASE("analyze sorts and smooths") {
  CsvTable table;
  table.header = {"scene_id", "total_trans_ivar", "rot_err_geo", "trans_err_geo"};
  Rng rng(19);
  for (int i = 0; i < 40; ++i) {
    const double key = rng.uniform(0.0, 10.0);
    table.rows.push_back({"s" + std::to_string(i), format_double(key), format_double(key),
                          format_double(-key)});
  }

  SECTION("window 1 is the sorted input") {
    const CsvTable out = analyze(table, "total_trans_ivar", 1);
    REQUIRE(out.rows.size() == 40);
    double prev = -1e9;
    for (const auto& row : out.rows) {
      const double key = std::stod(row[1]);
      CHECK(key >= prev);
      prev = key;
      CHECK(row[2] == row[1]);  // error column equals the key, untouched
    }
  }

  SECTION("constant columns are unchanged, monotone columns stay monotone") {
    CsvTable fixture = table;
    for (auto& row : fixture.rows) row[2] = "3.25";
    const CsvTable out = analyze(fixture, "total_trans_ivar", 7);
    double prev_trans = 1e18;
    for (const auto& row : out.rows) {
      CHECK(row[2] == "3.25");
      const double smoothed = std::stod(row[3]);  // trailing mean of -key, decreasing
      CHECK(smoothed <= prev_trans + 1e-12);
      prev_trans = smoothed;
    }
  }

  SECTION("unknown sort key is a data error") { CHECK_THROWS_AS(analyze(table, "bogus", 5), DataError); }
}

TEST_CASE("attention profile shapes") {
  const NetworkWeights w = NetworkWeights::random(16, 2, 23);

  SECTION("two correspondences give a degenerate but defined profile") {
    SceneConfig cfg;
    cfg.n_points = 2;
    cfg.rng_seed = 31;
    const AttentionProfile profile = attention_profile({generate_scene(cfg)}, w);
    CHECK(profile.samples == 2);
    for (int k = 1; k < 10; ++k) CHECK(profile.mean_distance[k] == profile.mean_distance[0]);
  }

  SECTION("random weights emit ten positive deciles") {
    DatasetTemplate tpl;
    const AttentionProfile profile = attention_profile(generate_scenes(tpl, 5, 37), w);
    CHECK(profile.samples > 0);
    for (int k = 0; k < 10; ++k) CHECK(profile.mean_distance[k] > 0.0);

    const auto dir = test_dir();
    const std::string out = (dir / "attn.csv").string();
    write_attention_profile_csv(out, profile);
    const CsvTable table = read_csv(out);
    CHECK(table.rows.size() == 10);
  }
}

TEST_CASE("cli end to end") {
  const auto dir = test_dir();
  const std::string data = (dir / "cli.jsonl").string();
  const std::string results = (dir / "cli.csv").string();
  const std::string curves = (dir / "cli_curves.csv").string();

  const std::string cli = RELPOSE_CLI_PATH;
  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  CHECK(run("simulate --count 12 --seed 5 --out " + data) == 0);
  CHECK(std::filesystem::exists(data));
  CHECK(run("solve --data " + data + " --mode geo --out " + results) == 0);
  CHECK(run("analyze --results " + results + " --sort-key inlier_count --window 3 --out " + curves) == 0);
  CHECK(std::filesystem::exists(curves));

  // exit codes: missing file -> 3, bad usage -> 2
  CHECK(run("solve --data /nonexistent.jsonl --out " + results) == 3);
  CHECK(run("analyze --results " + results + " --sort-key bogus --out " + curves) == 2);
  CHECK(run("bogus-subcommand") == 2);
}
