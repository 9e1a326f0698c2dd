#include <cstdio>
#include <filesystem>

#include <doctest.h>

#include "dot/io.hpp"
#include "dot/run.hpp"

using namespace dot;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("dot_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const {
    return (path / name).string();
  }
};

// Fast, small configuration shared by the CLI-level tests.
nlohmann::json small_tree() {
  nlohmann::json user;
  user["mesh"] = {{"h_boundary_mm", 4.0}, {"h_interior_mm", 7.0}};
  user["optodes"] = {{"n_sources", 4}, {"n_detectors", 4}};
  user["recon"] = {{"outer_iterations", 3}, {"data_h_factor", 0.5}};
  user["forward"] = {{"mode", "cw"}};
  return merge_config(user);
}

}  // namespace

TEST_CASE("default config is self-consistent") {
  const nlohmann::json def = default_config();
  CHECK(def.at("medium").at("mua0").get<double>() == 0.02);
  CHECK(def.at("medium").at("musp0").get<double>() == 0.67);
  CHECK(def.at("medium").at("n").get<double>() == 1.4);
  CHECK(def.at("mesh").at("radius_mm").get<double>() == 70.0);
  CHECK(def.at("time").at("bin_width_ps").get<double>() == 640.0);
  CHECK(def.at("time").at("n_bins").get<int>() == 7);
  CHECK(def.at("recon").at("outer_iterations").get<int>() == 20);
  CHECK(def.at("recon").at("cg_max_inner").get<int>() == 100);
  CHECK(def.at("recon").at("tv_tau").get<double>() == 0.01);
  CHECK(def.at("recon").at("tv_beta").get<double>() == 0.01);
  CHECK(def.at("optodes").at("n_sources").get<int>() == 10);
  CHECK(def.at("tcspc").at("dead_time_ns").get<double>() == 40.0);
  CHECK(def.at("tcspc").at("tdc_dead_time_ns").get<double>() == 14.0);
  // round-trips through the validator unchanged
  CHECK(merge_config(def) == def);
}

TEST_CASE("unknown keys and type mismatches are rejected") {
  CHECK_THROWS_WITH_AS(merge_config({{"bogus", 1}}),
                       "unknown config key: bogus", ConfigError);
  CHECK_THROWS_WITH_AS(merge_config({{"mesh", {{"radius", 1.0}}}}),
                       "unknown config key: mesh.radius", ConfigError);
  CHECK_THROWS_AS(merge_config({{"mesh", {{"radius_mm", "seventy"}}}}),
                  ConfigError);
  CHECK_THROWS_AS(merge_config({{"mesh", 3}}), ConfigError);
}

TEST_CASE("run() exit codes") {
  TempDir tmp("exit");
  RunConfig cfg;
  cfg.command = "no_such_command";
  cfg.out_dir = tmp.sub("x");
  CHECK(run(cfg) == 2);
}

TEST_CASE("mesh command writes a loadable mesh and manifest") {
  TempDir tmp("mesh");
  RunConfig cfg;
  cfg.command = "mesh";
  cfg.tree = small_tree();
  cfg.out_dir = tmp.sub("out");
  run_checked(cfg);
  const Mesh mesh = load_mesh(cfg.out_dir + "/mesh.dotmesh");
  mesh.validate();
  const auto manifest =
      nlohmann::json::parse(read_text_file(cfg.out_dir + "/manifest.json"));
  CHECK(manifest.at("command") == "mesh");
  CHECK(manifest.contains("wall_time_s"));
  CHECK(manifest.at("mesh_hash") == hex64(mesh_hash(mesh)));
}

TEST_CASE("forward command emits measurement artifacts") {
  TempDir tmp("fwd");
  RunConfig cfg;
  cfg.command = "forward";
  cfg.tree = small_tree();
  cfg.jobs = 2;
  cfg.out_dir = tmp.sub("out");
  run_checked(cfg);
  const std::string csv = read_text_file(cfg.out_dir + "/measurement.csv");
  CHECK(csv.find("source_id,detector_id,bin_id,y") == 0);
  const auto side =
      nlohmann::json::parse(read_text_file(cfg.out_dir + "/measurement.json"));
  CHECK(side.at("mode") == "cw");
  CHECK(side.at("n_sources") == 4);
  CHECK(side.at("provenance").contains("mesh_hash"));
  CHECK(side.at("provenance").contains("field_hash"));
}

TEST_CASE("identical config and seed give identical artifact bytes") {
  TempDir tmp("det");
  RunConfig cfg;
  cfg.command = "recon";
  cfg.tree = small_tree();
  cfg.jobs = 2;
  cfg.seed = 7;

  cfg.out_dir = tmp.sub("a");
  run_checked(cfg);
  cfg.out_dir = tmp.sub("b");
  run_checked(cfg);
  for (const char* name : {"recon.csv", "trace.csv"}) {
    const std::string a = read_text_file(tmp.sub("a") + "/" + name);
    const std::string b = read_text_file(tmp.sub("b") + "/" + name);
    CHECK(a == b);
  }
}

TEST_CASE("tcspc command writes histogram and derived statistics") {
  TempDir tmp("tcspc");
  RunConfig cfg;
  cfg.command = "tcspc";
  cfg.tree = merge_config({{"tcspc", {{"n_pulses", 50000}}},
                           {"mesh", {{"h_boundary_mm", 4.0},
                                     {"h_interior_mm", 7.0}}}});
  cfg.seed = 99;
  cfg.jobs = 2;
  cfg.out_dir = tmp.sub("out");
  run_checked(cfg);
  const std::string csv = read_text_file(cfg.out_dir + "/histogram.csv");
  CHECK(csv.find("bin_start_ps,count") == 0);
  const auto side =
      nlohmann::json::parse(read_text_file(cfg.out_dir + "/histogram.json"));
  CHECK(side.at("seed") == 99);
  CHECK(side.at("rng") == "philox4x32-10");
  CHECK(side.at("total_counts").get<std::uint64_t>() > 1000);
  CHECK(side.at("detector").at("dead_time_ns") == 40.0);
}

TEST_CASE("tcspc TPSF can come from a CSV file") {
  TempDir tmp("tpsfcsv");
  std::string csv = "t_ps,density\n";
  for (int i = 0; i < 200; ++i)
    csv += fmt17(i * 10.0) + "," +
           fmt17(std::exp(-i / 40.0) * (i > 5 ? 1.0 : 0.0)) + "\n";
  const std::string path = tmp.sub("tpsf.csv");
  write_text_file(path, csv);
  RunConfig cfg;
  cfg.command = "tcspc";
  cfg.tree = merge_config({{"tcspc", {{"tpsf_source", "file"},
                                      {"tpsf_csv", path},
                                      {"n_pulses", 20000}}}});
  cfg.out_dir = tmp.sub("out");
  run_checked(cfg);
  const auto side =
      nlohmann::json::parse(read_text_file(cfg.out_dir + "/histogram.json"));
  CHECK(side.at("total_counts").get<std::uint64_t>() > 500);
}
