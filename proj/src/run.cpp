#include "dot/run.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "dot/io.hpp"
#include "dot/version.hpp"

namespace dot {

namespace fs = std::filesystem;

namespace {

nlohmann::json layout_json(const OptodeLayout& layout) {
  nlohmann::json j;
  for (const auto& p : layout.sources) j["sources"].push_back({p.x, p.y});
  for (const auto& p : layout.detectors) j["detectors"].push_back({p.x, p.y});
  return j;
}

nlohmann::json grid_json(const TimeGrid& g) {
  return {{"dt_ps", g.dt_ps},
          {"n_steps", g.n_steps},
          {"bin_width_ps", g.bin_width_ps},
          {"n_bins", g.n_bins}};
}

struct ManifestWriter {
  nlohmann::json j;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  explicit ManifestWriter(const RunConfig& cfg) {
    j["command"] = cfg.command;
    j["config"] = cfg.tree;
    j["seed"] = cfg.seed;
    j["jobs"] = cfg.jobs;
    j["tool_version"] = kVersion;
    j["git_revision"] = kGitRevision;
  }

  void finish(const std::string& out_dir) {
    j["wall_time_s"] = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    write_text_file((fs::path(out_dir) / "manifest.json").string(), j.dump(2));
  }
};

void cmd_mesh(const RunConfig& cfg, ManifestWriter& manifest) {
  const Mesh mesh = build_disk_mesh(cfg.mesh_spec());
  save_mesh(mesh, (fs::path(cfg.out_dir) / "mesh.dotmesh").string());
  manifest.j["mesh_hash"] = hex64(mesh_hash(mesh));
  manifest.j["node_count"] = mesh.node_count();
  manifest.j["element_count"] = mesh.element_count();
  manifest.j["min_quality"] = mesh.min_quality();
}

void cmd_forward(const RunConfig& cfg, ManifestWriter& manifest) {
  const Mesh mesh = build_disk_mesh(cfg.mesh_spec());
  const AssemblyCache cache(mesh);
  const ElementLocator locator(mesh);
  const PhantomSpec phantom = cfg.phantom_spec();
  const OpticalField field = phantom.contrast == 1.0
                                 ? homogeneous_disk(mesh, phantom.mua0,
                                                    phantom.musp0, phantom.n)
                                 : two_inclusion_phantom(mesh, phantom);
  const OptodeLayout layout = cfg.layout(mesh.radius);
  const Mode mode = cfg.forward_mode();
  const TimeGrid grid = cfg.time_grid();
  const Measurement meas = simulate(mesh, cache, locator, field, layout, mode,
                                    grid, cfg.forward_options());
  write_text_file((fs::path(cfg.out_dir) / "measurement.csv").string(),
                  measurement_to_csv(meas));
  nlohmann::json side;
  side["mode"] = mode_name(mode);
  side["layout"] = layout_json(layout);
  if (mode == Mode::TD) side["time"] = grid_json(grid);
  side["provenance"] = {{"mesh_hash", hex64(mesh_hash(mesh))},
                        {"field_hash", hex64(field_hash(field))},
                        {"git_revision", kGitRevision},
                        {"seed", cfg.seed}};
  side["n_sources"] = meas.n_sources;
  side["n_detectors"] = meas.n_detectors;
  side["n_bins"] = meas.n_bins;
  side["retained_entries"] = meas.valid_count();
  write_text_file((fs::path(cfg.out_dir) / "measurement.json").string(),
                  side.dump(2));
  manifest.j["mesh_hash"] = hex64(mesh_hash(mesh));
  manifest.j["field_hash"] = hex64(field_hash(field));
}

void cmd_recon(const RunConfig& cfg, ManifestWriter& manifest) {
  const Mesh mesh = build_disk_mesh(cfg.mesh_spec());
  const AssemblyCache cache(mesh);
  const ElementLocator locator(mesh);
  const PhantomSpec phantom = cfg.phantom_spec();
  const OptodeLayout layout = cfg.layout(mesh.radius);
  const Mode mode = cfg.forward_mode();
  const TimeGrid grid = cfg.time_grid();
  const ForwardOptions fwd = cfg.forward_options();

  ReconProblem prob;
  prob.mesh = &mesh;
  prob.cache = &cache;
  prob.locator = &locator;
  prob.layout = layout;
  prob.grid = grid;
  prob.forward = fwd;
  prob.mua0 = phantom.mua0;
  prob.musp0 = phantom.musp0;
  prob.n = phantom.n;

  const std::string data_csv =
      cfg.tree.at("recon").at("data_csv").get<std::string>();
  if (!data_csv.empty()) {
    prob.data = measurement_from_csv(read_text_file(data_csv), mode,
                                     layout.n_sources(), layout.n_detectors(),
                                     mode == Mode::TD ? grid.n_bins : 1);
  } else {
    const Mesh data_mesh = build_disk_mesh(cfg.data_mesh_spec());
    const AssemblyCache data_cache(data_mesh);
    const ElementLocator data_loc(data_mesh);
    const OpticalField truth = two_inclusion_phantom(data_mesh, phantom);
    Measurement data =
        simulate(data_mesh, data_cache, data_loc, truth, layout, mode, grid, fwd);
    if (cfg.calibration() == Calibration::Reference) {
      const Measurement hd = simulate(
          data_mesh, data_cache, data_loc,
          homogeneous_disk(data_mesh, phantom.mua0, phantom.musp0, phantom.n),
          layout, mode, grid, fwd);
      const Measurement hm = simulate(
          mesh, cache, locator,
          homogeneous_disk(mesh, phantom.mua0, phantom.musp0, phantom.n),
          layout, mode, grid, fwd);
      data = calibrate_reference(data, hd, hm);
    }
    prob.data = std::move(data);
    manifest.j["data_mesh_nodes"] = data_mesh.node_count();
  }

  const ReconSettings settings = cfg.recon_settings();
  const OpticalField init =
      homogeneous_disk(mesh, phantom.mua0, phantom.musp0, phantom.n);
  const ReconResult result = gauss_newton(prob, init, settings);

  write_text_file((fs::path(cfg.out_dir) / "recon.csv").string(),
                  recon_to_csv(mesh, result.field));
  write_text_file((fs::path(cfg.out_dir) / "trace.csv").string(),
                  trace_to_csv(result.trace));
  if (cfg.tree.at("recon").at("dump_jacobian").get<bool>()) {
    const FemSystem sys = assemble(mesh, cache, result.field);
    const Probes probes = make_probes(mesh, locator, layout, fwd);
    JacobianBlocks jac;
    if (mode == Mode::CW) {
      Eigen::MatrixXd fields;
      Measurement m = measure_cw(sys, probes, fwd, &fields);
      jac = jacobian_cw(sys, probes, fields, adjoint_fields(sys, probes, cfg.jobs),
                        m, cfg.jobs);
    } else {
      std::vector<Eigen::MatrixXd> hists;
      Measurement m = measure_td(sys, probes, grid, fwd, &hists);
      jac = jacobian_td(sys, probes, grid, hists, m, cfg.jobs);
    }
    write_text_file((fs::path(cfg.out_dir) / "jacobian.csv").string(),
                    jacobian_to_csv(jac));
  }
  manifest.j["termination"] = result.termination;
  manifest.j["iterations"] = result.trace.size();
  manifest.j["mesh_hash"] = hex64(mesh_hash(mesh));
  if (!result.trace.empty()) {
    manifest.j["final_total"] = result.trace.back().total;
    nlohmann::json timings = nlohmann::json::array();
    for (const auto& r : result.trace) timings.push_back(r.wall_ms);
    manifest.j["iteration_wall_ms"] = timings;
  }
}

void cmd_sweep(const RunConfig& cfg, ManifestWriter& manifest) {
  SweepSpec spec = cfg.sweep_spec();
  spec.out_dir = (fs::path(cfg.out_dir) / "cells").string();
  const SweepResult result = run_sweep(spec);
  write_text_file((fs::path(cfg.out_dir) / "summary.csv").string(),
                  sweep_summary_csv(result));
  nlohmann::json anomalies = nlohmann::json::array();
  for (const auto& a : result.anomalies) anomalies.push_back(a);
  manifest.j["anomalies"] = anomalies;
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& c : result.cells)
    if (c.failed)
      failures.push_back({{"mode", mode_name(c.mode)},
                          {"separation_mm", c.separation},
                          {"depth_mm", c.depth},
                          {"error", c.error}});
  manifest.j["failures"] = failures;
}

Tpsf tpsf_from_csv(const std::string& text) {
  Tpsf t;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header: t_ps,density
  std::vector<double> times;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw std::runtime_error("tpsf csv: bad row");
    times.push_back(std::stod(f[0]));
    t.density.push_back(std::stod(f[1]));
  }
  if (times.size() < 2) throw std::runtime_error("tpsf csv: too short");
  t.t0_ps = times.front();
  t.dt_ps = times[1] - times[0];
  return t;
}

void cmd_tcspc(const RunConfig& cfg, ManifestWriter& manifest) {
  const auto& tc = cfg.tree.at("tcspc");
  Tpsf tpsf;
  const std::string source = tc.at("tpsf_source").get<std::string>();
  if (source == "file") {
    tpsf = tpsf_from_csv(read_text_file(tc.at("tpsf_csv").get<std::string>()));
  } else if (source == "forward") {
    // TPSF of a boundary pair at the requested separation, from the TD
    // diffusion solve on the configured medium.
    const Mesh mesh = build_disk_mesh(cfg.mesh_spec());
    const AssemblyCache cache(mesh);
    const ElementLocator locator(mesh);
    const auto& med = cfg.tree.at("medium");
    const OpticalField field =
        homogeneous_disk(mesh, med.at("mua0").get<double>(),
                         med.at("musp0").get<double>(), med.at("n").get<double>());
    const double sep = tc.at("tpsf_pair_separation_mm").get<double>();
    const double half = std::asin(0.5 * sep / mesh.radius);
    OptodeLayout pair;
    const double a0 = 3.14159265358979323846 / 2.0;
    pair.sources.push_back(
        {mesh.radius * std::cos(a0 - half), mesh.radius * std::sin(a0 - half)});
    pair.detectors.push_back(
        {mesh.radius * std::cos(a0 + half), mesh.radius * std::sin(a0 + half)});
    TimeGrid grid = cfg.time_grid();
    grid.n_steps = 500;  // 10 ns window captures the full tail
    const FemSystem sys = assemble(mesh, cache, field);
    const Probes probes = make_probes(mesh, locator, pair, cfg.forward_options());
    const TdStepper stepper(sys, grid);
    const Eigen::MatrixXd hist = solve_td(sys, stepper, probes.q[0], grid);
    tpsf.t0_ps = 0.0;
    tpsf.dt_ps = grid.dt_ps;
    tpsf.density.resize(grid.n_steps + 1);
    for (int k = 0; k <= grid.n_steps; ++k)
      tpsf.density[k] = std::max(0.0, hist(probes.det_node[0], k));
    manifest.j["tpsf_mean_ps"] = tpsf.normalized().mean_ps();
  } else {
    throw ConfigError("tcspc.tpsf_source must be forward|file");
  }
  tpsf = tpsf.normalized();

  const LaserModel laser = cfg.laser_model();
  const DetectorModel detector = cfg.detector_model();
  const std::uint64_t n_pulses = tc.at("n_pulses").get<std::uint64_t>();
  const AcquireResult r =
      acquire(tpsf, laser, detector, n_pulses, cfg.seed, cfg.acquire_options());
  write_text_file((fs::path(cfg.out_dir) / "histogram.csv").string(),
                  histogram_to_csv(r.histogram));
  nlohmann::json side;
  side["laser"] = {{"rep_rate_hz", laser.rep_rate_hz},
                   {"pulse_sigma_ps", laser.pulse_sigma_ps},
                   {"mu", laser.mean_detected_per_pulse}};
  side["detector"] = {{"dead_time_ns", detector.dead_time_ns},
                      {"dark_rate_hz", detector.dark_rate_hz},
                      {"jitter_sigma_ps", detector.jitter_sigma_ps},
                      {"paralyzable", detector.paralyzable},
                      {"tdc_dead_time_ns", detector.tdc_dead_time_ns}};
  side["seed"] = cfg.seed;
  side["rng"] = "philox4x32-10";
  side["total_pulses"] = r.histogram.total_pulses;
  side["total_counts"] = r.histogram.total_counts;
  side["measured_rate_hz"] = r.histogram.measured_rate_hz(laser);
  if (r.histogram.total_counts > 0) {
    side["mean_ps"] = r.histogram.mean_ps();
    side["variance_ps2"] = r.histogram.variance_ps2();
  }
  write_text_file((fs::path(cfg.out_dir) / "histogram.json").string(),
                  side.dump(2));
  manifest.j["total_counts"] = r.histogram.total_counts;
}

}  // namespace

void run_checked(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  ManifestWriter manifest(cfg);
  if (cfg.command == "mesh")
    cmd_mesh(cfg, manifest);
  else if (cfg.command == "forward")
    cmd_forward(cfg, manifest);
  else if (cfg.command == "recon")
    cmd_recon(cfg, manifest);
  else if (cfg.command == "sweep")
    cmd_sweep(cfg, manifest);
  else if (cfg.command == "tcspc")
    cmd_tcspc(cfg, manifest);
  else
    throw ConfigError("unknown command: " + cfg.command);
  manifest.finish(cfg.out_dir);
}

int run(const RunConfig& cfg) {
  try {
    run_checked(cfg);
    return 0;
  } catch (const ConfigError& ex) {
    std::cout << nlohmann::json{{"error", {{"type", "config"},
                                           {"message", ex.what()}}}}
                     .dump()
              << std::endl;
    return 2;
  } catch (const std::exception& ex) {
    std::cout << nlohmann::json{{"error", {{"type", "computation"},
                                           {"message", ex.what()}}}}
                     .dump()
              << std::endl;
    return 1;
  }
}

}  // namespace dot
