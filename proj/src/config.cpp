#include "dot/config.hpp"

namespace dot {

nlohmann::json default_config() {
  return nlohmann::json{
      {"mesh",
       {{"radius_mm", 70.0},
        {"h_boundary_mm", 2.0},
        {"h_interior_mm", 5.0},
        {"node_cap", 200000}}},
      {"medium", {{"mua0", 0.02}, {"musp0", 0.67}, {"n", 1.4}}},
      {"phantom",
       {{"separation_mm", 10.0},
        {"depth_mm", 10.0},
        {"contrast", 2.0},
        {"depth_convention", "top_of_inclusion"}}},
      {"optodes",
       {{"n_sources", 10},
        {"n_detectors", 10},
        {"layout", "full_circle"},
        {"start_angle_deg", 90.0},
        {"arc_center_deg", 90.0},
        {"arc_span_deg", 180.0}}},
      {"forward",
       {{"mode", "td"},
        {"source_model", "interior_point"},
        {"source_strength", 1.0},
        {"td_floor_rel", 1e-9},
        {"td_floor_global", 1e-12}}},
      {"time",
       {{"dt_ps", 20.0}, {"n_steps", 224}, {"bin_width_ps", 640.0}, {"n_bins", 7}}},
      {"recon",
       {{"outer_iterations", 20},
        {"cg_max_inner", 100},
        {"cg_rel_tol", 1e-4},
        {"tv_tau", 0.01},
        {"tv_beta", 0.01},
        {"unknowns", "mua_only"},
        {"ls_shrink", 0.5},
        {"ls_armijo", 1e-4},
        {"ls_max_backtracks", 10},
        {"clamp_min", 1e-5},
        {"calibration", "reference"},
        {"data_h_factor", 0.25},
        {"data_csv", ""},
        {"dump_jacobian", false}}},
      {"sweep",
       {{"figure", 3},
        {"dip_threshold", 0.8},
        {"min_peak_frac", 0.05},
        {"profile_samples", 201}}},
      {"tcspc",
       {{"rep_rate_hz", 1e6},
        {"pulse_sigma_ps", 42.5},
        {"mu", 0.1},
        {"dead_time_ns", 40.0},
        {"dark_rate_hz", 0.0},
        {"jitter_sigma_ps", 40.0},
        {"paralyzable", false},
        {"tdc_dead_time_ns", 14.0},
        {"n_pulses", 1000000},
        {"bin_width_ps", 20.0},
        {"record_mode", "first_per_pulse"},
        {"tpsf_source", "forward"},
        {"tpsf_csv", ""},
        {"tpsf_pair_separation_mm", 30.0}}}};
}

namespace {

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void merge_into(nlohmann::json& base, const nlohmann::json& user,
                const std::string& path) {
  if (!user.is_object())
    throw ConfigError("config section is not an object: " +
                      (path.empty() ? "<root>" : path));
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key: " + here);
    nlohmann::json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, here);
    } else {
      if (!same_kind(slot, value))
        throw ConfigError("config type mismatch at: " + here);
      slot = value;
    }
  }
}

}  // namespace

nlohmann::json merge_config(const nlohmann::json& user) {
  nlohmann::json merged = default_config();
  merge_into(merged, user, "");
  return merged;
}

MeshSpec RunConfig::mesh_spec() const {
  const auto& m = tree.at("mesh");
  MeshSpec s;
  s.radius = m.at("radius_mm").get<double>();
  s.h_boundary = m.at("h_boundary_mm").get<double>();
  s.h_interior = m.at("h_interior_mm").get<double>();
  s.node_cap = m.at("node_cap").get<std::size_t>();
  return s;
}

MeshSpec RunConfig::data_mesh_spec() const {
  MeshSpec s = mesh_spec();
  const double f = tree.at("recon").at("data_h_factor").get<double>();
  if (!(f > 0.0)) throw ConfigError("recon.data_h_factor must be > 0");
  s.h_boundary *= f;
  s.h_interior *= f;
  return s;
}

PhantomSpec RunConfig::phantom_spec() const {
  const auto& p = tree.at("phantom");
  const auto& med = tree.at("medium");
  PhantomSpec s;
  s.separation = p.at("separation_mm").get<double>();
  s.depth = p.at("depth_mm").get<double>();
  s.contrast = p.at("contrast").get<double>();
  const std::string conv = p.at("depth_convention").get<std::string>();
  if (conv == "top_of_inclusion")
    s.convention = DepthConvention::TopOfInclusion;
  else if (conv == "center")
    s.convention = DepthConvention::CenterDepth;
  else
    throw ConfigError("phantom.depth_convention must be top_of_inclusion|center");
  s.mua0 = med.at("mua0").get<double>();
  s.musp0 = med.at("musp0").get<double>();
  s.n = med.at("n").get<double>();
  return s;
}

OptodeLayout RunConfig::layout(double radius) const {
  const auto& o = tree.at("optodes");
  const std::string kind = o.at("layout").get<std::string>();
  const int ns = o.at("n_sources").get<int>();
  const int nd = o.at("n_detectors").get<int>();
  if (kind == "full_circle")
    return default_layout(radius, ns, nd, o.at("start_angle_deg").get<double>());
  if (kind == "arc")
    return arc_layout(radius, ns, nd, o.at("arc_center_deg").get<double>(),
                      o.at("arc_span_deg").get<double>());
  throw ConfigError("optodes.layout must be full_circle|arc");
}

TimeGrid RunConfig::time_grid() const {
  const auto& t = tree.at("time");
  TimeGrid g;
  g.dt_ps = t.at("dt_ps").get<double>();
  g.n_steps = t.at("n_steps").get<int>();
  g.bin_width_ps = t.at("bin_width_ps").get<double>();
  g.n_bins = t.at("n_bins").get<int>();
  g.validate();
  return g;
}

ForwardOptions RunConfig::forward_options() const {
  const auto& f = tree.at("forward");
  const auto& med = tree.at("medium");
  ForwardOptions o;
  const std::string sm = f.at("source_model").get<std::string>();
  if (sm == "interior_point")
    o.source_model = SourceModel::InteriorPoint;
  else if (sm == "boundary_node")
    o.source_model = SourceModel::BoundaryNode;
  else
    throw ConfigError("forward.source_model must be interior_point|boundary_node");
  o.source_inset_mm = 1.0 / med.at("musp0").get<double>();
  o.source_strength = f.at("source_strength").get<double>();
  o.td_floor_rel = f.at("td_floor_rel").get<double>();
  o.td_floor_global = f.at("td_floor_global").get<double>();
  o.jobs = jobs;
  return o;
}

Mode RunConfig::forward_mode() const {
  return mode_from_name(tree.at("forward").at("mode").get<std::string>());
}

ReconSettings RunConfig::recon_settings() const {
  const auto& r = tree.at("recon");
  ReconSettings s;
  s.outer_iterations = r.at("outer_iterations").get<int>();
  s.cg_max_inner = r.at("cg_max_inner").get<int>();
  s.cg_rel_tol = r.at("cg_rel_tol").get<double>();
  s.tv_tau = r.at("tv_tau").get<double>();
  s.tv_beta = r.at("tv_beta").get<double>();
  s.mode = forward_mode();
  const std::string u = r.at("unknowns").get<std::string>();
  if (u == "joint")
    s.unknowns = Unknowns::Joint;
  else if (u == "mua_only")
    s.unknowns = Unknowns::MuaOnly;
  else
    throw ConfigError("recon.unknowns must be joint|mua_only");
  s.ls_shrink = r.at("ls_shrink").get<double>();
  s.ls_armijo = r.at("ls_armijo").get<double>();
  s.ls_max_backtracks = r.at("ls_max_backtracks").get<int>();
  s.clamp_min = r.at("clamp_min").get<double>();
  s.jobs = jobs;
  return s;
}

Calibration RunConfig::calibration() const {
  const std::string c = tree.at("recon").at("calibration").get<std::string>();
  if (c == "reference") return Calibration::Reference;
  if (c == "none") return Calibration::None;
  throw ConfigError("recon.calibration must be reference|none");
}

DiscernSettings RunConfig::discern_settings() const {
  const auto& s = tree.at("sweep");
  DiscernSettings d;
  d.dip_threshold = s.at("dip_threshold").get<double>();
  d.min_peak_frac = s.at("min_peak_frac").get<double>();
  d.samples = s.at("profile_samples").get<int>();
  return d;
}

SweepSpec RunConfig::sweep_spec() const {
  const int figure = tree.at("sweep").at("figure").get<int>();
  SweepSpec s;
  if (figure == 3)
    s = resolution_sweep_spec();
  else if (figure == 4)
    s = depth_sweep_spec();
  else
    throw ConfigError("sweep.figure must be 3 or 4");
  const auto& med = tree.at("medium");
  s.contrast = tree.at("phantom").at("contrast").get<double>();
  s.discern = discern_settings();
  s.recon = recon_settings();
  s.calibration = calibration();
  s.recon_mesh = mesh_spec();
  s.data_mesh = data_mesh_spec();
  s.grid = time_grid();
  s.forward = forward_options();
  s.forward.jobs = 1;  // cells parallelize, solves inside stay sequential
  s.recon.jobs = 1;
  s.mua0 = med.at("mua0").get<double>();
  s.musp0 = med.at("musp0").get<double>();
  s.n = med.at("n").get<double>();
  s.n_sources = tree.at("optodes").at("n_sources").get<int>();
  s.n_detectors = tree.at("optodes").at("n_detectors").get<int>();
  s.jobs = jobs;
  return s;
}

LaserModel RunConfig::laser_model() const {
  const auto& t = tree.at("tcspc");
  LaserModel l;
  l.rep_rate_hz = t.at("rep_rate_hz").get<double>();
  l.pulse_sigma_ps = t.at("pulse_sigma_ps").get<double>();
  l.mean_detected_per_pulse = t.at("mu").get<double>();
  return l;
}

DetectorModel RunConfig::detector_model() const {
  const auto& t = tree.at("tcspc");
  DetectorModel d;
  d.dead_time_ns = t.at("dead_time_ns").get<double>();
  d.dark_rate_hz = t.at("dark_rate_hz").get<double>();
  d.jitter_sigma_ps = t.at("jitter_sigma_ps").get<double>();
  d.paralyzable = t.at("paralyzable").get<bool>();
  d.tdc_dead_time_ns = t.at("tdc_dead_time_ns").get<double>();
  return d;
}

AcquireOptions RunConfig::acquire_options() const {
  const auto& t = tree.at("tcspc");
  AcquireOptions o;
  const std::string rm = t.at("record_mode").get<std::string>();
  if (rm == "first_per_pulse")
    o.record = RecordMode::FirstPerPulse;
  else if (rm == "all_events")
    o.record = RecordMode::AllEvents;
  else
    throw ConfigError("tcspc.record_mode must be first_per_pulse|all_events");
  o.bin_width_ps = t.at("bin_width_ps").get<double>();
  o.jobs = jobs;
  if (jobs > 1) o.block_pulses = 1 << 16;
  return o;
}

}  // namespace dot
