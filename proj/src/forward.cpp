#include "dot/forward.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dot/io.hpp"
#include "dot/parallel.hpp"

namespace dot {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

std::string mode_name(Mode m) { return m == Mode::CW ? "cw" : "td"; }

Mode mode_from_name(const std::string& s) {
  if (s == "cw" || s == "CW") return Mode::CW;
  if (s == "td" || s == "TD") return Mode::TD;
  throw std::invalid_argument("unknown mode: " + s);
}

void OptodeLayout::validate(double radius) const {
  if (sources.empty() || detectors.empty())
    throw std::invalid_argument("layout: needs at least one source and detector");
  for (const auto& p : sources)
    if (std::abs(norm2d(p) - radius) > 1e-6)
      throw std::invalid_argument("layout: source off the boundary");
  for (const auto& p : detectors)
    if (std::abs(norm2d(p) - radius) > 1e-6)
      throw std::invalid_argument("layout: detector off the boundary");
}

OptodeLayout default_layout(double radius, int n_sources, int n_detectors,
                            double start_angle_deg) {
  if (n_sources < 1 || n_detectors < 1)
    throw std::invalid_argument("default_layout: counts must be >= 1");
  OptodeLayout layout;
  const int total = n_sources + n_detectors;
  const double start = start_angle_deg * kPi / 180.0;
  for (int i = 0; i < total; ++i) {
    const double a = start + 2.0 * kPi * i / total;
    const Point2 p{radius * std::cos(a), radius * std::sin(a)};
    // Alternate roles around the circle; extras of the larger group fill the
    // remaining slots in order.
    const bool source_slot =
        (i % 2 == 0) ? (i / 2 < n_sources) : (i / 2 >= n_detectors);
    if (source_slot && layout.n_sources() < n_sources)
      layout.sources.push_back(p);
    else
      layout.detectors.push_back(p);
  }
  return layout;
}

OptodeLayout arc_layout(double radius, int n_sources, int n_detectors,
                        double center_deg, double span_deg) {
  if (n_sources < 1 || n_detectors < 1)
    throw std::invalid_argument("arc_layout: counts must be >= 1");
  OptodeLayout layout;
  const int total = n_sources + n_detectors;
  const double a0 = (center_deg - 0.5 * span_deg) * kPi / 180.0;
  const double da = (span_deg * kPi / 180.0) / std::max(total - 1, 1);
  for (int i = 0; i < total; ++i) {
    const double a = a0 + da * i;
    const Point2 p{radius * std::cos(a), radius * std::sin(a)};
    const bool source_slot =
        (i % 2 == 0) ? (i / 2 < n_sources) : (i / 2 >= n_detectors);
    if (source_slot && layout.n_sources() < n_sources)
      layout.sources.push_back(p);
    else
      layout.detectors.push_back(p);
  }
  return layout;
}

void TimeGrid::validate() const {
  if (!(dt_ps > 0.0) || n_steps < 1 || !(bin_width_ps > 0.0) || n_bins < 1)
    throw std::invalid_argument("TimeGrid: all fields must be positive");
  const double ratio = bin_width_ps / dt_ps;
  if (std::abs(ratio - std::lround(ratio)) > 1e-9)
    throw std::invalid_argument("TimeGrid: dt must divide bin_width exactly");
  if (n_bins * bin_width_ps > n_steps * dt_ps + 1e-9)
    throw std::invalid_argument("TimeGrid: bins exceed the time window");
}

int TimeGrid::steps_per_bin() const {
  return static_cast<int>(std::lround(bin_width_ps / dt_ps));
}

int Measurement::valid_count() const {
  int c = 0;
  for (auto v : valid) c += v != 0;
  return c;
}

void Measurement::validate() const {
  if (y.size() != size() || static_cast<int>(valid.size()) != size())
    throw std::runtime_error("Measurement: dimension mismatch");
  for (int i = 0; i < size(); ++i)
    if (valid[i] && !std::isfinite(y[i]))
      throw std::runtime_error("Measurement: non-finite retained value");
}

Probes make_probes(const Mesh& mesh, const ElementLocator& locator,
                   const OptodeLayout& layout, const ForwardOptions& opt) {
  layout.validate(mesh.radius);
  Probes probes;
  for (const Point2& pos : layout.sources) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(mesh.node_count());
    if (opt.source_model == SourceModel::BoundaryNode) {
      q[nearest_boundary_node(mesh, pos)] = opt.source_strength;
    } else {
      // Isotropic point source one inset length inside, along the inward
      // normal; the load is spread over the containing element's P1 basis.
      const double scale = (mesh.radius - opt.source_inset_mm) / mesh.radius;
      const Point2 p{pos.x * scale, pos.y * scale};
      const auto e = locator.locate(p);
      if (!e) throw std::runtime_error("make_probes: source point not in mesh");
      const auto l = locator.barycentric(*e, p);
      const auto& t = mesh.elements[*e];
      for (int k = 0; k < 3; ++k) q[t[k]] += opt.source_strength * l[k];
    }
    probes.q.push_back(std::move(q));
  }
  for (const Point2& pos : layout.detectors)
    probes.det_node.push_back(nearest_boundary_node(mesh, pos));
  return probes;
}

Eigen::VectorXd solve_cw(const FemSystem& sys, const Eigen::VectorXd& q) {
  return Factorization(sys.system()).solve(q);
}

TdStepper::TdStepper(const FemSystem& sys, const TimeGrid& grid)
    : Q_(),
      fac_P_((sys.mass * (1.0 / (sys.v * grid.dt_ns())) + 0.5 * sys.system())
                 .eval()),
      fac_M_(sys.mass),
      v_(sys.v),
      dt_ns_(grid.dt_ns()) {
  grid.validate();
  Q_ = (sys.mass * (1.0 / (sys.v * grid.dt_ns())) - 0.5 * sys.system()).eval();
}

Eigen::VectorXd TdStepper::initial(const Eigen::VectorXd& q) const {
  return v_ * fac_M_.solve(q);
}

Eigen::VectorXd TdStepper::step(const Eigen::VectorXd& phi) const {
  return fac_P_.solve(Q_ * phi);
}

Eigen::VectorXd TdStepper::lag_initial(const Eigen::VectorXd& e) const {
  return fac_P_.solve(e);
}

Eigen::MatrixXd solve_td(const FemSystem& sys, const TdStepper& stepper,
                         const Eigen::VectorXd& q, const TimeGrid& grid) {
  Eigen::MatrixXd history(q.size(), grid.n_steps + 1);
  Eigen::VectorXd phi = stepper.initial(q);
  history.col(0) = phi;
  double prev_norm = phi.norm();
  for (int t = 1; t <= grid.n_steps; ++t) {
    phi = stepper.step(phi);
    history.col(t) = phi;
    const double nrm = phi.norm();
    if (prev_norm > 0.0 && nrm > 10.0 * prev_norm)
      throw std::runtime_error("solve_td: instability at step " +
                               std::to_string(t));
    prev_norm = nrm;
  }
  return history;
}

Eigen::VectorXd bin_series(const Eigen::VectorXd& series, const TimeGrid& grid) {
  const int ws = grid.steps_per_bin();
  const double dt = grid.dt_ns();
  Eigen::VectorXd bins = Eigen::VectorXd::Zero(grid.n_bins);
  for (int b = 0; b < grid.n_bins; ++b) {
    const int k0 = b * ws, k1 = (b + 1) * ws;
    double acc = 0.5 * (series[k0] + series[k1]);
    for (int k = k0 + 1; k < k1; ++k) acc += series[k];
    bins[b] = acc * dt;
  }
  return bins;
}

double mean_time_ns(const Eigen::VectorXd& series, const TimeGrid& grid) {
  const double dt = grid.dt_ns();
  double m0 = 0.0, m1 = 0.0;
  for (int k = 0; k < series.size(); ++k) {
    const double w = (k == 0 || k == series.size() - 1) ? 0.5 : 1.0;
    m0 += w * series[k];
    m1 += w * series[k] * (k * dt);
  }
  if (m0 <= 0.0) throw std::runtime_error("mean_time_ns: empty series");
  return m1 / m0;
}

Measurement measure_cw(const FemSystem& sys, const Probes& probes,
                       const ForwardOptions& opt, Eigen::MatrixXd* fields) {
  const int ns = static_cast<int>(probes.q.size());
  const int nd = static_cast<int>(probes.det_node.size());
  Measurement m;
  m.mode = Mode::CW;
  m.n_sources = ns;
  m.n_detectors = nd;
  m.n_bins = 1;
  m.y.resize(m.size());
  m.intensity.resize(m.size());
  m.valid.assign(m.size(), 1);

  Factorization fac(sys.system());
  Eigen::MatrixXd phi(sys.mesh->node_count(), ns);
  parallel_for(ns, opt.jobs,
               [&](int s) { phi.col(s) = fac.solve(probes.q[s]); });
  const double c = 1.0 / (2.0 * sys.mismatch_A);
  for (int s = 0; s < ns; ++s) {
    for (int d = 0; d < nd; ++d) {
      const double val = c * phi(probes.det_node[d], s);
      if (!(val > 0.0))
        throw std::runtime_error(
            "measure_cw: non-positive exitance (solver problem) at pair " +
            std::to_string(s) + "," + std::to_string(d));
      m.intensity[m.index(s, d)] = val;
      m.y[m.index(s, d)] = std::log(val);
    }
  }
  if (fields) *fields = std::move(phi);
  return m;
}

Measurement measure_td(const FemSystem& sys, const Probes& probes,
                       const TimeGrid& grid, const ForwardOptions& opt,
                       std::vector<Eigen::MatrixXd>* histories) {
  grid.validate();
  const int ns = static_cast<int>(probes.q.size());
  const int nd = static_cast<int>(probes.det_node.size());
  Measurement m;
  m.mode = Mode::TD;
  m.n_sources = ns;
  m.n_detectors = nd;
  m.n_bins = grid.n_bins;
  m.y = Eigen::VectorXd::Zero(m.size());
  m.intensity = Eigen::VectorXd::Zero(m.size());
  m.valid.assign(m.size(), 0);

  TdStepper stepper(sys, grid);
  if (histories) histories->resize(ns);
  const double c = 1.0 / (2.0 * sys.mismatch_A);

  std::vector<Eigen::MatrixXd> bins_per_src(ns);
  parallel_for(ns, opt.jobs, [&](int s) {
    Eigen::MatrixXd hist = solve_td(sys, stepper, probes.q[s], grid);
    Eigen::MatrixXd bins(nd, grid.n_bins);
    for (int d = 0; d < nd; ++d) {
      const Eigen::VectorXd series =
          hist.row(probes.det_node[d]).transpose();
      bins.row(d) = (c * bin_series(series, grid)).transpose();
    }
    bins_per_src[s] = std::move(bins);
    if (histories) (*histories)[s] = std::move(hist);
  });

  double global_peak = 0.0;
  for (int s = 0; s < ns; ++s)
    global_peak = std::max(global_peak, bins_per_src[s].maxCoeff());
  if (!(global_peak > 0.0))
    throw std::runtime_error("measure_td: no positive bin values");

  for (int s = 0; s < ns; ++s) {
    for (int d = 0; d < nd; ++d) {
      const double pair_peak = bins_per_src[s].row(d).maxCoeff();
      for (int b = 0; b < grid.n_bins; ++b) {
        const double val = bins_per_src[s](d, b);
        const int i = m.index(s, d, b);
        m.intensity[i] = val;
        // Entries below the representability floors carry no usable signal
        // in a noise-free double-precision solve and are excluded.
        const bool ok = val > 0.0 && val >= opt.td_floor_rel * pair_peak &&
                        val >= opt.td_floor_global * global_peak;
        if (ok) {
          m.valid[i] = 1;
          m.y[i] = std::log(val);
        }
      }
      if (!(pair_peak > 0.0))
        throw std::runtime_error(
            "measure_td: non-positive peak bin (solver problem) at pair " +
            std::to_string(s) + "," + std::to_string(d));
    }
  }
  return m;
}

Measurement simulate(const Mesh& mesh, const AssemblyCache& cache,
                     const ElementLocator& locator, const OpticalField& field,
                     const OptodeLayout& layout, Mode mode,
                     const TimeGrid& grid, const ForwardOptions& opt) {
  const FemSystem sys = assemble(mesh, cache, field);
  const Probes probes = make_probes(mesh, locator, layout, opt);
  if (mode == Mode::CW) return measure_cw(sys, probes, opt);
  return measure_td(sys, probes, grid, opt);
}

std::string measurement_to_csv(const Measurement& m) {
  std::ostringstream out;
  out << "source_id,detector_id,bin_id,y\n";
  for (int s = 0; s < m.n_sources; ++s)
    for (int d = 0; d < m.n_detectors; ++d)
      for (int b = 0; b < m.n_bins; ++b) {
        const int i = m.index(s, d, b);
        if (!m.valid[i]) continue;
        out << s << ',' << d << ',' << b << ',' << fmt17(m.y[i]) << '\n';
      }
  return out.str();
}

Measurement measurement_from_csv(const std::string& text, Mode mode,
                                 int n_sources, int n_detectors, int n_bins) {
  Measurement m;
  m.mode = mode;
  m.n_sources = n_sources;
  m.n_detectors = n_detectors;
  m.n_bins = n_bins;
  m.y = Eigen::VectorXd::Zero(m.size());
  m.intensity = Eigen::VectorXd::Zero(m.size());
  m.valid.assign(m.size(), 0);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw std::runtime_error("measurement csv: bad row");
    const int s = std::stoi(f[0]), d = std::stoi(f[1]), b = std::stoi(f[2]);
    const int i = m.index(s, d, b);
    m.y[i] = std::stod(f[3]);
    m.intensity[i] = std::exp(m.y[i]);
    m.valid[i] = 1;
  }
  return m;
}

}  // namespace dot
