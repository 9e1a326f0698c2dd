#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dot/fem.hpp"
#include "dot/medium.hpp"
#include "dot/mesh.hpp"

namespace dot {

enum class Mode { CW, TD };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

struct OptodeLayout {
  std::vector<Point2> sources;    // boundary positions (mm)
  std::vector<Point2> detectors;  // boundary positions (mm)

  int n_sources() const { return static_cast<int>(sources.size()); }
  int n_detectors() const { return static_cast<int>(detectors.size()); }
  void validate(double radius) const;  // all on the rim within 1e-6 mm
};

/// Sources and detectors interleaved at equal angles around the full circle,
/// starting at the disk top.
OptodeLayout default_layout(double radius, int n_sources = 10,
                            int n_detectors = 10,
                            double start_angle_deg = 90.0);

/// Reflection-style layout on an arc.
OptodeLayout arc_layout(double radius, int n_sources, int n_detectors,
                        double center_deg, double span_deg);

struct TimeGrid {
  double dt_ps = 20.0;
  int n_steps = 224;
  double bin_width_ps = 640.0;
  int n_bins = 7;

  void validate() const;
  int steps_per_bin() const;
  double dt_ns() const { return dt_ps * 1e-3; }
  double window_ns() const { return n_steps * dt_ps * 1e-3; }
};

/// Log-intensity data on the (source, detector[, bin]) grid. Entries whose
/// modeled intensity falls below the representability floors are flagged
/// invalid and excluded from misfit and Jacobian rows.
struct Measurement {
  Mode mode = Mode::CW;
  int n_sources = 0;
  int n_detectors = 0;
  int n_bins = 1;  // 1 for CW
  Eigen::VectorXd y;          // log intensities, flattened [src][det][bin]
  Eigen::VectorXd intensity;  // pre-log values
  std::vector<std::uint8_t> valid;

  int size() const { return n_sources * n_detectors * n_bins; }
  int index(int s, int d, int b = 0) const {
    return (s * n_detectors + d) * n_bins + b;
  }
  int valid_count() const;
  void validate() const;  // finite y on valid entries
};

enum class SourceModel {
  InteriorPoint,  // isotropic point source one transport length inside
  BoundaryNode    // nodal delta at the nearest boundary node
};

struct ForwardOptions {
  SourceModel source_model = SourceModel::InteriorPoint;
  double source_inset_mm = 1.0 / 0.67;
  double source_strength = 1.0;
  double td_floor_rel = 1e-9;      // per-pair bin floor (vs the pair's peak bin)
  double td_floor_global = 1e-12;  // cross-pair floor (vs the global peak bin)
  int jobs = 1;
};

/// Mesh-resolved optode functionals: load vectors for sources, readout node
/// ids for detectors.
struct Probes {
  std::vector<Eigen::VectorXd> q;
  std::vector<int> det_node;
};

Probes make_probes(const Mesh& mesh, const ElementLocator& locator,
                   const OptodeLayout& layout, const ForwardOptions& opt);

/// Stationary solve (K + Ma + B) phi = q.
Eigen::VectorXd solve_cw(const FemSystem& sys, const Eigen::VectorXd& q);

/// Crank-Nicolson stepper for (1/v) M dphi/dt + (K + Ma + B) phi = q delta(t).
class TdStepper {
 public:
  TdStepper(const FemSystem& sys, const TimeGrid& grid);

  Eigen::VectorXd initial(const Eigen::VectorXd& q) const;  // v M^{-1} q
  Eigen::VectorXd step(const Eigen::VectorXd& phi) const;   // P^{-1} Q phi
  /// Adjoint impulse: zeta^0 = P^{-1} e; later lags advance with step().
  Eigen::VectorXd lag_initial(const Eigen::VectorXd& e) const;
  double dt_ns() const { return dt_ns_; }

 private:
  Eigen::SparseMatrix<double> Q_;
  Factorization fac_P_;
  Factorization fac_M_;
  double v_;
  double dt_ns_;
};

/// Full nodal time history for one source: column t holds phi at step t,
/// t = 0..n_steps. Reports instability if the solution norm grows 10x in a
/// step.
Eigen::MatrixXd solve_td(const FemSystem& sys, const TdStepper& stepper,
                         const Eigen::VectorXd& q, const TimeGrid& grid);

/// Trapezoidal per-bin time integral (ns units) of one detector series
/// (length n_steps + 1).
Eigen::VectorXd bin_series(const Eigen::VectorXd& series, const TimeGrid& grid);

/// Mean arrival time (ns) of a detector series over the full window.
double mean_time_ns(const Eigen::VectorXd& series, const TimeGrid& grid);

/// CW measurement; exitance = phi/(2A) read at the detector boundary node.
/// Optionally returns the nodal fields (nodes x n_sources).
Measurement measure_cw(const FemSystem& sys, const Probes& probes,
                       const ForwardOptions& opt,
                       Eigen::MatrixXd* fields = nullptr);

/// TD measurement with per-bin trapezoidal readout; optionally stores the
/// full nodal history per source for the Jacobian.
Measurement measure_td(const FemSystem& sys, const Probes& probes,
                       const TimeGrid& grid, const ForwardOptions& opt,
                       std::vector<Eigen::MatrixXd>* histories = nullptr);

/// One-call forward simulation used for data generation.
Measurement simulate(const Mesh& mesh, const AssemblyCache& cache,
                     const ElementLocator& locator, const OpticalField& field,
                     const OptodeLayout& layout, Mode mode,
                     const TimeGrid& grid, const ForwardOptions& opt);

/// Measurement CSV (source_id, detector_id, bin_id, y) with invalid entries
/// omitted.
std::string measurement_to_csv(const Measurement& m);
Measurement measurement_from_csv(const std::string& text, Mode mode,
                                 int n_sources, int n_detectors, int n_bins);

}  // namespace dot
