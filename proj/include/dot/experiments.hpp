#pragma once

#include <string>
#include <vector>

#include "dot/inverse.hpp"
#include "dot/medium.hpp"

namespace dot {

struct DiscernSettings {
  double dip_threshold = 0.8;
  /// Minimum background-subtracted peak height as a fraction of the true
  /// inclusion amplitude; rejects numerically flat reconstructions whose
  /// ripples would otherwise pass the relative dip test.
  double min_peak_frac = 0.05;
  int samples = 201;
};

struct ProfileSample {
  double s = 0.0;  // arc-length coordinate along the profile line (mm)
  double x = 0.0, y = 0.0;
  double mua = 0.0;
};

struct DiscernResult {
  bool discernible = false;
  bool peaks_found = false;
  bool peak_floor_ok = false;
  double dip_ratio = 1e300;     // background-subtracted valley / smaller peak
  double peak1_x = 0.0, peak2_x = 0.0;
  double peak_height_min = 0.0; // background-subtracted
  double loc_err_mm = 0.0;      // mean distance of peaks to true centers
  std::vector<ProfileSample> profile;
};

/// Samples the reconstructed mua along the horizontal line through the two
/// true inclusion centers and applies the two-peak criterion: local maxima
/// within separation/2 of each center whose valley drops below
/// dip_threshold of the smaller peak.
DiscernResult discernible(const Mesh& mesh, const Eigen::VectorXd& mua,
                          const PhantomSpec& phantom,
                          const DiscernSettings& ds);

/// Re-evaluates the stored metrics under a different dip threshold.
bool discernible_at(const DiscernResult& d, const DiscernSettings& ds,
                    double threshold);

struct SweepSpec {
  std::vector<Mode> modes{Mode::TD, Mode::CW};
  std::vector<double> separations;  // mm
  std::vector<double> depths;       // mm
  double contrast = 2.0;
  DepthConvention convention = DepthConvention::TopOfInclusion;
  DiscernSettings discern;
  ReconSettings recon;
  Calibration calibration = Calibration::Reference;
  MeshSpec recon_mesh{70.0, 2.0, 5.0};
  MeshSpec data_mesh{70.0, 1.0, 2.5};  // h halved to avoid the inverse crime
  TimeGrid grid;
  ForwardOptions forward;
  double mua0 = 0.02, musp0 = 0.67, n = 1.4;
  int n_sources = 10, n_detectors = 10;
  std::string out_dir;  // empty = no artifacts written
  int jobs = 1;
};

struct SweepCell {
  Mode mode = Mode::CW;
  double separation = 0.0;
  double depth = 0.0;
  bool failed = false;
  std::string error;
  std::string artifact_dir;  // empty when no artifacts were written
  DiscernResult discern;
  std::vector<IterationRecord> trace;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<std::string> anomalies;  // soft monotonicity violations

  const SweepCell* find(Mode mode, double separation, double depth) const;
  /// Smallest separation flagged discernible at the given depth; infinity if
  /// none.
  double min_discernible_separation(Mode mode, double depth) const;
  /// Largest depth flagged discernible at the given separation; 0 if none.
  double max_discernible_depth(Mode mode, double separation) const;
};

SweepResult run_sweep(const SweepSpec& spec);

/// Stock sweep families: separations {5,10,20} at 10 mm top depth, and
/// depths {20,30,40,50} at 30 mm separation (center convention).
SweepSpec resolution_sweep_spec();
SweepSpec depth_sweep_spec();

SweepResult resolution_sweep(const SweepSpec& spec);
SweepResult depth_sweep(const SweepSpec& spec);

std::string sweep_summary_csv(const SweepResult& result);
std::string profile_to_csv(const std::vector<ProfileSample>& profile);

}  // namespace dot
