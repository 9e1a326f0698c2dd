#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dot/rng.hpp"

namespace dot {

struct DetectorModel {
  double dead_time_ns = 40.0;    // detector (quenching) dead time
  double dark_rate_hz = 0.0;     // dark counts per second
  double jitter_sigma_ps = 40.0; // detector + TDC channel jitter
  bool paralyzable = false;
  double tdc_dead_time_ns = 14.0;  // second dead-time stage in series

  void validate() const;
};

struct LaserModel {
  double rep_rate_hz = 1e6;
  double pulse_sigma_ps = 42.5;       // ~100 ps FWHM
  double mean_detected_per_pulse = 0.1;  // mu

  void validate() const;
  double period_ns() const { return 1e9 / rep_rate_hz; }
};

/// Arrival-time density on a uniform grid, treated as piecewise constant and
/// normalized to unit mass.
struct Tpsf {
  double t0_ps = 0.0;
  double dt_ps = 0.0;
  std::vector<double> density;

  void validate() const;
  Tpsf normalized() const;
  double mean_ps() const;
  double variance_ps2() const;
};

struct DtofHistogram {
  double bin_width_ps = 0.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total_pulses = 0;
  std::uint64_t total_counts = 0;

  int n_bins() const { return static_cast<int>(counts.size()); }
  double mean_ps() const;
  double variance_ps2() const;
  double measured_rate_hz(const LaserModel& laser) const;
};

enum class RecordMode {
  FirstPerPulse,  // classic single-stop TCSPC
  AllEvents       // multi-hit TDC; needed for dark-background diagnostics
};

struct AcquireOptions {
  RecordMode record = RecordMode::FirstPerPulse;
  double bin_width_ps = 20.0;
  /// Pulses per independent block; dead-time state resets at block borders
  /// (negligible when block span >> dead time). 0 = single exact block.
  std::uint64_t block_pulses = 0;
  int jobs = 1;
  bool capture_events = false;  // debug: record accepted absolute times (ns)
};

struct AcquireResult {
  DtofHistogram histogram;
  std::vector<double> events_ns;  // only when capture_events
};

/// Simulates TCSPC acquisition of the given TPSF: Poisson photons per pulse
/// (P(detect >= 1) = 1 - exp(-mu)), arrival times from the TPSF convolved
/// with pulse/detector jitter, homogeneous dark counts, detector and TDC
/// dead-time stages in series.
AcquireResult acquire(const Tpsf& tpsf, const LaserModel& laser,
                      const DetectorModel& detector, std::uint64_t n_pulses,
                      std::uint64_t seed, const AcquireOptions& opt = {});

/// Count-rate transfer through a dead-time stage.
double effective_rate(double incident_rate_hz, const DetectorModel& detector);

/// Expected histogram-bin probabilities for the TPSF convolved with a
/// Gaussian of the given sigma (closed-form per piecewise-constant segment).
std::vector<double> convolved_bin_probabilities(const Tpsf& tpsf,
                                                double sigma_ps,
                                                double bin_width_ps,
                                                int n_bins);

struct SaturationPoint {
  double mu = 0.0;
  double counts_per_pulse = 0.0;
  double measured_rate_hz = 0.0;
  double distortion = 0.0;  // earth-mover distance to the jittered TPSF (ps)
};

/// Sweeps the per-pulse mean over an ascending grid and reports throughput
/// and histogram distortion; pile-up raises distortion monotonically once
/// saturation sets in.
std::vector<SaturationPoint> saturation_curve(const Tpsf& tpsf,
                                              const LaserModel& laser,
                                              const DetectorModel& detector,
                                              const std::vector<double>& mu_grid,
                                              std::uint64_t n_pulses,
                                              std::uint64_t seed,
                                              const AcquireOptions& opt = {});

std::string histogram_to_csv(const DtofHistogram& h);

}  // namespace dot
