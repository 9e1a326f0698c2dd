#include "dot/tcspc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dot/io.hpp"
#include "dot/parallel.hpp"
#include "dot/stats.hpp"

namespace dot {

void DetectorModel::validate() const {
  if (dead_time_ns < 0.0 || dark_rate_hz < 0.0 || jitter_sigma_ps < 0.0 ||
      tdc_dead_time_ns < 0.0)
    throw std::invalid_argument("DetectorModel: negative parameter");
}

void LaserModel::validate() const {
  if (!(rep_rate_hz > 0.0) || pulse_sigma_ps < 0.0 ||
      mean_detected_per_pulse < 0.0)
    throw std::invalid_argument("LaserModel: invalid parameter");
}

void Tpsf::validate() const {
  if (density.empty() || !(dt_ps > 0.0))
    throw std::invalid_argument("Tpsf: empty or bad grid");
  double mass = 0.0;
  for (double v : density) {
    if (v < 0.0 || !std::isfinite(v))
      throw std::invalid_argument("Tpsf: density must be nonnegative");
    mass += v;
  }
  if (!(mass > 0.0)) throw std::invalid_argument("Tpsf: zero mass");
}

Tpsf Tpsf::normalized() const {
  validate();
  Tpsf out = *this;
  double mass = 0.0;
  for (double v : density) mass += v * dt_ps;
  for (double& v : out.density) v /= mass;
  return out;
}

double Tpsf::mean_ps() const {
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double t = t0_ps + (i + 0.5) * dt_ps;
    m0 += density[i];
    m1 += density[i] * t;
  }
  return m1 / m0;
}

double Tpsf::variance_ps2() const {
  const double mu = mean_ps();
  double m0 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double t = t0_ps + (i + 0.5) * dt_ps;
    m0 += density[i];
    m2 += density[i] * (t - mu) * (t - mu);
  }
  // Width of the piecewise-constant segments adds dt^2/12.
  return m2 / m0 + dt_ps * dt_ps / 12.0;
}

double DtofHistogram::mean_ps() const {
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double t = (i + 0.5) * bin_width_ps;
    m0 += static_cast<double>(counts[i]);
    m1 += static_cast<double>(counts[i]) * t;
  }
  if (m0 == 0.0) throw std::runtime_error("DtofHistogram: empty");
  return m1 / m0;
}

double DtofHistogram::variance_ps2() const {
  const double mu = mean_ps();
  double m0 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double t = (i + 0.5) * bin_width_ps;
    m0 += static_cast<double>(counts[i]);
    m2 += static_cast<double>(counts[i]) * (t - mu) * (t - mu);
  }
  return m2 / m0;
}

double DtofHistogram::measured_rate_hz(const LaserModel& laser) const {
  const double span_s = static_cast<double>(total_pulses) / laser.rep_rate_hz;
  return span_s > 0.0 ? static_cast<double>(total_counts) / span_s : 0.0;
}

namespace {

// Inverse-CDF sampler over a piecewise-constant density.
class TpsfSampler {
 public:
  explicit TpsfSampler(const Tpsf& tpsf) : tpsf_(tpsf.normalized()) {
    cdf_.resize(tpsf_.density.size() + 1, 0.0);
    for (std::size_t i = 0; i < tpsf_.density.size(); ++i)
      cdf_[i + 1] = cdf_[i] + tpsf_.density[i] * tpsf_.dt_ps;
    const double total = cdf_.back();
    for (double& c : cdf_) c /= total;
  }

  double sample_ps(double u) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t i = std::min<std::size_t>(
        tpsf_.density.size() - 1,
        static_cast<std::size_t>(std::max<std::ptrdiff_t>(
            0, std::distance(cdf_.begin(), it) - 1)));
    const double c0 = cdf_[i], c1 = cdf_[i + 1];
    const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.5;
    return tpsf_.t0_ps + (i + frac) * tpsf_.dt_ps;
  }

 private:
  Tpsf tpsf_;
  std::vector<double> cdf_;
};

struct DeadTimeStage {
  double dead_ns = 0.0;
  bool paralyzable = false;
  double blocked_until_ns = -1e300;
  double last_arrival_ns = -1e300;

  bool accept(double t_ns) {
    if (dead_ns <= 0.0) return true;
    bool ok = t_ns >= blocked_until_ns;
    if (paralyzable) {
      // Any arrival extends the dead window.
      if (t_ns < last_arrival_ns + dead_ns) ok = false;
      last_arrival_ns = t_ns;
      if (!ok) return false;
      blocked_until_ns = t_ns + dead_ns;
      return true;
    }
    if (!ok) return false;
    blocked_until_ns = t_ns + dead_ns;
    return true;
  }
};

}  // namespace

AcquireResult acquire(const Tpsf& tpsf, const LaserModel& laser,
                      const DetectorModel& detector, std::uint64_t n_pulses,
                      std::uint64_t seed, const AcquireOptions& opt) {
  laser.validate();
  detector.validate();
  const TpsfSampler sampler(tpsf);
  const double period_ns = laser.period_ns();
  const double mu = laser.mean_detected_per_pulse;
  const double dark_per_period = detector.dark_rate_hz * period_ns * 1e-9;
  const double jitter_ps =
      std::sqrt(laser.pulse_sigma_ps * laser.pulse_sigma_ps +
                detector.jitter_sigma_ps * detector.jitter_sigma_ps);

  AcquireResult result;
  DtofHistogram& h = result.histogram;
  h.bin_width_ps = opt.bin_width_ps;
  const int n_bins =
      static_cast<int>(std::ceil(period_ns * 1e3 / opt.bin_width_ps));
  h.counts.assign(n_bins, 0);
  h.total_pulses = n_pulses;

  const std::uint64_t block =
      opt.block_pulses == 0 ? n_pulses : opt.block_pulses;
  const std::uint64_t n_blocks = (n_pulses + block - 1) / block;
  std::vector<std::vector<std::uint64_t>> partial(
      n_blocks, std::vector<std::uint64_t>(n_bins, 0));
  std::vector<std::vector<double>> events(opt.capture_events ? n_blocks : 0);

  parallel_for(static_cast<int>(n_blocks), opt.jobs, [&](int bi) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(bi) * block;
    const std::uint64_t p1 = std::min(n_pulses, p0 + block);
    DeadTimeStage det{detector.dead_time_ns, detector.paralyzable};
    DeadTimeStage tdc{detector.tdc_dead_time_ns, false};
    std::vector<double> arrivals;
    auto& bins = partial[bi];
    for (std::uint64_t p = p0; p < p1; ++p) {
      // One counter-based substream per pulse: draws are independent of
      // blocking and thread schedule.
      RandomStream rng(seed, p);
      arrivals.clear();
      const std::uint64_t k_signal = mu > 0.0 ? rng.poisson(mu) : 0;
      for (std::uint64_t k = 0; k < k_signal; ++k) {
        double t_ps = sampler.sample_ps(rng.uniform());
        if (jitter_ps > 0.0) t_ps += jitter_ps * rng.normal();
        // Fold into the pulse period.
        double t_ns = std::fmod(t_ps * 1e-3, period_ns);
        if (t_ns < 0.0) t_ns += period_ns;
        arrivals.push_back(t_ns);
      }
      const std::uint64_t k_dark =
          dark_per_period > 0.0 ? rng.poisson(dark_per_period) : 0;
      for (std::uint64_t k = 0; k < k_dark; ++k)
        arrivals.push_back(rng.uniform() * period_ns);
      std::sort(arrivals.begin(), arrivals.end());

      const double pulse_start_ns = static_cast<double>(p) * period_ns;
      bool recorded = false;
      for (double t_ns : arrivals) {
        const double abs_ns = pulse_start_ns + t_ns;
        if (!det.accept(abs_ns)) continue;
        if (!tdc.accept(abs_ns)) continue;
        if (opt.record == RecordMode::FirstPerPulse && recorded) continue;
        recorded = true;
        int bin = static_cast<int>(t_ns * 1e3 / opt.bin_width_ps);
        bin = std::min(bin, n_bins - 1);
        ++bins[bin];
        if (opt.capture_events) events[bi].push_back(abs_ns);
      }
    }
  });

  for (const auto& bins : partial)
    for (int b = 0; b < n_bins; ++b) h.counts[b] += bins[b];
  for (const auto& c : h.counts) h.total_counts += c;
  if (opt.capture_events)
    for (auto& ev : events)
      result.events_ns.insert(result.events_ns.end(), ev.begin(), ev.end());
  return result;
}

double effective_rate(double incident_rate_hz, const DetectorModel& detector) {
  if (incident_rate_hz < 0.0)
    throw std::invalid_argument("effective_rate: negative rate");
  const double tau_s = detector.dead_time_ns * 1e-9;
  if (detector.paralyzable)
    return incident_rate_hz * std::exp(-incident_rate_hz * tau_s);
  return incident_rate_hz / (1.0 + incident_rate_hz * tau_s);
}

std::vector<double> convolved_bin_probabilities(const Tpsf& tpsf,
                                                double sigma_ps,
                                                double bin_width_ps,
                                                int n_bins) {
  const Tpsf t = tpsf.normalized();
  std::vector<double> prob(n_bins, 0.0);
  // H(u) = int Phi(u) du = u Phi(u) + phi(u); the integral of the Gaussian
  // CDF over a source segment has a closed form in H.
  auto H = [](double u) {
    return u * normal_cdf(u) +
           std::exp(-0.5 * u * u) / std::sqrt(2.0 * 3.14159265358979323846);
  };
  for (std::size_t i = 0; i < t.density.size(); ++i) {
    const double mass = t.density[i] * t.dt_ps;
    if (mass == 0.0) continue;
    const double a = t.t0_ps + i * t.dt_ps;
    const double b = a + t.dt_ps;
    for (int bin = 0; bin < n_bins; ++bin) {
      const double c = bin * bin_width_ps;
      const double d = c + bin_width_ps;
      double overlap;
      if (sigma_ps <= 0.0) {
        overlap = std::max(0.0, std::min(b, d) - std::max(a, c)) / (b - a);
      } else {
        // P(c < T + sigma Z < d | T uniform in [a, b])
        auto cdf_avg = [&](double edge) {
          return (H((edge - a) / sigma_ps) - H((edge - b) / sigma_ps)) *
                 sigma_ps / (b - a);
        };
        overlap = cdf_avg(d) - cdf_avg(c);
      }
      prob[bin] += mass * overlap;
    }
  }
  return prob;
}

std::vector<SaturationPoint> saturation_curve(const Tpsf& tpsf,
                                              const LaserModel& laser,
                                              const DetectorModel& detector,
                                              const std::vector<double>& mu_grid,
                                              std::uint64_t n_pulses,
                                              std::uint64_t seed,
                                              const AcquireOptions& opt) {
  for (std::size_t i = 1; i < mu_grid.size(); ++i)
    if (!(mu_grid[i] > mu_grid[i - 1]))
      throw std::invalid_argument("saturation_curve: mu grid must ascend");
  std::vector<SaturationPoint> out;
  for (std::size_t i = 0; i < mu_grid.size(); ++i) {
    LaserModel l = laser;
    l.mean_detected_per_pulse = mu_grid[i];
    const AcquireResult r =
        acquire(tpsf, l, detector, n_pulses, seed + i, opt);
    SaturationPoint p;
    p.mu = mu_grid[i];
    p.counts_per_pulse =
        static_cast<double>(r.histogram.total_counts) / n_pulses;
    p.measured_rate_hz = r.histogram.measured_rate_hz(l);
    const double jitter_ps =
        std::sqrt(l.pulse_sigma_ps * l.pulse_sigma_ps +
                  detector.jitter_sigma_ps * detector.jitter_sigma_ps);
    const std::vector<double> expected = convolved_bin_probabilities(
        tpsf, jitter_ps, r.histogram.bin_width_ps, r.histogram.n_bins());
    std::vector<double> observed(r.histogram.counts.size());
    const double total = static_cast<double>(r.histogram.total_counts);
    for (std::size_t b = 0; b < observed.size(); ++b)
      observed[b] = total > 0.0 ? r.histogram.counts[b] / total : 0.0;
    p.distortion =
        earth_mover_distance(observed, expected, r.histogram.bin_width_ps);
    out.push_back(p);
  }
  return out;
}

std::string histogram_to_csv(const DtofHistogram& h) {
  std::ostringstream out;
  out << "bin_start_ps,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << fmt17(i * h.bin_width_ps) << ',' << h.counts[i] << '\n';
  return out.str();
}

}  // namespace dot
