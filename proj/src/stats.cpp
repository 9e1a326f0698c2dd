#include "dot/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dot {

namespace {

// Series expansion of P(a, x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a, x), valid for x >= a + 1 (modified Lentz).
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double lower_regularized_gamma(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::invalid_argument("invalid gamma args");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_cf(a, x);
}

double chi_square_sf(double chi2, double dof) {
  if (chi2 <= 0.0) return 1.0;
  return 1.0 - lower_regularized_gamma(0.5 * dof, 0.5 * chi2);
}

ChiSquareTest chi_square_gof(const std::vector<double>& observed,
                             const std::vector<double>& expected,
                             double min_expected) {
  if (observed.size() != expected.size() || observed.empty())
    throw std::invalid_argument("chi_square_gof: size mismatch");
  // Pool sparse bins left to right so every cell meets the expected-count
  // floor; the last pooled cell absorbs any remainder.
  std::vector<double> obs_p, exp_p;
  double o_acc = 0.0, e_acc = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    o_acc += observed[i];
    e_acc += expected[i];
    if (e_acc >= min_expected) {
      obs_p.push_back(o_acc);
      exp_p.push_back(e_acc);
      o_acc = e_acc = 0.0;
    }
  }
  if (e_acc > 0.0 || o_acc > 0.0) {
    if (!exp_p.empty()) {
      obs_p.back() += o_acc;
      exp_p.back() += e_acc;
    } else {
      obs_p.push_back(o_acc);
      exp_p.push_back(e_acc);
    }
  }
  ChiSquareTest t;
  if (exp_p.size() < 2) {
    t.dof = 0.0;
    t.p_value = 1.0;
    return t;
  }
  for (std::size_t i = 0; i < exp_p.size(); ++i) {
    if (exp_p[i] <= 0.0) continue;
    const double d = obs_p[i] - exp_p[i];
    t.statistic += d * d / exp_p[i];
  }
  t.dof = static_cast<double>(exp_p.size() - 1);
  t.p_value = chi_square_sf(t.statistic, t.dof);
  return t;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double earth_mover_distance(const std::vector<double>& p,
                            const std::vector<double>& q, double dx) {
  if (p.size() != q.size()) throw std::invalid_argument("emd: size mismatch");
  double cum = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i] - q[i];
    total += std::abs(cum);
  }
  return total * dx;
}

}  // namespace dot
