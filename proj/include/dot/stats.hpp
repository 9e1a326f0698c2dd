#pragma once

#include <cstddef>
#include <vector>

namespace dot {

/// Lower regularized incomplete gamma P(a, x).
double lower_regularized_gamma(double a, double x);

/// Survival function of the chi-square distribution (1 - CDF).
double chi_square_sf(double chi2, double dof);

/// Pearson chi-square statistic against expected counts; bins with expected
/// count below `min_expected` are pooled into their neighbor.
struct ChiSquareTest {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};
ChiSquareTest chi_square_gof(const std::vector<double>& observed,
                             const std::vector<double>& expected,
                             double min_expected = 5.0);

double normal_cdf(double x);

/// Earth-mover distance between two discrete distributions on a common
/// uniform grid with spacing `dx` (L1 distance of CDFs times dx).
double earth_mover_distance(const std::vector<double>& p,
                            const std::vector<double>& q, double dx);

}  // namespace dot
