#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace hedonic::stats {

/// Inclusive linear-interpolation sample quantile of sorted data
/// (position (n-1)p between order statistics). `sorted` must be non-empty.
double quantile_sorted(std::span<const double> sorted, double p);

/// Copies, sorts, and evaluates `quantile_sorted`.
double quantile(std::span<const double> values, double p);

double normal_cdf(double z);
/// Two-sided p-value of a standard normal statistic.
double normal_two_sided_p(double z);
/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);
/// Upper-tail probability of a chi-square statistic.
double chi_square_sf(double x, double df);

/// "***" below 0.01, "**" below 0.05, "*" below 0.1, otherwise empty.
std::string_view significance_stars(double p);

}  // namespace hedonic::stats
