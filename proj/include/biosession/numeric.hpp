#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace biosession {

double mean(std::span<const double> x);

/// Sample standard deviation (n-1 denominator); 0 for n < 2.
double sample_sd(std::span<const double> x);

/// Population standard deviation (n denominator).
double population_sd(std::span<const double> x);

double sample_variance(std::span<const double> x);

/// Central moment of order k about the mean.
double central_moment(std::span<const double> x, int k);

/// Moment skewness g1 = m3 / m2^(3/2).
double skewness(std::span<const double> x);

/// Fisher excess kurtosis g2 = m4 / m2^2 - 3 (normal -> 0).
double excess_kurtosis(std::span<const double> x);

/// Percentile with linear interpolation between order statistics,
/// q in [0, 100]. Matches the (n-1)*q/100 fractional-index convention.
double percentile(std::span<const double> x, double q);

/// Average ranks (1-based), ties get the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> x);

} // namespace biosession
