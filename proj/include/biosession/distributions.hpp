#pragma once

#include <span>

namespace biosession {

/// Standard normal CDF.
double normal_cdf(double z);

/// Standard normal survival function 1 - Phi(z).
double normal_sf(double z);

/// Inverse standard normal CDF (Wichura AS 241).
double normal_quantile(double p);

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);

/// Chi-square survival function with df degrees of freedom.
double chi2_sf(double x, double df);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-sided Student-t p-value for |t| with df degrees of freedom.
double students_t_two_sided_p(double t, double df);

struct ShapiroResult {
    double w;
    double p;
};

/// Shapiro-Wilk W and p via the Royston (1995) approximation, 3 <= n <= 5000.
ShapiroResult shapiro_wilk(std::span<const double> x);

} // namespace biosession
