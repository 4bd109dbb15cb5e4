#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "biosession/error.hpp"

namespace biosession::stats {

enum class Method { Exact, NormalApprox };

const char* to_string(Method m);

struct TestResult {
    std::string statistic_name; // rho, r_pb, kappa, chi2, W, U
    double statistic = 0.0;
    double p_value = 1.0;
    int n = 0;              // total observations
    int n_a = 0, n_b = 0;   // per-group sizes where applicable
    Method method = Method::NormalApprox;
    std::optional<double> z; // normal deviate, reported alongside rank-sum statistics
};

// Exact-mode sample limits: enumeration state counts stay around or below 1e6.
inline constexpr int kSpearmanExactMaxN = 8;       // 8! = 40320 permutations
inline constexpr int kWilcoxonExactMaxN = 12;      // 2^12 sign assignments
inline constexpr int kMannWhitneyExactMaxN = 14;   // C(14,7) = 3432 labelings

/// Single pass: drop x with |x - mean| > 3 sd, mean/sd of the full input.
/// Returns the retained values and the removed indices.
std::pair<std::vector<double>, std::vector<std::size_t>>
remove_outliers(std::span<const double> x);

/// Spearman rank correlation; ties get average ranks. p by t-approximation,
/// exact permutation tail for n <= 8.
TestResult spearman(std::span<const double> x, std::span<const double> y);

/// Point-biserial correlation: Pearson with group coded 0/1; p via t with
/// n-2 degrees of freedom.
TestResult point_biserial(std::span<const int> group, std::span<const double> y);

/// Cohen's kappa over two categorical sequences.
TestResult cohens_kappa(std::span<const int> rater_a, std::span<const int> rater_b);

/// Friedman omnibus test on an n-blocks x k-treatments matrix, tie-corrected;
/// p from chi-square with k-1 df.
TestResult friedman(const Eigen::MatrixXd& block_matrix);

/// Wilcoxon signed-rank on paired samples. Zero differences dropped, tied
/// |d| averaged. Exact two-sided p = P(min rank sum <= observed) by full
/// sign-assignment enumeration when n <= 12, else normal approximation with
/// tie and continuity corrections. statistic = min rank sum W; z reported.
TestResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

/// Mann-Whitney U. statistic = min(U_a, U_b). Exact two-sided
/// p = P(min U <= observed) over all C(m+n, m) labelings when m+n <= 14,
/// else normal approximation with tie and continuity corrections.
TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct DistributionDiagnostics {
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    double shapiro_w = 1.0;
    double shapiro_p = 1.0;
};

DistributionDiagnostics diagnostics(std::span<const double> x);

struct VifReport {
    std::vector<double> vif;          // per original column; NaN once excluded
    std::vector<int> kept;            // original column indices, ascending
    std::vector<int> excluded;        // in exclusion order
    double threshold = 5.0;
};

/// VIF_j = 1/(1 - R^2_j) from regressing column j on the others with an
/// intercept; iteratively drops the max-VIF column until all <= threshold.
/// Rank-deficient columns report infinite VIF and drop first.
VifReport vif_filter(const Eigen::MatrixXd& design, double threshold = 5.0);

enum class Family { Gamma, Poisson };

const char* to_string(Family f);

struct GlmTerm {
    std::string name;
    double coef = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p = 1.0;
};

struct GlmFit {
    Family family = Family::Poisson;
    std::vector<GlmTerm> terms;     // [0] is the intercept
    double deviance = 0.0;
    double null_deviance = 0.0;
    double aic = 0.0;
    double pseudo_r2 = 0.0;         // 1 - deviance/null_deviance
    double dispersion = 1.0;        // Pearson estimate (Gamma); 1 for Poisson
    bool converged = false;
    int n = 0;
    int iterations = 0;
    std::vector<std::string> warnings;
};

/// IRLS with log link. X holds the predictors only (an intercept column is
/// added internally); the caller standardizes predictors - a warning is
/// recorded when a column is not ~(0, 1). Standard errors from the observed
/// information; Gamma dispersion by the Pearson method; Gamma AIC from the
/// dispersion-profiled likelihood. Throws NotConverged when step halving
/// cannot restore a finite, non-increasing deviance.
GlmFit fit_glm(std::span<const double> y, const Eigen::MatrixXd& X, Family family,
               const std::vector<std::string>& names = {}, int max_iter = 100,
               double tol = 1e-8);

} // namespace biosession::stats
