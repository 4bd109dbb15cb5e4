#include "biosession/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biosession/distributions.hpp"
#include "biosession/numeric.hpp"

namespace biosession::stats {

const char* to_string(Method m) { return m == Method::Exact ? "exact" : "normal_approx"; }

const char* to_string(Family f) { return f == Family::Gamma ? "gamma" : "poisson"; }

// ============================================================================
// Outliers, correlations, agreement
// ============================================================================

std::pair<std::vector<double>, std::vector<std::size_t>>
remove_outliers(std::span<const double> x) {
    if (x.size() < 3) throw Error(ErrorCode::TooShort, "remove_outliers needs n >= 3");
    const double m = mean(x);
    const double sd = sample_sd(x);
    std::vector<double> kept;
    std::vector<std::size_t> removed;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i] - m) > 3.0 * sd)
            removed.push_back(i);
        else
            kept.push_back(x[i]);
    }
    return {std::move(kept), std::move(removed)};
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw Error(ErrorCode::ConstantInput, "correlation of a constant input is undefined");
    return sxy / std::sqrt(sxx * syy);
}

double t_approx_p(double r, int n) {
    if (std::abs(r) >= 1.0) return 0.0;
    const double t = r * std::sqrt((n - 2) / (1.0 - r * r));
    return students_t_two_sided_p(t, n - 2);
}

} // namespace

TestResult spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw Error(ErrorCode::LengthMismatch, "spearman needs equal-length inputs");
    const int n = static_cast<int>(x.size());
    if (n < 4) throw Error(ErrorCode::TooShort, "spearman needs n >= 4");

    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double rho = pearson(rx, ry);

    TestResult res;
    res.statistic_name = "rho";
    res.statistic = rho;
    res.n = n;

    if (n <= kSpearmanExactMaxN) {
        // permutation distribution of |rho| over all distinct arrangements of
        // the y ranks; with ties each arrangement carries equal weight
        std::vector<double> perm = ry;
        std::sort(perm.begin(), perm.end());
        const double mx = mean(rx), my = mean(ry);
        double sxx = 0.0, syy = 0.0;
        for (int i = 0; i < n; ++i) {
            sxx += (rx[i] - mx) * (rx[i] - mx);
            syy += (ry[i] - my) * (ry[i] - my);
        }
        const double denom = std::sqrt(sxx * syy);
        const double target = std::abs(rho) - 1e-12;
        std::uint64_t hits = 0, total = 0;
        do {
            double sxy = 0.0;
            for (int i = 0; i < n; ++i) sxy += (rx[i] - mx) * (perm[i] - my);
            if (std::abs(sxy / denom) >= target) ++hits;
            ++total;
        } while (std::next_permutation(perm.begin(), perm.end()));
        res.p_value = static_cast<double>(hits) / static_cast<double>(total);
        res.method = Method::Exact;
    } else {
        res.p_value = t_approx_p(rho, n);
        res.method = Method::NormalApprox;
    }
    return res;
}

TestResult point_biserial(std::span<const int> group, std::span<const double> y) {
    if (group.size() != y.size())
        throw Error(ErrorCode::LengthMismatch, "point_biserial needs equal-length inputs");
    const int n = static_cast<int>(y.size());
    if (n < 4) throw Error(ErrorCode::TooShort, "point_biserial needs n >= 4");
    std::vector<double> g(group.size());
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < group.size(); ++i) {
        g[i] = group[i] ? 1.0 : 0.0;
        (group[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1)
        throw Error(ErrorCode::SingleGroup, "point_biserial needs both labels present");
    const double r = pearson(g, y);
    TestResult res;
    res.statistic_name = "r_pb";
    res.statistic = r;
    res.p_value = t_approx_p(r, n);
    res.n = n;
    res.n_a = static_cast<int>(std::count(group.begin(), group.end(), 0));
    res.n_b = n - res.n_a;
    res.method = Method::NormalApprox;
    return res;
}

TestResult cohens_kappa(std::span<const int> rater_a, std::span<const int> rater_b) {
    if (rater_a.size() != rater_b.size())
        throw Error(ErrorCode::LengthMismatch, "cohens_kappa needs equal-length sequences");
    const int n = static_cast<int>(rater_a.size());
    if (n == 0) throw Error(ErrorCode::TooShort, "cohens_kappa needs n >= 1");

    std::vector<int> cats(rater_a.begin(), rater_a.end());
    cats.insert(cats.end(), rater_b.begin(), rater_b.end());
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    const auto cat_index = [&](int c) {
        return static_cast<std::size_t>(
            std::lower_bound(cats.begin(), cats.end(), c) - cats.begin());
    };

    std::vector<double> pa(cats.size(), 0.0), pb(cats.size(), 0.0);
    double po = 0.0;
    for (int i = 0; i < n; ++i) {
        pa[cat_index(rater_a[i])] += 1.0;
        pb[cat_index(rater_b[i])] += 1.0;
        if (rater_a[i] == rater_b[i]) po += 1.0;
    }
    po /= n;
    double pe = 0.0;
    for (std::size_t c = 0; c < cats.size(); ++c) pe += (pa[c] / n) * (pb[c] / n);
    if (pe >= 1.0 - 1e-15)
        throw Error(ErrorCode::DegenerateAgreement,
                    "expected agreement is 1: kappa undefined");
    const double kappa = (po - pe) / (1.0 - pe);

    TestResult res;
    res.statistic_name = "kappa";
    res.statistic = kappa;
    res.n = n;
    res.method = Method::NormalApprox;
    // large-sample SE under independence
    const double se = std::sqrt(po * (1.0 - po) / (n * (1.0 - pe) * (1.0 - pe)));
    if (se > 0.0) {
        const double z = kappa / se;
        res.z = z;
        res.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
    } else {
        res.p_value = kappa >= 1.0 ? 0.0 : 1.0;
    }
    return res;
}

// ============================================================================
// Rank tests
// ============================================================================

TestResult friedman(const Eigen::MatrixXd& block_matrix) {
    const int n = static_cast<int>(block_matrix.rows());
    const int k = static_cast<int>(block_matrix.cols());
    if (n < 2 || k < 3)
        throw Error(ErrorCode::TooShort, "friedman needs >= 2 blocks and >= 3 treatments");
    if (!block_matrix.allFinite())
        throw Error(ErrorCode::MissingCells, "friedman does not accept missing cells");

    Eigen::VectorXd col_rank_sums = Eigen::VectorXd::Zero(k);
    double tie_term = 0.0; // sum over blocks of sum(t^3 - t)
    std::vector<double> row(k);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) row[j] = block_matrix(i, j);
        const std::vector<double> ranks = average_ranks(row);
        for (int j = 0; j < k; ++j) col_rank_sums[j] += ranks[j];
        std::vector<double> sorted(row);
        std::sort(sorted.begin(), sorted.end());
        std::size_t a = 0;
        while (a < sorted.size()) {
            std::size_t b = a;
            while (b + 1 < sorted.size() && sorted[b + 1] == sorted[a]) ++b;
            const double t = static_cast<double>(b - a + 1);
            tie_term += t * t * t - t;
            a = b + 1;
        }
    }

    const double ssbn = col_rank_sums.squaredNorm();
    const double correction =
        1.0 - tie_term / (static_cast<double>(n) * k * (static_cast<double>(k) * k - 1.0));
    TestResult res;
    res.statistic_name = "chi2";
    res.n = n;
    if (correction <= 1e-15) {
        // every block fully tied: no evidence of treatment differences
        res.statistic = 0.0;
        res.p_value = 1.0;
    } else {
        const double raw =
            12.0 / (static_cast<double>(n) * k * (k + 1.0)) * ssbn - 3.0 * n * (k + 1.0);
        res.statistic = std::max(0.0, raw) / correction;
        res.p_value = chi2_sf(res.statistic, k - 1.0);
    }
    res.method = Method::NormalApprox;
    return res;
}

namespace {

std::vector<std::int64_t> doubled_ranks(const std::vector<double>& ranks) {
    std::vector<std::int64_t> out(ranks.size());
    for (std::size_t i = 0; i < ranks.size(); ++i)
        out[i] = std::llround(2.0 * ranks[i]);
    return out;
}

} // namespace

TestResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw Error(ErrorCode::LengthMismatch, "wilcoxon needs paired samples");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double di = x[i] - y[i];
        if (di != 0.0) d.push_back(di);
    }
    if (d.empty())
        throw Error(ErrorCode::AllZeroDiffs, "all paired differences are zero");
    const int n = static_cast<int>(d.size());
    if (n < 5)
        throw Error(ErrorCode::TooShort, "wilcoxon needs >= 5 nonzero differences");

    std::vector<double> absd(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) absd[i] = std::abs(d[i]);
    const std::vector<double> ranks = average_ranks(absd);
    double w_plus = 0.0;
    for (int i = 0; i < n; ++i)
        if (d[i] > 0.0) w_plus += ranks[i];
    const double total = static_cast<double>(n) * (n + 1) / 2.0;
    const double w = std::min(w_plus, total - w_plus);

    // normal deviate with tie correction and continuity correction toward the mean
    const double mu = total / 2.0;
    double tie_term = 0.0;
    {
        std::vector<double> sorted(absd);
        std::sort(sorted.begin(), sorted.end());
        std::size_t a = 0;
        while (a < sorted.size()) {
            std::size_t b = a;
            while (b + 1 < sorted.size() && sorted[b + 1] == sorted[a]) ++b;
            const double t = static_cast<double>(b - a + 1);
            tie_term += t * t * t - t;
            a = b + 1;
        }
    }
    const double var =
        static_cast<double>(n) * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term / 48.0;
    const double z = (w - mu + 0.5) / std::sqrt(var);

    TestResult res;
    res.statistic_name = "W";
    res.statistic = w;
    res.n = n;
    res.z = z;

    if (n <= kWilcoxonExactMaxN) {
        // count sign assignments with min rank sum <= observed, via subset-sum
        // DP over doubled ranks (half ranks stay integral)
        const std::vector<std::int64_t> r2 = doubled_ranks(ranks);
        const std::int64_t total2 = std::accumulate(r2.begin(), r2.end(), std::int64_t{0});
        std::vector<std::uint64_t> dp(static_cast<std::size_t>(total2) + 1, 0);
        dp[0] = 1;
        for (const std::int64_t r : r2)
            for (std::int64_t s = total2; s >= r; --s) dp[s] += dp[s - r];
        const auto w2 = static_cast<std::int64_t>(std::llround(2.0 * w));
        std::uint64_t hits = 0;
        for (std::int64_t s = 0; s <= total2; ++s)
            if (std::min(s, total2 - s) <= w2) hits += dp[s];
        res.p_value = static_cast<double>(hits) / std::pow(2.0, n);
        res.method = Method::Exact;
    } else {
        res.p_value = std::min(1.0, 2.0 * normal_cdf(z));
        res.method = Method::NormalApprox;
    }
    return res;
}

TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty())
        throw Error(ErrorCode::EmptyGroup, "mann_whitney_u needs two non-empty groups");
    const int m = static_cast<int>(a.size());
    const int n = static_cast<int>(b.size());
    if (m < 3 || n < 3)
        throw Error(ErrorCode::TooShort, "mann_whitney_u needs both groups >= 3");

    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::vector<double> ranks = average_ranks(pooled);
    double ra = 0.0;
    for (int i = 0; i < m; ++i) ra += ranks[i];
    const double ua = ra - static_cast<double>(m) * (m + 1) / 2.0;
    const double mn = static_cast<double>(m) * n;
    const double u = std::min(ua, mn - ua);

    const int N = m + n;
    double tie_term = 0.0;
    {
        std::vector<double> sorted(pooled);
        std::sort(sorted.begin(), sorted.end());
        std::size_t i = 0;
        while (i < sorted.size()) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
    }
    const double var = mn / 12.0 * ((N + 1.0) - tie_term / (static_cast<double>(N) * (N - 1.0)));

    TestResult res;
    res.statistic_name = "U";
    res.statistic = u;
    res.n = N;
    res.n_a = m;
    res.n_b = n;

    if (var > 0.0) res.z = (u - mn / 2.0 + 0.5) / std::sqrt(var);

    if (N <= kMannWhitneyExactMaxN) {
        // count size-m subsets by doubled rank sum
        const std::vector<std::int64_t> r2 = doubled_ranks(ranks);
        const std::int64_t total2 = std::accumulate(r2.begin(), r2.end(), std::int64_t{0});
        std::vector<std::vector<std::uint64_t>> dp(
            static_cast<std::size_t>(m) + 1,
            std::vector<std::uint64_t>(static_cast<std::size_t>(total2) + 1, 0));
        dp[0][0] = 1;
        for (const std::int64_t r : r2)
            for (int c = m - 1; c >= 0; --c)
                for (std::int64_t s = total2 - r; s >= 0; --s)
                    if (dp[c][s]) dp[c + 1][s + r] += dp[c][s];
        const std::int64_t m2 = static_cast<std::int64_t>(m) * (m + 1);
        const auto u2 = static_cast<std::int64_t>(std::llround(2.0 * u));
        std::uint64_t hits = 0, total_count = 0;
        for (std::int64_t s = 0; s <= total2; ++s) {
            if (!dp[m][s]) continue;
            total_count += dp[m][s];
            const std::int64_t ua2 = s - m2; // doubled U_a
            const std::int64_t ub2 = 2 * static_cast<std::int64_t>(mn) - ua2;
            if (std::min(ua2, ub2) <= u2) hits += dp[m][s];
        }
        res.p_value = static_cast<double>(hits) / static_cast<double>(total_count);
        res.method = Method::Exact;
    } else {
        res.p_value = var > 0.0 ? std::min(1.0, 2.0 * normal_cdf(*res.z)) : 1.0;
        res.method = Method::NormalApprox;
    }
    return res;
}

// ============================================================================
// Diagnostics, multicollinearity
// ============================================================================

DistributionDiagnostics diagnostics(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    if (n < 3 || n > 5000)
        throw Error(ErrorCode::OutOfRange, "diagnostics supports 3 <= n <= 5000");
    DistributionDiagnostics d;
    d.skewness = skewness(x);
    d.excess_kurtosis = excess_kurtosis(x);
    const ShapiroResult sw = shapiro_wilk(x);
    d.shapiro_w = sw.w;
    d.shapiro_p = sw.p;
    return d;
}

namespace {

// R^2 of column j regressed on the remaining active columns plus intercept.
double column_r2(const Eigen::MatrixXd& X, const std::vector<int>& active, int j) {
    const auto n = X.rows();
    Eigen::MatrixXd design(n, static_cast<Eigen::Index>(active.size())); // intercept + others
    Eigen::Index c = 0;
    design.col(c++) = Eigen::VectorXd::Ones(n);
    for (const int col : active)
        if (col != j) design.col(c++) = X.col(col);
    const Eigen::VectorXd target = X.col(j);
    const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(target);
    const double ssr = (target - design * beta).squaredNorm();
    const double sst = (target.array() - target.mean()).square().sum();
    if (sst <= 0.0) return 1.0; // constant column: perfectly collinear with intercept
    return 1.0 - ssr / sst;
}

} // namespace

VifReport vif_filter(const Eigen::MatrixXd& design, double threshold) {
    const int p = static_cast<int>(design.cols());
    if (p < 2) throw Error(ErrorCode::TooShort, "vif_filter needs >= 2 columns");
    if (design.rows() <= design.cols())
        throw Error(ErrorCode::RankDeficient, "vif_filter needs n > p");

    VifReport report;
    report.threshold = threshold;
    report.vif.assign(p, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> active(p);
    std::iota(active.begin(), active.end(), 0);

    while (active.size() >= 2) {
        std::vector<double> vifs(active.size());
        for (std::size_t i = 0; i < active.size(); ++i) {
            const double r2 = column_r2(design, active, active[i]);
            vifs[i] = r2 >= 1.0 - 1e-12 ? std::numeric_limits<double>::infinity()
                                        : 1.0 / (1.0 - r2);
        }
        std::size_t worst = 0;
        for (std::size_t i = 1; i < vifs.size(); ++i)
            if (vifs[i] > vifs[worst]) worst = i;
        if (vifs[worst] > threshold) {
            report.vif[active[worst]] = vifs[worst];
            report.excluded.push_back(active[worst]);
            active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst));
        } else {
            for (std::size_t i = 0; i < active.size(); ++i)
                report.vif[active[i]] = vifs[i];
            break;
        }
    }
    if (active.size() == 1) report.vif[active[0]] = 1.0; // lone predictor
    report.kept = active;
    return report;
}

// ============================================================================
// GLM (IRLS, log link)
// ============================================================================

namespace {

double deviance_of(std::span<const double> y, const Eigen::VectorXd& mu, Family family) {
    double dev = 0.0;
    if (family == Family::Poisson) {
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double m = mu[static_cast<Eigen::Index>(i)];
            const double term = y[i] > 0.0 ? y[i] * std::log(y[i] / m) : 0.0;
            dev += term - (y[i] - m);
        }
    } else {
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double m = mu[static_cast<Eigen::Index>(i)];
            dev += -std::log(y[i] / m) + (y[i] - m) / m;
        }
    }
    return 2.0 * dev;
}

double log_likelihood_poisson(std::span<const double> y, const Eigen::VectorXd& mu) {
    double ll = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double m = mu[static_cast<Eigen::Index>(i)];
        ll += y[i] * std::log(m) - m - std::lgamma(y[i] + 1.0);
    }
    return ll;
}

double log_likelihood_gamma(std::span<const double> y, const Eigen::VectorXd& mu,
                            double dispersion) {
    const double shape = 1.0 / dispersion;
    double ll = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double scale = mu[static_cast<Eigen::Index>(i)] * dispersion;
        ll += (shape - 1.0) * std::log(y[i]) - y[i] / scale - shape * std::log(scale) -
              std::lgamma(shape);
    }
    return ll;
}

} // namespace

GlmFit fit_glm(std::span<const double> y, const Eigen::MatrixXd& X, Family family,
               const std::vector<std::string>& names, int max_iter, double tol) {
    const auto n = static_cast<Eigen::Index>(y.size());
    const Eigen::Index p = X.cols();
    if (X.rows() != n)
        throw Error(ErrorCode::LengthMismatch, "fit_glm: y and X row counts differ");
    if (n <= p + 1)
        throw Error(ErrorCode::TooShort, "fit_glm needs n > p + 1");
    for (double v : y) {
        if (family == Family::Gamma && !(v > 0.0))
            throw Error(ErrorCode::OutOfRange, "Gamma family needs y > 0");
        if (family == Family::Poisson && v < 0.0)
            throw Error(ErrorCode::OutOfRange, "Poisson family needs y >= 0");
    }

    GlmFit fit;
    fit.family = family;
    fit.n = static_cast<int>(n);

    for (Eigen::Index j = 0; j < p; ++j) {
        const double cm = X.col(j).mean();
        const double csd = std::sqrt((X.col(j).array() - cm).square().sum() /
                                     static_cast<double>(n - 1));
        if (std::abs(cm) > 1e-6 || std::abs(csd - 1.0) > 1e-6) {
            fit.warnings.push_back("predictor " + std::to_string(j) +
                                   " is not standardized (mean=" + std::to_string(cm) +
                                   ", sd=" + std::to_string(csd) + ")");
        }
    }

    const double ybar = mean(y);
    if (!(ybar > 0.0))
        throw Error(ErrorCode::OutOfRange, "fit_glm needs mean(y) > 0 with a log link");
    fit.null_deviance = deviance_of(y, Eigen::VectorXd::Constant(n, ybar), family);

    Eigen::MatrixXd design(n, p + 1);
    design.col(0) = Eigen::VectorXd::Ones(n);
    if (p > 0) design.rightCols(p) = X;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
    Eigen::VectorXd mu(n), eta(n);

    if (p == 0) {
        // intercept-only closed form: mu = mean(y) for both families
        beta[0] = std::log(ybar);
        mu.setConstant(ybar);
        fit.deviance = fit.null_deviance;
        fit.converged = true;
        fit.iterations = 0;
    } else {
        for (Eigen::Index i = 0; i < n; ++i)
            mu[i] = std::max((y[static_cast<std::size_t>(i)] + ybar) / 2.0, 1e-8);
        eta = mu.array().log();
        double dev = deviance_of(y, mu, family);
        bool converged = false;
        int iter = 0;
        for (; iter < max_iter; ++iter) {
            Eigen::VectorXd w(n), zvec(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double m = mu[i];
                w[i] = family == Family::Poisson ? m : 1.0;
                zvec[i] = eta[i] + (y[static_cast<std::size_t>(i)] - m) / m;
            }
            const Eigen::ArrayXd sw = w.array().sqrt();
            const Eigen::MatrixXd wd = design.array().colwise() * sw;
            const Eigen::VectorXd wz = (zvec.array() * sw).matrix();
            Eigen::VectorXd beta_new = wd.colPivHouseholderQr().solve(wz);

            Eigen::VectorXd eta_new = design * beta_new;
            Eigen::VectorXd mu_new = eta_new.array().exp();
            double dev_new = deviance_of(y, mu_new, family);
            int halvings = 0;
            while ((!std::isfinite(dev_new) || dev_new > dev + 1e-10) && halvings < 40) {
                beta_new = 0.5 * (beta_new + beta);
                eta_new = design * beta_new;
                mu_new = eta_new.array().exp();
                dev_new = deviance_of(y, mu_new, family);
                ++halvings;
            }
            if (!std::isfinite(dev_new) || dev_new > dev + 1e-8)
                throw Error(ErrorCode::NotConverged,
                            "step halving failed at iteration " + std::to_string(iter) +
                                " (deviance " + std::to_string(dev) + ")");
            beta = beta_new;
            eta = eta_new;
            mu = mu_new;
            const double delta = std::abs(dev - dev_new) / (0.1 + std::abs(dev_new));
            dev = dev_new;
            if (delta < tol) {
                converged = true;
                ++iter;
                break;
            }
        }
        fit.deviance = dev;
        fit.converged = converged;
        fit.iterations = iter;
    }

    fit.pseudo_r2 = fit.null_deviance > 0.0 ? 1.0 - fit.deviance / fit.null_deviance : 0.0;

    // Pearson dispersion (Gamma); fixed at 1 for Poisson
    const auto dof = static_cast<double>(n - (p + 1));
    if (family == Family::Gamma) {
        double pearson_sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = (y[static_cast<std::size_t>(i)] - mu[i]) / mu[i];
            pearson_sum += r * r;
        }
        fit.dispersion = pearson_sum / dof;
    } else {
        fit.dispersion = 1.0;
    }

    // observed information: Poisson X' diag(mu) X; Gamma X' diag(y/mu) X / phi
    Eigen::VectorXd info_w(n);
    for (Eigen::Index i = 0; i < n; ++i)
        info_w[i] = family == Family::Poisson
                        ? mu[i]
                        : y[static_cast<std::size_t>(i)] / (mu[i] * fit.dispersion);
    const Eigen::MatrixXd info =
        design.transpose() * (design.array().colwise() * info_w.array()).matrix();
    const Eigen::MatrixXd cov = info.ldlt().solve(
        Eigen::MatrixXd::Identity(p + 1, p + 1));

    fit.terms.resize(static_cast<std::size_t>(p) + 1);
    for (Eigen::Index j = 0; j <= p; ++j) {
        GlmTerm& term = fit.terms[static_cast<std::size_t>(j)];
        if (j == 0)
            term.name = "intercept";
        else if (static_cast<std::size_t>(j - 1) < names.size())
            term.name = names[static_cast<std::size_t>(j - 1)];
        else
            term.name = "x" + std::to_string(j);
        term.coef = beta[j];
        term.se = std::sqrt(std::max(0.0, cov(j, j)));
        term.z = term.se > 0.0 ? term.coef / term.se : 0.0;
        term.p = term.se > 0.0 ? std::min(1.0, 2.0 * normal_sf(std::abs(term.z))) : 1.0;
    }

    if (family == Family::Poisson) {
        fit.aic = -2.0 * log_likelihood_poisson(y, mu) + 2.0 * static_cast<double>(p + 1);
    } else {
        const double disp_dev = fit.deviance / static_cast<double>(n);
        fit.aic = -2.0 * log_likelihood_gamma(y, mu, disp_dev) +
                  2.0 * (static_cast<double>(p + 1) + 1.0);
    }
    return fit;
}

} // namespace biosession::stats
