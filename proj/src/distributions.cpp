#include "biosession/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "biosession/error.hpp"

namespace biosession {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Wichura's algorithm AS 241 (PPND16).
double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw Error(ErrorCode::OutOfRange, "normal_quantile needs p in (0,1)");
    const double q = p - 0.5;
    double r;
    if (std::abs(q) <= 0.425) {
        r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                     6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                   1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                 1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                     3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                   5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                 4.2313330701600911252e1) * r + 1.0);
    }
    r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return q < 0.0 ? -val : val;
}

// ---------------------------------------------------------------------------
// Incomplete gamma / beta via series + continued fractions (Lentz).
// ---------------------------------------------------------------------------

namespace {

double gamma_p_series(double a, double x) {
    double sum = 1.0 / a;
    double term = sum;
    for (int n = 1; n < 500; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace

double regularized_gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0)
        throw Error(ErrorCode::OutOfRange, "regularized_gamma_p domain");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return gamma_p_series(a, x);
    return 1.0 - gamma_q_cf(a, x);
}

double chi2_sf(double x, double df) {
    if (x <= 0.0) return 1.0;
    return 1.0 - regularized_gamma_p(df / 2.0, x / 2.0);
}

namespace {

double beta_cf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return h;
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
        b * std::log(1.0 - x);
    if (x < (a + 1.0) / (a + b + 2.0))
        return std::exp(ln_front) * beta_cf(a, b, x) / a;
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          b * std::log(1.0 - x) + a * std::log(x)) *
                     beta_cf(b, a, 1.0 - x) / b;
}

double students_t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    const double x = df / (df + t * t);
    return incomplete_beta(df / 2.0, 0.5, x);
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk, Royston (1995) / AS R94.
// ---------------------------------------------------------------------------

namespace {

double poly(const double* c, int n, double x) {
    double r = c[0];
    double xp = 1.0;
    for (int i = 1; i < n; ++i) {
        xp *= x;
        r += c[i] * xp;
    }
    return r;
}

} // namespace

ShapiroResult shapiro_wilk(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    if (n < 3 || n > 5000)
        throw Error(ErrorCode::OutOfRange, "shapiro_wilk supports 3 <= n <= 5000");

    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    if (s.back() - s.front() <= 0.0)
        throw Error(ErrorCode::OutOfRange, "shapiro_wilk needs non-constant data");

    // expected normal order statistics (Blom approximation), normalized
    std::vector<double> m(n);
    double ssumm2 = 0.0;
    for (int i = 0; i < n; ++i) {
        m[i] = normal_quantile((i + 1 - 0.375) / (n + 0.25));
        ssumm2 += m[i] * m[i];
    }
    const double rsn = 1.0 / std::sqrt(static_cast<double>(n));

    std::vector<double> a(n);
    if (n == 3) {
        a[0] = -std::sqrt(0.5);
        a[1] = 0.0;
        a[2] = std::sqrt(0.5);
    } else {
        static const double c1[6] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
        static const double c2[6] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
        const double an25 = std::sqrt(ssumm2);
        double a_n = m[n - 1] / an25 + poly(c1, 6, rsn);
        double a_n1 = 0.0;
        int offset = 1;
        double phi;
        if (n > 5) {
            offset = 2;
            a_n1 = m[n - 2] / an25 + poly(c2, 6, rsn);
            phi = (ssumm2 - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2]) /
                  (1.0 - 2.0 * a_n * a_n - 2.0 * a_n1 * a_n1);
        } else {
            phi = (ssumm2 - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * a_n * a_n);
        }
        const double sqrt_phi = std::sqrt(phi);
        for (int i = offset; i < n - offset; ++i) a[i] = m[i] / sqrt_phi;
        a[n - 1] = a_n;
        a[0] = -a_n;
        if (n > 5) {
            a[n - 2] = a_n1;
            a[1] = -a_n1;
        }
    }

    double xm = 0.0;
    for (double v : s) xm += v;
    xm /= n;
    double ssq = 0.0, num = 0.0;
    for (int i = 0; i < n; ++i) {
        ssq += (s[i] - xm) * (s[i] - xm);
        num += a[i] * s[i];
    }
    double w = num * num / ssq;
    if (w > 1.0) w = 1.0;

    // p-value via Royston's normalizing transforms
    double p;
    if (n == 3) {
        const double pi6 = 1.90985931710274;   // 6/pi
        const double stqr = 1.04719755119660;  // asin(sqrt(3/4))
        p = pi6 * (std::asin(std::sqrt(w)) - stqr);
        p = std::clamp(p, 0.0, 1.0);
    } else {
        const double lnn = std::log(static_cast<double>(n));
        double mu, sigma, z;
        if (n <= 11) {
            const double g[2] = {-2.273, 0.459};
            const double cmu[4] = {0.5440, -0.39978, 0.025054, -6.714e-4};
            const double csig[4] = {1.3822, -0.77857, 0.062767, -0.0020322};
            const double gn = poly(g, 2, static_cast<double>(n));
            mu = poly(cmu, 4, static_cast<double>(n));
            sigma = std::exp(poly(csig, 4, static_cast<double>(n)));
            const double arg = gn - std::log1p(-w);
            z = arg > 0.0 ? (-std::log(arg) - mu) / sigma : 8.0; // W far in the tail
        } else {
            const double cmu[4] = {-1.5861, -0.31082, -0.083751, 0.0038915};
            const double csig[3] = {-0.4803, -0.082676, 0.0030302};
            mu = poly(cmu, 4, lnn);
            sigma = std::exp(poly(csig, 3, lnn));
            z = (std::log1p(-w) - mu) / sigma;
        }
        p = normal_sf(z);
    }
    return {w, p};
}

} // namespace biosession
