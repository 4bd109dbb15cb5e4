#include "biosession/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace biosession {

double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) return 0.0;
    const double m = mean(x);
    double acc = 0.0;
    for (double v : x) acc += (v - m) * (v - m);
    return acc / static_cast<double>(n - 1);
}

double sample_sd(std::span<const double> x) { return std::sqrt(sample_variance(x)); }

double population_sd(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n == 0) return 0.0;
    const double m = mean(x);
    double acc = 0.0;
    for (double v : x) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(n));
}

double central_moment(std::span<const double> x, int k) {
    if (x.empty()) return 0.0;
    const double m = mean(x);
    double acc = 0.0;
    for (double v : x) acc += std::pow(v - m, k);
    return acc / static_cast<double>(x.size());
}

double skewness(std::span<const double> x) {
    const double m2 = central_moment(x, 2);
    if (m2 <= 0.0) return 0.0;
    return central_moment(x, 3) / std::pow(m2, 1.5);
}

double excess_kurtosis(std::span<const double> x) {
    const double m2 = central_moment(x, 2);
    if (m2 <= 0.0) return 0.0;
    return central_moment(x, 4) / (m2 * m2) - 3.0;
}

double percentile(std::span<const double> x, double q) {
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    if (s.empty()) return 0.0;
    if (s.size() == 1) return s[0];
    const double pos = (static_cast<double>(s.size()) - 1.0) * q / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    if (lo == hi) return s[lo];
    const double frac = pos - static_cast<double>(lo);
    return s[lo] + frac * (s[hi] - s[lo]);
}

std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace biosession
