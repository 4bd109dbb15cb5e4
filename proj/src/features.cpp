#include "biosession/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include <Eigen/Dense>

#include "biosession/error.hpp"
#include "biosession/numeric.hpp"

namespace biosession::features {

// ============================================================================
// Descriptive + HRV time domain
// ============================================================================

DescriptiveStats descriptive(std::span<const double> series) {
    if (series.size() < 2)
        throw Error(ErrorCode::TooShort, "descriptive needs n >= 2");
    DescriptiveStats d;
    d.mean = mean(series);
    d.sd = sample_sd(series);
    d.kurtosis = excess_kurtosis(series);
    if (std::abs(d.mean) < 1e-12) {
        d.cv_defined = false;
        d.cv = 0.0;
    } else {
        d.cv = d.sd / d.mean;
    }
    return d;
}

HrvTime hrv_time(std::span<const double> rr_ms) {
    const std::size_t n = rr_ms.size();
    if (n < 3) throw Error(ErrorCode::TooShort, "hrv_time needs n >= 3");
    std::vector<double> d(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) d[i] = rr_ms[i + 1] - rr_ms[i];

    HrvTime h;
    h.sdnn = sample_sd(rr_ms);
    h.sdsd = population_sd(d);
    double sq = 0.0;
    int over50 = 0;
    for (const double v : d) {
        sq += v * v;
        if (std::abs(v) > 50.0) ++over50;
    }
    h.rmssd = std::sqrt(sq / static_cast<double>(d.size()));
    h.pnn50 = 100.0 * static_cast<double>(over50) / static_cast<double>(d.size());
    return h;
}

// ============================================================================
// Welch PSD
// ============================================================================

namespace {

using cd = std::complex<double>;

// iterative radix-2; n must be a power of two
void fft_pow2(std::vector<cd>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const cd wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cd u = a[i + k];
                const cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// |X_k|^2 for k = 0..n/2 of a real signal; direct DFT off powers of two
// (segment lengths are small at desk scale)
std::vector<double> real_dft_power(const std::vector<double>& x) {
    const std::size_t n = x.size();
    const std::size_t half = n / 2;
    std::vector<double> power(half + 1);
    if ((n & (n - 1)) == 0) {
        std::vector<cd> a(x.begin(), x.end());
        fft_pow2(a);
        for (std::size_t k = 0; k <= half; ++k) power[k] = std::norm(a[k]);
        return power;
    }
    for (std::size_t k = 0; k <= half; ++k) {
        double re = 0.0, im = 0.0;
        const double w = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            re += x[i] * std::cos(w * static_cast<double>(i));
            im += x[i] * std::sin(w * static_cast<double>(i));
        }
        power[k] = re * re + im * im;
    }
    return power;
}

} // namespace

Spectrum welch_psd(std::span<const double> x, double fs, int seg_len, double overlap) {
    const int n = static_cast<int>(x.size());
    if (n < 64) throw Error(ErrorCode::TooShort, "welch_psd needs n >= 64");

    Spectrum spec;
    if (n < seg_len) {
        seg_len = n; // single full-length segment
        spec.short_segment = true;
    }
    spec.seg_len = seg_len;
    int step = static_cast<int>(std::lround(seg_len * (1.0 - overlap)));
    step = std::max(step, 1);

    // periodic Hann taper
    std::vector<double> window(seg_len);
    double win_sq = 0.0;
    for (int i = 0; i < seg_len; ++i) {
        window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / static_cast<double>(seg_len)));
        win_sq += window[i] * window[i];
    }

    const int half = seg_len / 2;
    std::vector<double> acc(half + 1, 0.0);
    int n_segments = 0;
    std::vector<double> seg(seg_len);
    for (int start = 0; start + seg_len <= n; start += step) {
        double seg_mean = 0.0;
        for (int i = 0; i < seg_len; ++i) seg_mean += x[start + i];
        seg_mean /= seg_len;
        for (int i = 0; i < seg_len; ++i) seg[i] = (x[start + i] - seg_mean) * window[i];
        const std::vector<double> power = real_dft_power(seg);
        for (int k = 0; k <= half; ++k) acc[k] += power[k];
        ++n_segments;
    }

    // one-sided density: Sum(density * df) recovers the variance
    const double scale = 1.0 / (fs * win_sq * n_segments);
    spec.freqs.resize(half + 1);
    spec.density.resize(half + 1);
    for (int k = 0; k <= half; ++k) {
        spec.freqs[k] = static_cast<double>(k) * fs / static_cast<double>(seg_len);
        double d = acc[k] * scale;
        const bool is_nyquist = seg_len % 2 == 0 && k == half;
        if (k != 0 && !is_nyquist) d *= 2.0;
        spec.density[k] = d;
    }
    return spec;
}

SpectralPowers band_powers(const Spectrum& spectrum) {
    if (spectrum.freqs.empty())
        throw Error(ErrorCode::TooShort, "band_powers of empty spectrum");
    SpectralPowers p;
    const double df = spectrum.freqs.size() > 1 ? spectrum.freqs[1] - spectrum.freqs[0] : 0.0;
    for (std::size_t k = 0; k < spectrum.freqs.size(); ++k) {
        const double f = spectrum.freqs[k];
        const double mass = spectrum.density[k] * df;
        if (f > 0.0) p.tp += mass;
        if (f >= kLfLowHz && f < kLfHighHz) p.lf += mass;
        if (f >= kLfHighHz && f < kHfHighHz) p.hf += mass;
    }
    if (p.hf < 1e-12) {
        p.lf_hf_defined = false;
        p.lf_hf = 0.0;
    } else {
        p.lf_hf = p.lf / p.hf;
    }
    return p;
}

// ============================================================================
// Savitzky-Golay
// ============================================================================

namespace {

// least-squares projection weights: value of the fitted polynomial at
// position `at` given window sample positions `pos` (both in samples)
Eigen::VectorXd savgol_weights(const std::vector<double>& pos, double at, int order) {
    const int m = static_cast<int>(pos.size());
    const double lo = pos.front(), hi = pos.back();
    const double mid = 0.5 * (lo + hi), halfspan = std::max(0.5 * (hi - lo), 1.0);
    Eigen::MatrixXd V(m, order + 1);
    for (int i = 0; i < m; ++i) {
        const double t = (pos[i] - mid) / halfspan; // scaled for conditioning
        double pw = 1.0;
        for (int j = 0; j <= order; ++j) {
            V(i, j) = pw;
            pw *= t;
        }
    }
    Eigen::VectorXd e(order + 1);
    {
        const double t = (at - mid) / halfspan;
        double pw = 1.0;
        for (int j = 0; j <= order; ++j) {
            e[j] = pw;
            pw *= t;
        }
    }
    // weights w with w'x = e' (V'V)^-1 V' x
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(V)
                                  .householderQ() *
                              Eigen::MatrixXd::Identity(m, order + 1);
    const Eigen::MatrixXd R = Q.transpose() * V;
    const Eigen::VectorXd c = R.transpose().triangularView<Eigen::Lower>().solve(e);
    return Q * c;
}

} // namespace

std::vector<double> savgol(std::span<const double> series, int window_s, int poly_order) {
    int window = window_s;
    if (window % 2 == 0) ++window; // forced odd
    if (window <= poly_order)
        throw Error(ErrorCode::WindowTooSmall,
                    "savgol window must exceed the polynomial order");
    const int n = static_cast<int>(series.size());
    if (n <= poly_order)
        throw Error(ErrorCode::TooShort, "savgol needs more samples than the order");

    const int half = window / 2;
    std::vector<double> out(n);

    // interior: fixed symmetric window, one weight vector
    Eigen::VectorXd interior;
    if (n >= window) {
        std::vector<double> pos(window);
        std::iota(pos.begin(), pos.end(), 0.0);
        interior = savgol_weights(pos, half, poly_order);
    }

    for (int i = 0; i < n; ++i) {
        const int lo = std::max(0, i - half);
        const int hi = std::min(n - 1, i + half);
        if (hi - lo + 1 == window) {
            double acc = 0.0;
            for (int k = 0; k < window; ++k) acc += interior[k] * series[lo + k];
            out[i] = acc;
        } else {
            // truncated edge window: fit on what is available
            const int m = hi - lo + 1;
            const int order = std::min(poly_order, m - 1);
            std::vector<double> pos(m);
            std::iota(pos.begin(), pos.end(), static_cast<double>(lo));
            const Eigen::VectorXd w = savgol_weights(pos, i, order);
            double acc = 0.0;
            for (int k = 0; k < m; ++k) acc += w[k] * series[lo + k];
            out[i] = acc;
        }
    }
    return out;
}

// ============================================================================
// Peak extraction
// ============================================================================

namespace {

// plateau-aware strict local maxima, reported at the plateau midpoint
std::vector<int> local_maxima(std::span<const double> x) {
    std::vector<int> peaks;
    const int n = static_cast<int>(x.size());
    int i = 1;
    while (i < n - 1) {
        if (x[i] > x[i - 1]) {
            int j = i;
            while (j + 1 < n && x[j + 1] == x[i]) ++j;
            if (j + 1 < n && x[j + 1] < x[i]) peaks.push_back((i + j) / 2);
            i = j + 1;
        } else {
            ++i;
        }
    }
    return peaks;
}

struct PeakExtent {
    double prominence;
    int left_base;
    int right_base;
};

// topographic prominence: bases bounded by the nearest strictly-higher
// samples (or the signal edges); the key col is the higher of the two minima
PeakExtent prominence_of(std::span<const double> x, int p) {
    const int n = static_cast<int>(x.size());
    double left_min = x[p];
    int left_base = p;
    for (int i = p - 1; i >= 0; --i) {
        if (x[i] > x[p]) break;
        if (x[i] < left_min) {
            left_min = x[i];
            left_base = i;
        }
    }
    double right_min = x[p];
    int right_base = p;
    for (int i = p + 1; i < n; ++i) {
        if (x[i] > x[p]) break;
        if (x[i] < right_min) {
            right_min = x[i];
            right_base = i;
        }
    }
    return {x[p] - std::max(left_min, right_min), left_base, right_base};
}

double interp_crossing(std::span<const double> x, int from, int to, double level) {
    // first crossing of `level` walking from `from` toward `to`
    const int step = to > from ? 1 : -1;
    for (int i = from; i != to; i += step) {
        const int j = i + step;
        if ((x[i] - level) * (x[j] - level) <= 0.0 && x[i] != x[j])
            return i + step * (x[i] - level) / (x[i] - x[j]);
        if (x[j] == level) return j;
    }
    return to;
}

} // namespace

RespirationPeaks find_peaks(std::span<const double> series, double height_k,
                            double prominence_k) {
    const int n = static_cast<int>(series.size());
    if (n < 10) throw Error(ErrorCode::TooShort, "find_peaks needs n >= 10");

    const double sd = sample_sd(series);
    const std::vector<int> candidates = local_maxima(series);

    RespirationPeaks out;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const int p = candidates[c];
        const PeakExtent ext = prominence_of(series, p);
        if (ext.prominence < prominence_k * sd) continue;

        // relief: height above the higher adjacent valley, adjacency bounded
        // by the neighboring local maxima (or the signal edges)
        const int left_bound = c > 0 ? candidates[c - 1] : 0;
        const int right_bound = c + 1 < candidates.size() ? candidates[c + 1] : n - 1;
        double left_valley = series[p];
        for (int i = left_bound; i <= p; ++i) left_valley = std::min(left_valley, series[i]);
        double right_valley = series[p];
        for (int i = p; i <= right_bound; ++i) right_valley = std::min(right_valley, series[i]);
        const double relief = series[p] - std::max(left_valley, right_valley);
        if (relief < height_k * sd) continue;

        const double level = series[p] - 0.5 * ext.prominence;
        const double left_x = interp_crossing(series, p, ext.left_base, level);
        const double right_x = interp_crossing(series, p, ext.right_base, level);
        out.indices.push_back(p);
        out.prominences.push_back(ext.prominence);
        out.widths_s.push_back(right_x - left_x);
    }

    const double duration_s = static_cast<double>(n); // 1 Hz series
    out.prate = 60.0 * static_cast<double>(out.indices.size()) / duration_s;
    if (!out.indices.empty()) {
        out.mean_prominence = mean(out.prominences);
        out.mean_width = mean(out.widths_s);
    }
    return out;
}

// ============================================================================
// Per-segment feature assembly
// ============================================================================

const std::vector<std::string>& feature_registry() {
    static const std::vector<std::string> registry = {
        "hr_mean", "hr_sd", "hr_cv", "hr_kurtosis",
        "rr_mean", "rr_sd", "rr_cv", "rr_kurtosis",
        "rr_sdnn", "rr_sdsd", "rr_rmssd", "rr_pnn50",
        "rr_tp", "rr_lf", "rr_hf", "rr_lf_hf",
        "bf_mean", "bf_sd", "bf_cv", "bf_kurtosis",
        "bf_prate", "bf_mean_prominence", "bf_mean_width",
    };
    return registry;
}

namespace {

void add_descriptive(FeatureVector& fv, const std::string& prefix,
                     std::span<const double> x) {
    const DescriptiveStats d = descriptive(x);
    fv.values[prefix + "_mean"] = d.mean;
    fv.values[prefix + "_sd"] = d.sd;
    if (d.cv_defined) fv.values[prefix + "_cv"] = d.cv;
    fv.values[prefix + "_kurtosis"] = d.kurtosis;
}

} // namespace

std::vector<FeatureVector> session_features(const Session& preprocessed, SegmentMode mode) {
    struct Segment {
        std::string label;
        double start_s, end_s;
    };
    std::vector<Segment> segments;
    if (mode == SegmentMode::Session) {
        double start = 0.0;
        if (const PhaseAnnotation* b = preprocessed.find_phase(PhaseLabel::Baseline))
            start = b->end_s;
        segments.push_back({"Session", start, preprocessed.duration_s});
    } else {
        for (const PhaseAnnotation& p : preprocessed.phases)
            if (p.label != PhaseLabel::Baseline)
                segments.push_back({to_string(p.label), p.start_s, p.end_s});
    }

    std::vector<FeatureVector> out;
    for (const Segment& seg : segments) {
        FeatureVector fv;
        fv.segment_label = seg.label;
        fv.duration_s = seg.end_s - seg.start_s;

        for (const SignalTrace& trace : preprocessed.traces) {
            SignalTrace sl;
            try {
                sl = slice_range(trace, seg.start_s, seg.end_s);
            } catch (const Error&) {
                continue; // no overlap: absent keys
            }
            const std::span<const double> x(sl.samples);
            switch (trace.kind) {
                case SignalKind::HR:
                    add_descriptive(fv, "hr", x);
                    break;
                case SignalKind::RR: {
                    add_descriptive(fv, "rr", x);
                    if (x.size() >= 3) {
                        const HrvTime h = hrv_time(x);
                        fv.values["rr_sdnn"] = h.sdnn;
                        fv.values["rr_sdsd"] = h.sdsd;
                        fv.values["rr_rmssd"] = h.rmssd;
                        fv.values["rr_pnn50"] = h.pnn50;
                    }
                    if (x.size() >= 64) {
                        const Spectrum spec = welch_psd(x);
                        fv.welch_short_segment |= spec.short_segment;
                        const SpectralPowers p = band_powers(spec);
                        fv.values["rr_tp"] = p.tp;
                        fv.values["rr_lf"] = p.lf;
                        fv.values["rr_hf"] = p.hf;
                        if (p.lf_hf_defined) fv.values["rr_lf_hf"] = p.lf_hf;
                    }
                    break;
                }
                case SignalKind::BF: {
                    add_descriptive(fv, "bf", x);
                    if (x.size() >= 10) {
                        const std::vector<double> smoothed = savgol(x);
                        const RespirationPeaks peaks = find_peaks(smoothed);
                        fv.values["bf_prate"] = peaks.prate;
                        fv.values["bf_mean_prominence"] = peaks.mean_prominence;
                        fv.values["bf_mean_width"] = peaks.mean_width;
                    }
                    break;
                }
            }
        }
        out.push_back(std::move(fv));
    }
    return out;
}

} // namespace biosession::features
