#include "biosession/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include <json.hpp>

#include "biosession/numeric.hpp"
#include "biosession/random_forest.hpp"

namespace biosession {

// ============================================================================
// Zero-phase Butterworth low-pass (second-order sections + filtfilt)
// ============================================================================

namespace {

struct Biquad {
    double b0, b1, b2; // a0 normalized to 1
    double a1, a2;
};

// Bilinear-transform Butterworth design, unit DC gain per section.
std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double fs) {
    const double K = 2.0 * fs;
    const double wc = K * std::tan(M_PI * cutoff_hz / fs); // prewarped analog cutoff
    std::vector<Biquad> sections;
    const int pairs = order / 2;
    for (int k = 0; k < pairs; ++k) {
        // conjugate analog pole pair at angle theta from the negative real axis
        const double theta = M_PI * (2.0 * k + 1.0) / (2.0 * order);
        const double a1s = 2.0 * wc * std::sin(theta); // s^2 + a1s*s + wc^2
        const double a0s = wc * wc;
        const double den = K * K + a1s * K + a0s;
        Biquad q;
        q.b0 = a0s / den;
        q.b1 = 2.0 * a0s / den;
        q.b2 = a0s / den;
        q.a1 = (2.0 * a0s - 2.0 * K * K) / den;
        q.a2 = (K * K - a1s * K + a0s) / den;
        sections.push_back(q);
    }
    if (order % 2 == 1) {
        // one real pole at -wc
        const double den = K + wc;
        Biquad q;
        q.b0 = wc / den;
        q.b1 = wc / den;
        q.b2 = 0.0;
        q.a1 = (wc - K) / den;
        q.a2 = 0.0;
        sections.push_back(q);
    }
    return sections;
}

// direct form II transposed, one pass, state seeded for a step of height x0
void sosfilt(const std::vector<Biquad>& sos, std::vector<double>& x, double x0) {
    for (const Biquad& q : sos) {
        // steady-state initial conditions for constant input x0 (DC gain 1)
        double s1 = (1.0 - q.b0) * x0;
        double s2 = (q.b2 - q.a2) * x0;
        for (double& v : x) {
            const double in = v;
            const double out = q.b0 * in + s1;
            s1 = q.b1 * in - q.a1 * out + s2;
            s2 = q.b2 * in - q.a2 * out;
            v = out;
        }
    }
}

std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x,
                             int padlen) {
    const int n = static_cast<int>(x.size());
    padlen = std::min(padlen, n - 1);
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * static_cast<std::size_t>(padlen));
    for (int i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]); // odd extension
    ext.insert(ext.end(), x.begin(), x.end());
    for (int i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    sosfilt(sos, ext, ext.front());
    std::reverse(ext.begin(), ext.end());
    sosfilt(sos, ext, ext.front());
    std::reverse(ext.begin(), ext.end());

    return {ext.begin() + padlen, ext.begin() + padlen + n};
}

// nearest valid index at or before / after each position; -1 when none
void nearest_valid(const std::vector<std::uint8_t>& valid, std::vector<int>& left,
                   std::vector<int>& right) {
    const int n = static_cast<int>(valid.size());
    left.assign(n, -1);
    right.assign(n, -1);
    int last = -1;
    for (int i = 0; i < n; ++i) {
        if (valid[i]) last = i;
        left[i] = last;
    }
    last = -1;
    for (int i = n - 1; i >= 0; --i) {
        if (valid[i]) last = i;
        right[i] = last;
    }
}

// invalid runs bridged by linear interpolation so the filter never sees them
std::vector<double> bridge_gaps(const SignalTrace& t) {
    std::vector<double> x = t.samples;
    std::vector<int> left, right;
    nearest_valid(t.valid, left, right);
    for (int i = 0; i < static_cast<int>(x.size()); ++i) {
        if (t.valid[i]) continue;
        const int l = left[i], r = right[i];
        if (l >= 0 && r >= 0)
            x[i] = x[l] + (x[r] - x[l]) * (i - l) / static_cast<double>(r - l);
        else if (l >= 0)
            x[i] = x[l];
        else if (r >= 0)
            x[i] = x[r];
    }
    return x;
}

} // namespace

SignalTrace lowpass(const SignalTrace& trace, const PreprocessConfig& cfg) {
    if (trace.samples.empty()) throw Error(ErrorCode::EmptyTrace, "lowpass of empty trace");
    if (!(trace.rate_hz > 2.0 * cfg.lp_cutoff_hz))
        throw Error(ErrorCode::CutoffTooHigh,
                    "cutoff " + std::to_string(cfg.lp_cutoff_hz) + " Hz needs rate > " +
                        std::to_string(2.0 * cfg.lp_cutoff_hz) + " Hz");
    if (std::none_of(trace.valid.begin(), trace.valid.end(),
                     [](std::uint8_t v) { return v != 0; }))
        return trace; // nothing to filter against

    const std::vector<Biquad> sos = butterworth_lowpass(cfg.lp_order, cfg.lp_cutoff_hz,
                                                        trace.rate_hz);
    // padding long enough to flush the transient at the cutoff scale
    const int padlen =
        std::max(15, static_cast<int>(2.0 * trace.rate_hz / cfg.lp_cutoff_hz));
    const std::vector<double> bridged = bridge_gaps(trace);
    std::vector<double> filtered = filtfilt(sos, bridged, padlen);

    SignalTrace out = trace;
    for (std::size_t i = 0; i < out.samples.size(); ++i)
        if (out.valid[i]) out.samples[i] = filtered[i];
    return out;
}

SignalTrace resample_to_1hz(const SignalTrace& trace) {
    if (trace.samples.empty())
        throw Error(ErrorCode::EmptyTrace, "resample of empty trace");
    const double rate = trace.rate_hz;
    const int n = static_cast<int>(trace.samples.size());
    const double t_last = trace.t0 + (n - 1) / rate;
    const auto first_s = static_cast<long>(std::ceil(trace.t0 - 1e-9));
    const auto last_s = static_cast<long>(std::floor(t_last + 1e-9));
    if (first_s > last_s)
        throw Error(ErrorCode::EmptyTrace, "trace too short to cover one integer second");

    std::vector<int> left, right;
    nearest_valid(trace.valid, left, right);

    SignalTrace out;
    out.kind = trace.kind;
    out.rate_hz = 1.0;
    out.t0 = static_cast<double>(first_s);
    out.samples.reserve(static_cast<std::size_t>(last_s - first_s + 1));
    out.valid.reserve(out.samples.capacity());

    for (long t = first_s; t <= last_s; ++t) {
        const double pos = (static_cast<double>(t) - trace.t0) * rate;
        int i0 = static_cast<int>(std::floor(pos + 1e-9));
        int i1 = static_cast<int>(std::ceil(pos - 1e-9));
        i0 = std::clamp(i0, 0, n - 1);
        i1 = std::clamp(i1, 0, n - 1);

        const bool ok = trace.valid[i0] && trace.valid[i1];
        double value;
        if (ok) {
            value = i0 == i1 ? trace.samples[i0]
                             : trace.samples[i0] +
                                   (trace.samples[i1] - trace.samples[i0]) * (pos - i0);
        } else {
            // masked output; bridge through nearest valid samples for continuity
            const int l = left[i0], r = right[i1];
            if (l >= 0 && r >= 0 && l != r)
                value = trace.samples[l] +
                        (trace.samples[r] - trace.samples[l]) * (pos - l) / (r - l);
            else if (l >= 0)
                value = trace.samples[l];
            else if (r >= 0)
                value = trace.samples[r];
            else
                value = 0.0;
        }
        out.samples.push_back(value);
        out.valid.push_back(ok ? 1 : 0);
    }
    return out;
}

double missing_ratio(const SignalTrace& trace) {
    if (trace.samples.empty())
        throw Error(ErrorCode::EmptyTrace, "missing_ratio of empty trace");
    const auto invalid =
        std::count(trace.valid.begin(), trace.valid.end(), std::uint8_t{0});
    return static_cast<double>(invalid) / static_cast<double>(trace.valid.size());
}

// ============================================================================
// Random-forest gap interpolation
// ============================================================================

namespace {

Eigen::RowVectorXd interpolation_features(const SignalTrace& t,
                                          const std::vector<int>& valid_idx, int i) {
    const double n = static_cast<double>(t.samples.size());
    const double ts = static_cast<double>(i) / t.rate_hz;
    const double duration = n / t.rate_hz;
    Eigen::RowVectorXd f(9);
    f[0] = static_cast<double>(i) / n;
    int c = 1;
    for (const double period : {60.0, 300.0, duration}) {
        f[c++] = std::sin(2.0 * M_PI * ts / period);
        f[c++] = std::cos(2.0 * M_PI * ts / period);
    }
    // 5 nearest valid neighbors on each side, excluding i itself
    const auto it = std::lower_bound(valid_idx.begin(), valid_idx.end(), i);
    std::vector<double> nb;
    for (auto l = it; l != valid_idx.begin() && nb.size() < 5;)
        nb.push_back(t.samples[*--l]);
    std::size_t before = nb.size();
    for (auto r = it; r != valid_idx.end() && nb.size() - before < 5; ++r) {
        if (*r == i) continue;
        nb.push_back(t.samples[*r]);
    }
    f[7] = nb.empty() ? 0.0 : mean(nb);
    f[8] = nb.size() > 1 ? sample_sd(nb) : 0.0;
    return f;
}

} // namespace

SignalTrace rf_interpolate(const SignalTrace& trace, const PreprocessConfig& cfg) {
    if (trace.samples.empty())
        throw Error(ErrorCode::EmptyTrace, "rf_interpolate of empty trace");
    if (trace.all_valid()) return trace;

    std::vector<int> valid_idx, invalid_idx;
    for (int i = 0; i < static_cast<int>(trace.samples.size()); ++i)
        (trace.valid[i] ? valid_idx : invalid_idx).push_back(i);
    if (missing_ratio(trace) > cfg.missing_exclusion_ratio ||
        valid_idx.size() < 10)
        throw Error(ErrorCode::TooSparse,
                    "rf_interpolate needs missing ratio <= " +
                        std::to_string(cfg.missing_exclusion_ratio) +
                        " and >= 10 valid samples");

    Eigen::MatrixXd X(static_cast<Eigen::Index>(valid_idx.size()), 9);
    Eigen::VectorXd y(static_cast<Eigen::Index>(valid_idx.size()));
    for (std::size_t r = 0; r < valid_idx.size(); ++r) {
        X.row(static_cast<Eigen::Index>(r)) =
            interpolation_features(trace, valid_idx, valid_idx[r]);
        y[static_cast<Eigen::Index>(r)] = trace.samples[valid_idx[r]];
    }
    RandomForestRegressor forest(
        {cfg.rf_trees, cfg.rf_max_depth, 1, cfg.rf_seed});
    forest.fit(X, y);

    SignalTrace out = trace;
    for (const int i : invalid_idx) {
        out.samples[i] = forest.predict(interpolation_features(trace, valid_idx, i));
        out.valid[i] = 1;
    }
    return out;
}

// ============================================================================
// Baseline winsorization and normalization
// ============================================================================

BaselineStats baseline_stats(const SignalTrace& baseline_segment, double winsor_fraction) {
    if (!(winsor_fraction > 0.0 && winsor_fraction < 0.5))
        throw Error(ErrorCode::OutOfRange, "winsor_fraction must be in (0, 0.5)");
    if (!baseline_segment.all_valid())
        throw Error(ErrorCode::Invariant, "baseline segment must be fully valid");
    if (baseline_segment.samples.size() < 20)
        throw Error(ErrorCode::TooShort, "baseline segment needs >= 20 samples");

    const auto& x = baseline_segment.samples;
    const double lo = percentile(x, 100.0 * winsor_fraction);
    const double hi = percentile(x, 100.0 * (1.0 - winsor_fraction));
    std::vector<double> w(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) w[i] = std::clamp(x[i], lo, hi);

    BaselineStats stats;
    stats.mean = mean(w);
    stats.sd = sample_sd(w);
    if (!(stats.sd > 0.0))
        throw Error(ErrorCode::DegenerateBaseline, "winsorized baseline has zero variance");
    return stats;
}

SignalTrace normalize(const SignalTrace& trace, const BaselineStats& stats) {
    if (!(stats.sd > 0.0))
        throw Error(ErrorCode::DegenerateBaseline, "normalize needs sd > 0");
    SignalTrace out = trace;
    for (double& v : out.samples) v = (v - stats.mean) / stats.sd;
    return out;
}

// ============================================================================
// Full chain
// ============================================================================

std::string PreprocessLog::to_json_lines() const {
    std::string out;
    for (const TraceLog& t : traces) {
        nlohmann::json j{{"kind", to_string(t.kind)},
                         {"missing_ratio", t.missing_ratio},
                         {"dropped", t.dropped}};
        if (t.dropped)
            j["reason"] = t.drop_reason;
        else {
            j["baseline_mean"] = t.baseline_mean;
            j["baseline_sd"] = t.baseline_sd;
        }
        out += j.dump() + "\n";
    }
    return out;
}

PreprocessResult run_preprocess(const Session& session, const PreprocessConfig& cfg) {
    const PhaseAnnotation* baseline = session.find_phase(PhaseLabel::Baseline);
    if (!baseline)
        throw Error(ErrorCode::DegeneratePipeline,
                    "session has no Baseline phase: normalization is impossible");

    PreprocessResult result;
    result.session = session;
    result.session.traces.clear();

    for (const SignalTrace& raw : session.traces) {
        TraceLog log;
        log.kind = raw.kind;

        SignalTrace t = lowpass(raw, cfg);
        t = resample_to_1hz(t);
        log.missing_ratio = missing_ratio(t);
        if (log.missing_ratio > cfg.missing_exclusion_ratio) {
            log.dropped = true;
            log.drop_reason = "missing ratio " + std::to_string(log.missing_ratio) +
                              " exceeds " + std::to_string(cfg.missing_exclusion_ratio);
            result.log.traces.push_back(log);
            continue;
        }
        t = rf_interpolate(t, cfg);

        const SignalTrace baseline_slice =
            slice_range(t, baseline->start_s, baseline->end_s);
        const BaselineStats stats = baseline_stats(baseline_slice, cfg.winsor_fraction);
        t = normalize(t, stats);

        log.baseline_mean = stats.mean;
        log.baseline_sd = stats.sd;
        result.log.traces.push_back(log);
        result.session.traces.push_back(std::move(t));
    }
    return result;
}

} // namespace biosession
