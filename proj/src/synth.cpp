#include "biosession/synth.hpp"

#include <algorithm>
#include <cmath>

#include "biosession/numeric.hpp"
#include "biosession/preprocess.hpp"
#include "biosession/rng.hpp"

namespace biosession::synth {

namespace {

// linear-interpolation upsampling of a 1 Hz design series
SignalTrace upsample(const std::vector<double>& design_1hz, SignalKind kind, double rate_hz) {
    SignalTrace t;
    t.kind = kind;
    t.rate_hz = rate_hz;
    t.t0 = 0.0;
    const int n1 = static_cast<int>(design_1hz.size());
    const auto n = static_cast<std::size_t>(std::llround((n1 - 1) * rate_hz)) + 1;
    t.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ts = static_cast<double>(i) / rate_hz;
        const int lo = std::min(static_cast<int>(ts), n1 - 2);
        const double frac = ts - lo;
        t.samples[i] = design_1hz[lo] + frac * (design_1hz[lo + 1] - design_1hz[lo]);
    }
    t.valid.assign(n, 1);
    return t;
}

std::vector<double> ar1_series(int n, double mean_value, double rho, double sigma_eps,
                               Rng& rng) {
    std::vector<double> x(n);
    const double stationary_sd = sigma_eps / std::sqrt(1.0 - rho * rho);
    double dev = stationary_sd * rng.normal();
    for (int i = 0; i < n; ++i) {
        x[i] = mean_value + dev;
        dev = rho * dev + sigma_eps * rng.normal();
    }
    return x;
}

struct Ar1Params {
    double rho;
    double sigma_eps;
};

// The acquisition chain (upsample -> low-pass -> 1 Hz resample) attenuates
// the top of the AR(1) band, so the closed-form (rho, sigma) undershoots the
// targets. Calibrate by measuring a long probe through the actual chain and
// applying fixed-point corrections; no closed form fits both targets at once.
Ar1Params calibrate_rr(double sdnn_target, double rmssd_target, double rate_hz) {
    double rho = std::clamp(
        1.0 - rmssd_target * rmssd_target / (2.0 * sdnn_target * sdnn_target), 0.0, 0.999);
    double sigma = sdnn_target * std::sqrt(1.0 - rho * rho);
    const PreprocessConfig cfg;
    const int probe_len = 4096;
    for (int iter = 0; iter < 3; ++iter) {
        Rng rng(0xca11b7a7eULL + iter);
        const std::vector<double> probe = ar1_series(probe_len, 0.0, rho, sigma, rng);
        SignalTrace up = upsample(probe, SignalKind::RR, rate_hz);
        const SignalTrace out = resample_to_1hz(lowpass(up, cfg));
        const std::vector<double>& y = out.samples;
        std::vector<double> d(y.size() - 1);
        for (std::size_t i = 0; i + 1 < y.size(); ++i) d[i] = y[i + 1] - y[i];
        const double sdnn_got = sample_sd(y);
        double rmssd_got = 0.0;
        for (const double v : d) rmssd_got += v * v;
        rmssd_got = std::sqrt(rmssd_got / static_cast<double>(d.size()));
        if (sdnn_got <= 0.0 || rmssd_got <= 0.0) break;
        // ratio fixes rho, scale fixes sigma
        const double ratio_target = rmssd_target / sdnn_target;
        const double ratio_got = rmssd_got / sdnn_got;
        const double rho_old = rho;
        rho = std::clamp(1.0 - (1.0 - rho) * (ratio_target * ratio_target) /
                                   (ratio_got * ratio_got),
                         0.0, 0.999);
        sigma *= (sdnn_target / sdnn_got) *
                 std::sqrt((1.0 - rho * rho) / (1.0 - rho_old * rho_old));
    }
    return {rho, sigma};
}

void plant_gaps(SignalTrace& trace, int count, double mean_len_s, double baseline_end_s,
                Rng& rng) {
    const int n = static_cast<int>(trace.samples.size());
    const auto first_ok = static_cast<int>(baseline_end_s * trace.rate_hz) + 1;
    for (int g = 0; g < count; ++g) {
        const double len_s = std::clamp(rng.exponential(mean_len_s), 1.0, 3.0 * mean_len_s);
        const int len = std::max(1, static_cast<int>(len_s * trace.rate_hz));
        if (first_ok + len >= n) continue;
        const int start = first_ok + static_cast<int>(rng.uniform_int(
                                         static_cast<std::uint64_t>(n - first_ok - len)));
        for (int i = start; i < start + len; ++i) trace.valid[i] = 0;
    }
}

} // namespace

SynthSession gen_session(const SynthSpec& spec) {
    if (!(spec.duration_s > spec.baseline_s))
        throw Error(ErrorCode::SpecError, "duration_s must exceed baseline_s");
    if (!(spec.hr.mean_bpm > 0) || !(spec.rr.mean_ms > 0) || !(spec.bf.rate_per_min > 0))
        throw Error(ErrorCode::SpecError, "all rates must be positive");

    Rng rng(spec.seed);
    const int n1 = static_cast<int>(spec.duration_s) + 1;

    SynthSession out;
    Session& s = out.session;
    s.meta.subject_id = spec.subject_id;
    s.meta.age_months = spec.age_months;
    s.meta.sex = spec.sex;
    s.session_index = spec.session_index;
    s.duration_s = spec.duration_s;

    // phases: baseline then three equal scenario windows
    s.phases.push_back({PhaseLabel::Baseline, 0.0, spec.baseline_s});
    const double span = (spec.duration_s - spec.baseline_s) / 3.0;
    const PhaseLabel scenario_labels[3] = {PhaseLabel::Coin, PhaseLabel::Station,
                                           PhaseLabel::Battle};
    for (int i = 0; i < 3; ++i)
        s.phases.push_back({scenario_labels[i], spec.baseline_s + i * span,
                            i == 2 ? spec.duration_s : spec.baseline_s + (i + 1) * span});

    // HR: slow wander around the mean
    {
        Rng r = rng.child(1);
        std::vector<double> hr(n1);
        const double a = spec.hr.sd * 0.7;
        const double p1 = r.uniform(0.0, 2.0 * M_PI), p2 = r.uniform(0.0, 2.0 * M_PI);
        for (int i = 0; i < n1; ++i) {
            hr[i] = spec.hr.mean_bpm + a * std::sin(2.0 * M_PI * 0.013 * i + p1) +
                    a * std::sin(2.0 * M_PI * 0.031 * i + p2) +
                    spec.hr.noise_sd * r.normal();
        }
        s.traces.push_back(upsample(hr, SignalKind::HR, spec.acquisition_rate_hz));
    }

    // RR: AR(1) tachogram hitting the SDNN/RMSSD targets through the chain
    {
        Rng r = rng.child(2);
        const Ar1Params ar = calibrate_rr(spec.rr.sdnn_ms, spec.rr.rmssd_ms,
                                          spec.acquisition_rate_hz);
        std::vector<double> rr = ar1_series(n1, spec.rr.mean_ms, ar.rho, ar.sigma_eps, r);
        if (spec.rr.lf_amp_ms > 0.0 || spec.rr.hf_amp_ms > 0.0) {
            for (int i = 0; i < n1; ++i)
                rr[i] += spec.rr.lf_amp_ms * std::sin(2.0 * M_PI * out.truth.lf_hz * i) +
                         spec.rr.hf_amp_ms * std::sin(2.0 * M_PI * out.truth.hf_hz * i);
        }
        s.traces.push_back(upsample(rr, SignalKind::RR, spec.acquisition_rate_hz));
    }

    // BF: one peak per planted breath cycle plus noise
    {
        Rng r = rng.child(3);
        std::vector<double> bf(n1);
        const double f = spec.bf.rate_per_min / 60.0;
        const double phase = r.uniform(0.0, 2.0 * M_PI);
        for (int i = 0; i < n1; ++i)
            bf[i] = spec.bf.mean + spec.bf.amplitude * std::sin(2.0 * M_PI * f * i + phase) +
                    spec.bf.noise_sd * r.normal();
        s.traces.push_back(upsample(bf, SignalKind::BF, spec.acquisition_rate_hz));
    }

    if (spec.gaps.count > 0) {
        Rng r = rng.child(4);
        for (auto& trace : s.traces)
            plant_gaps(trace, spec.gaps.count, spec.gaps.mean_len_s, spec.baseline_s, r);
    }

    if (spec.with_clinical) {
        Rng r = rng.child(5);
        ClinicalProfile c;
        c.ados_comparison = std::round(std::clamp(r.normal(6.7, 1.0), 4.0, 10.0));
        c.ados_total = std::round(std::clamp(r.normal(12.0, 3.0), 5.0, 22.0));
        c.ados_sa = std::round(std::clamp(r.normal(9.5, 2.5), 3.0, 20.0));
        c.iq = std::round(std::clamp(r.normal(97.0, 15.0), 70.0, 145.0));
        c.vci = std::round(std::clamp(r.normal(100.0, 18.0), 55.0, 150.0));
        c.pri = std::round(std::clamp(r.normal(114.0, 18.0), 55.0, 155.0));
        c.wmi = std::round(std::clamp(r.normal(86.0, 14.0), 50.0, 140.0));
        c.psi = std::round(std::clamp(r.normal(84.0, 15.0), 50.0, 140.0));
        s.clinical = c;
    }

    if (spec.with_behavior) {
        Rng r = rng.child(6);
        BehavioralRecord b;
        b.duration_min = (spec.duration_s - spec.baseline_s) / 60.0;
        const double subject_level = std::exp(0.4 * r.normal());
        const std::pair<std::string, double> base_rates[] = {
            {"SO_Peers", 2.0}, {"SR_Peers", 1.2}, {"SO_Therapist", 1.5},
            {"SR_Therapist", 0.8}};
        for (const auto& [feature, rate] : base_rates) {
            const double lam = rate * subject_level * b.duration_min;
            if (feature == "SO_Therapist") {
                b.counts[feature][Condition::Spontaneous] =
                    static_cast<double>(r.poisson(lam));
                continue;
            }
            const auto spont = static_cast<double>(r.poisson(lam));
            const auto sug = static_cast<double>(r.poisson(lam * 0.25));
            const auto ind = static_cast<double>(r.poisson(lam * 0.15));
            b.counts[feature][Condition::Spontaneous] = spont;
            b.counts[feature][Condition::Suggested] = sug;
            b.counts[feature][Condition::Indicated] = ind;
            b.counts[feature][Condition::Prompted] = sug + ind;
        }
        for (const auto& feature : kLikertFeatures) {
            const double center = feature == "Involvement" ? 4.4 : 2.2;
            b.likert[feature] =
                std::clamp(static_cast<int>(std::round(r.normal(center, 1.0))), 0, 5);
        }
        s.behavior = b;
    }

    out.truth.hr_mean = spec.hr.mean_bpm;
    out.truth.rr_mean_ms = spec.rr.mean_ms;
    out.truth.sdnn_ms = spec.rr.sdnn_ms;
    out.truth.rmssd_ms = spec.rr.rmssd_ms;
    out.truth.bf_rate_per_min = spec.bf.rate_per_min;
    out.truth.gap_count = spec.gaps.count;
    return out;
}

GlmDataset gen_glm_dataset(stats::Family family, double intercept,
                           const std::vector<double>& beta, int n, std::uint64_t seed,
                           double gamma_shape) {
    const int p = static_cast<int>(beta.size());
    if (n < 10 * std::max(1, p))
        throw Error(ErrorCode::SpecError, "gen_glm_dataset needs n >= 10 * len(beta)");

    Rng rng(seed ^ 0x676c6dULL);
    GlmDataset out;
    out.family = family;
    out.intercept = intercept;
    out.beta = beta;
    out.X.resize(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) out.X(i, j) = rng.normal();
    // exact column standardization
    for (int j = 0; j < p; ++j) {
        const double m = out.X.col(j).mean();
        const double sd = std::sqrt((out.X.col(j).array() - m).square().sum() / (n - 1));
        out.X.col(j) = (out.X.col(j).array() - m) / sd;
    }
    out.y.resize(n);
    for (int i = 0; i < n; ++i) {
        double eta = intercept;
        for (int j = 0; j < p; ++j) eta += out.X(i, j) * beta[static_cast<std::size_t>(j)];
        const double mu = std::exp(eta);
        out.y[i] = family == stats::Family::Poisson
                       ? static_cast<double>(rng.poisson(mu))
                       : rng.gamma(gamma_shape, mu / gamma_shape);
    }
    return out;
}

Blobs gen_blobs(int k, int n_per, double separation, int dim, std::uint64_t seed) {
    if (k < 1 || n_per < 1 || dim < 1)
        throw Error(ErrorCode::SpecError, "gen_blobs needs k, n_per, dim >= 1");

    Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(k, dim);
    if (dim >= k) {
        for (int c = 0; c < k; ++c)
            centers(c, c) = separation / std::sqrt(2.0); // pairwise distance = separation
    } else if (k == 3 && dim >= 2) {
        centers(1, 0) = separation;
        centers(2, 0) = separation / 2.0;
        centers(2, 1) = separation * std::sqrt(3.0) / 2.0;
    } else {
        for (int c = 0; c < k; ++c) centers(c, 0) = c * separation; // collinear fallback
    }

    Rng rng(seed ^ 0x626c6f6273ULL);
    Blobs out;
    out.points.resize(k * n_per, dim);
    out.labels.resize(static_cast<std::size_t>(k) * n_per);
    int row = 0;
    for (int c = 0; c < k; ++c) {
        for (int i = 0; i < n_per; ++i, ++row) {
            for (int d = 0; d < dim; ++d)
                out.points(row, d) = centers(c, d) + rng.normal();
            out.labels[static_cast<std::size_t>(row)] = c;
        }
    }
    return out;
}

} // namespace biosession::synth
