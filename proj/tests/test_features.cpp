#include <doctest.h>

#include <cmath>
#include <numeric>

#include "biosession/features.hpp"
#include "biosession/numeric.hpp"
#include "biosession/rng.hpp"

using namespace biosession;
using namespace biosession::features;

TEST_CASE("descriptive matches direct formulas") {
    const DescriptiveStats c = descriptive(std::vector<double>{5, 5, 5, 5});
    CHECK(c.mean == 5.0);
    CHECK(c.sd == 0.0);
    CHECK(c.cv == 0.0);

    const DescriptiveStats d = descriptive(std::vector<double>{1, 2, 3, 4});
    CHECK(d.mean == doctest::Approx(2.5));
    CHECK(d.sd == doctest::Approx(1.2909944487358056).epsilon(1e-12));
    CHECK(d.cv == doctest::Approx(1.2909944487358056 / 2.5).epsilon(1e-12));

    CHECK_THROWS_AS(descriptive(std::vector<double>{1.0}), Error);
}

TEST_CASE("kurtosis is Fisher-adjusted: standard normal draws give ~0") {
    Rng rng(123);
    std::vector<double> x(100000);
    for (auto& v : x) v = rng.normal();
    const DescriptiveStats d = descriptive(x);
    CHECK(d.kurtosis > -0.1);
    CHECK(d.kurtosis < 0.1);
}

TEST_CASE("descriptive scale equivariance") {
    Rng rng(7);
    std::vector<double> x(200), scaled(200);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = 10.0 + rng.normal();
        scaled[i] = 3.0 * x[i];
    }
    const DescriptiveStats a = descriptive(x), b = descriptive(scaled);
    CHECK(b.sd == doctest::Approx(3.0 * a.sd).epsilon(1e-9));
    CHECK(b.cv == doctest::Approx(a.cv).epsilon(1e-9)); // cv invariant, positive scale
}

TEST_CASE("hrv_time handles constants and alternating fixtures") {
    const HrvTime zero = hrv_time(std::vector<double>(50, 800.0));
    CHECK(zero.sdnn == 0.0);
    CHECK(zero.sdsd == 0.0);
    CHECK(zero.rmssd == 0.0);
    CHECK(zero.pnn50 == 0.0);

    std::vector<double> alt(100);
    for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? 860.0 : 800.0;
    const HrvTime h = hrv_time(alt);
    CHECK(h.rmssd == doctest::Approx(60.0).epsilon(1e-12)); // |d| = 60 everywhere
    CHECK(h.pnn50 == 100.0);

    std::vector<double> edge(100);
    for (std::size_t i = 0; i < edge.size(); ++i) edge[i] = i % 2 ? 850.0 : 800.0;
    const HrvTime e = hrv_time(edge);
    CHECK(e.rmssd == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(e.pnn50 == 0.0); // strictly greater than 50

    CHECK_THROWS_AS(hrv_time(std::vector<double>{800.0, 810.0}), Error);
}

TEST_CASE("rmssd^2 = sdsd^2 + mean(d)^2 exactly, and shift invariance") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_int(60));
        std::vector<double> rr(n), shifted(n);
        for (int i = 0; i < n; ++i) {
            rr[i] = 800.0 + 60.0 * rng.normal();
            shifted[i] = rr[i] + 250.0;
        }
        const HrvTime h = hrv_time(rr);
        std::vector<double> d(n - 1);
        for (int i = 0; i + 1 < n; ++i) d[i] = rr[i + 1] - rr[i];
        const double md = mean(d);
        CHECK(h.rmssd * h.rmssd ==
              doctest::Approx(h.sdsd * h.sdsd + md * md).epsilon(1e-9));

        const HrvTime hs = hrv_time(shifted);
        CHECK(hs.sdnn == doctest::Approx(h.sdnn).epsilon(1e-9));
        CHECK(hs.sdsd == doctest::Approx(h.sdsd).epsilon(1e-9));
        CHECK(hs.rmssd == doctest::Approx(h.rmssd).epsilon(1e-9));
        CHECK(hs.pnn50 == h.pnn50);
    }
}

TEST_CASE("welch concentrates a 0.1 Hz tone in band and honors Parseval") {
    std::vector<double> x(1024);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = 2.0 * std::sin(2.0 * M_PI * 0.1 * static_cast<double>(i));
    const Spectrum spec = welch_psd(x);
    CHECK(!spec.short_segment);

    const double df = spec.freqs[1] - spec.freqs[0];
    double tp = 0.0, near = 0.0;
    for (std::size_t k = 0; k < spec.freqs.size(); ++k) {
        if (spec.freqs[k] > 0.0) tp += spec.density[k] * df;
        if (spec.freqs[k] >= 0.09 && spec.freqs[k] <= 0.11) near += spec.density[k] * df;
    }
    const double variance = sample_variance(x) * (x.size() - 1) / x.size();
    CHECK(near / tp >= 0.95);
    CHECK(tp == doctest::Approx(variance).epsilon(0.05));

    const SpectralPowers p = band_powers(spec);
    CHECK(p.lf / p.tp >= 0.95);
    CHECK(p.hf / p.tp < 0.01);
}

TEST_CASE("welch: 0.3 Hz tone is HF dominant") {
    std::vector<double> x(1024);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = 2.0 * std::sin(2.0 * M_PI * 0.3 * static_cast<double>(i));
    const SpectralPowers p = band_powers(welch_psd(x));
    CHECK(p.lf_hf_defined);
    CHECK(p.lf_hf < 0.05);
}

TEST_CASE("welch: white noise gives a flat spectrum") {
    Rng rng(11);
    std::vector<double> x(4096);
    for (auto& v : x) v = rng.normal();
    const Spectrum spec = welch_psd(x);
    // band-averaged density over [0.04, 0.4] in ten sub-bands
    double lo = 1e300, hi = 0.0;
    for (int band = 0; band < 10; ++band) {
        const double a = 0.04 + band * 0.036, b = a + 0.036;
        double acc = 0.0;
        int cnt = 0;
        for (std::size_t k = 0; k < spec.freqs.size(); ++k)
            if (spec.freqs[k] >= a && spec.freqs[k] < b) {
                acc += spec.density[k];
                ++cnt;
            }
        const double m = acc / cnt;
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    CHECK(hi / lo < 3.0);
}

TEST_CASE("welch: constant series has negligible total power") {
    const SpectralPowers p = band_powers(welch_psd(std::vector<double>(512, 7.0)));
    CHECK(p.tp <= 1e-12);
}

TEST_CASE("welch Parseval property on random series") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 300 + static_cast<int>(rng.uniform_int(1000));
        std::vector<double> x(n);
        double state = 0.0;
        for (auto& v : x) { // AR(1)-colored noise
            state = 0.6 * state + rng.normal();
            v = state;
        }
        const Spectrum spec = welch_psd(x);
        const double df = spec.freqs[1] - spec.freqs[0];
        double tp = 0.0;
        for (std::size_t k = 1; k < spec.freqs.size(); ++k) tp += spec.density[k] * df;
        const double variance = sample_variance(x) * (n - 1.0) / n;
        CHECK(tp / variance > 0.8); // colored noise + segment averaging is looser
        CHECK(tp / variance < 1.2);
    }
}

TEST_CASE("welch short-series fallback flags a single segment") {
    std::vector<double> x(100);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = std::sin(2.0 * M_PI * 0.1 * static_cast<double>(i));
    const Spectrum spec = welch_psd(x);
    CHECK(spec.short_segment);
    CHECK(spec.seg_len == 100);
    CHECK_THROWS_AS(welch_psd(std::vector<double>(50, 1.0)), Error);
}

TEST_CASE("two equal tones give unit LF/HF ratio") {
    std::vector<double> x(2048);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto t = static_cast<double>(i);
        x[i] = std::sin(2.0 * M_PI * 0.1 * t) + std::sin(2.0 * M_PI * 0.3 * t);
    }
    const SpectralPowers p = band_powers(welch_psd(x));
    CHECK(p.lf_hf == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("savgol reproduces polynomials up to its order exactly") {
    std::vector<double> x(200);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = static_cast<double>(i) / 40.0 - 2.0;
        x[i] = 1.0 - 2.0 * t + 0.5 * t * t + 0.1 * t * t * t - 0.02 * t * t * t * t +
               0.005 * t * t * t * t * t;
    }
    const std::vector<double> s = savgol(x, 30, 5);
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        max_err = std::max(max_err, std::abs(s[i] - x[i]));
    CHECK(max_err < 1e-8); // including the truncated edge windows

    const std::vector<double> c = savgol(std::vector<double>(100, 3.5), 30, 5);
    for (const double v : c) CHECK(v == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("savgol attenuates noise within its passband") {
    // the 31-sample quintic smoother passes ~0.02 Hz nearly untouched, so the
    // residual against the clean curve is dominated by the reduced noise
    Rng rng(21);
    std::vector<double> clean(600), noisy(600);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        clean[i] = std::sin(2.0 * M_PI * 0.02 * static_cast<double>(i));
        noisy[i] = clean[i] + 0.5 * rng.normal();
    }
    const std::vector<double> s = savgol(noisy, 30, 5);
    double rss = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i)
        rss += (s[i] - clean[i]) * (s[i] - clean[i]);
    CHECK(std::sqrt(rss / clean.size()) < 0.25);
}

TEST_CASE("savgol rejects windows at or below the order") {
    CHECK_THROWS_AS(savgol(std::vector<double>(50, 1.0), 4, 5), Error);
}

TEST_CASE("find_peaks: monotone series has no peaks") {
    std::vector<double> x(50);
    std::iota(x.begin(), x.end(), 0.0);
    const RespirationPeaks p = find_peaks(x);
    CHECK(p.indices.empty());
    CHECK(p.prate == 0.0);
}

TEST_CASE("find_peaks counts every crest of a clean sinusoid") {
    std::vector<double> x(300);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = std::sin(2.0 * M_PI * 0.25 * static_cast<double>(i));
    const RespirationPeaks p = find_peaks(x);
    CHECK(std::abs(static_cast<int>(p.indices.size()) - 75) <= 1);
    CHECK(p.prate == doctest::Approx(15.0).epsilon(0.015));
    for (std::size_t i = 1; i < p.indices.size(); ++i)
        CHECK(p.indices[i] > p.indices[i - 1]);
}

TEST_CASE("find_peaks separates bumps by prominence and relief") {
    // taller bump passes both thresholds, the small one fails both
    Rng rng(31);
    std::vector<double> x(60);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto t = static_cast<double>(i);
        x[i] = std::exp(-0.5 * std::pow((t - 18.0) / 5.0, 2)) +
               0.2 * std::exp(-0.5 * std::pow((t - 45.0) / 5.0, 2)) + 0.1 * rng.normal();
    }
    const double sd = sample_sd(x);
    INFO("series sd = ", sd);
    CHECK(sd > 0.5 * 0.2); // the 0.5*SD prominence gate rejects the small bump
    const RespirationPeaks p = find_peaks(x);
    REQUIRE(p.indices.size() == 1);
    CHECK(std::abs(p.indices[0] - 18) <= 2);
}

TEST_CASE("find_peaks prate is stable under small noise") {
    std::vector<double> base(300);
    for (std::size_t i = 0; i < base.size(); ++i)
        base[i] = std::sin(2.0 * M_PI * 0.25 * static_cast<double>(i));
    const double clean_rate = find_peaks(base).prate;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed) + 100);
        std::vector<double> noisy(base);
        for (auto& v : noisy) v += 0.05 * rng.normal();
        const double rate = find_peaks(noisy).prate;
        CHECK(std::abs(rate - clean_rate) / clean_rate <= 0.05);
    }
}

TEST_CASE("find_peaks widths are measured at half prominence") {
    // one smooth gaussian bump: width at half prominence ~ 2.355 sigma
    std::vector<double> x(101, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = std::exp(-0.5 * std::pow((static_cast<double>(i) - 50.0) / 6.0, 2));
    const RespirationPeaks p = find_peaks(x);
    REQUIRE(p.indices.size() == 1);
    CHECK(p.widths_s[0] == doctest::Approx(2.355 * 6.0).epsilon(0.05));
    CHECK(p.mean_prominence == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("session_features subsets the registry by available signals") {
    Session s;
    s.meta = {"S1", 140, Sex::M};
    s.duration_s = 400.0;
    s.phases.push_back({PhaseLabel::Baseline, 0.0, 100.0});
    SignalTrace hr;
    hr.kind = SignalKind::HR;
    hr.rate_hz = 1.0;
    Rng rng(3);
    for (int i = 0; i < 400; ++i) hr.samples.push_back(70.0 + rng.normal());
    hr.valid.assign(hr.samples.size(), 1);
    s.traces.push_back(hr);

    const auto fvs = session_features(s, SegmentMode::Session);
    REQUIRE(fvs.size() == 1);
    CHECK(fvs[0].segment_label == "Session");
    CHECK(fvs[0].values.size() == 4); // hr_mean, hr_sd, hr_cv, hr_kurtosis
    for (const auto& [name, value] : fvs[0].values) {
        CHECK(name.substr(0, 3) == "hr_");
        CHECK(std::isfinite(value));
    }
}

TEST_CASE("session_features emits one vector per scenario") {
    Session s;
    s.meta = {"S1", 140, Sex::M};
    s.duration_s = 520.0;
    s.phases.push_back({PhaseLabel::Baseline, 0.0, 100.0});
    s.phases.push_back({PhaseLabel::Coin, 100.0, 240.0});
    s.phases.push_back({PhaseLabel::Station, 240.0, 380.0});
    s.phases.push_back({PhaseLabel::Battle, 380.0, 520.0});
    SignalTrace rr;
    rr.kind = SignalKind::RR;
    rr.rate_hz = 1.0;
    Rng rng(5);
    for (int i = 0; i < 520; ++i) rr.samples.push_back(750.0 + 30.0 * rng.normal());
    rr.valid.assign(rr.samples.size(), 1);
    s.traces.push_back(rr);

    const auto fvs = session_features(s, SegmentMode::Scenario);
    REQUIRE(fvs.size() == 3);
    CHECK(fvs[0].segment_label == "Coin");
    CHECK(fvs[1].segment_label == "Station");
    CHECK(fvs[2].segment_label == "Battle");
    for (const auto& fv : fvs) {
        CHECK(fv.welch_short_segment); // 140 s slices fall back to one segment
        CHECK(fv.values.count("rr_sdnn") == 1);
        CHECK(fv.values.count("rr_tp") == 1);
        CHECK(fv.values.count("hr_mean") == 0);
    }
}

TEST_CASE("feature registry holds exactly the 23 closed names") {
    CHECK(feature_registry().size() == 23);
}
