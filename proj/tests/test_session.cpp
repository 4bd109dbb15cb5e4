#include <doctest.h>

#include <cmath>

#include "biosession/rng.hpp"
#include "biosession/session.hpp"
#include "biosession/synth.hpp"

using namespace biosession;

namespace {

std::string minimal_doc() {
    return R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "S01", "age_months": 140, "sex": "M"},
      "session_index": 1,
      "duration_s": 600,
      "signals": [{"kind": "HR", "rate_hz": 1.0, "t0": 0.0, "samples": [70, 71, 72]}]
    })";
}

Session ramp_session(double duration_s, double rate_hz) {
    Session s;
    s.meta = {"S01", 140, Sex::M};
    s.session_index = 1;
    s.duration_s = duration_s;
    SignalTrace t;
    t.kind = SignalKind::HR;
    t.rate_hz = rate_hz;
    const auto n = static_cast<std::size_t>(duration_s * rate_hz);
    for (std::size_t i = 0; i < n; ++i) t.samples.push_back(static_cast<double>(i));
    t.valid.assign(n, 1);
    s.traces.push_back(t);
    return s;
}

} // namespace

TEST_CASE("parse_session accepts the smallest valid document") {
    const Session s = parse_session(minimal_doc());
    CHECK(s.traces.size() == 1);
    CHECK(s.traces[0].kind == SignalKind::HR);
    CHECK(s.traces[0].samples.size() == 3);
    CHECK(s.traces[0].all_valid()); // omitted mask means all-valid
    CHECK(!s.behavior.has_value());
    CHECK(!s.clinical.has_value());
}

TEST_CASE("parse_session reads baseline and scenario phases") {
    const std::string doc = R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "S01", "age_months": 140, "sex": "F"},
      "session_index": 2,
      "duration_s": 600,
      "phases": [
        {"label": "Baseline", "start_s": 0, "end_s": 119},
        {"label": "Coin", "start_s": 119, "end_s": 600}
      ],
      "signals": [{"kind": "RR", "rate_hz": 1.0, "samples": [700, 705, 710]}]
    })";
    const Session s = parse_session(doc);
    REQUIRE(s.phases.size() == 2);
    CHECK(s.phases[0].label == PhaseLabel::Baseline);
    CHECK(s.phases[0].end_s == 119.0);
    CHECK(s.phases[1].label == PhaseLabel::Coin);
}

TEST_CASE("parse_session rejects a broken prompted sum") {
    const std::string doc = R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "S01", "age_months": 140, "sex": "M"},
      "session_index": 1,
      "duration_s": 600,
      "behavior": {
        "duration_min": 30,
        "counts": {"SO_Peers": {"Spontaneous": 4, "Suggested": 1, "Indicated": 1, "Prompted": 3}}
      }
    })";
    try {
        parse_session(doc);
        FAIL("expected InvariantError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Invariant);
        CHECK(std::string(e.what()).find("Prompted") != std::string::npos);
    }
}

TEST_CASE("parse_session error carries the field path") {
    const std::string doc = R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "S01", "age_months": 140, "sex": "M"},
      "session_index": 1,
      "duration_s": 600,
      "signals": [{"kind": "HR", "samples": [1]}]
    })";
    try {
        parse_session(doc);
        FAIL("expected SchemaError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Schema);
        CHECK(std::string(e.what()).find("$.signals[0].rate_hz") != std::string::npos);
    }
}

TEST_CASE("parse_session rejects structural violations") {
    auto expect_code = [](const std::string& doc, ErrorCode code) {
        try {
            parse_session(doc);
            FAIL_CHECK("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == code);
        }
    };
    expect_code(R"({"schema": "other/9"})", ErrorCode::Schema);
    expect_code("not json at all", ErrorCode::Schema);
    // overlapping phases
    expect_code(R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "x", "age_months": 10, "sex": "M"},
      "session_index": 1, "duration_s": 600,
      "phases": [{"label": "Coin", "start_s": 0, "end_s": 300},
                 {"label": "Battle", "start_s": 200, "end_s": 400}]})",
                ErrorCode::Invariant);
    // two baselines
    expect_code(R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "x", "age_months": 10, "sex": "M"},
      "session_index": 1, "duration_s": 600,
      "phases": [{"label": "Baseline", "start_s": 0, "end_s": 100},
                 {"label": "Baseline", "start_s": 100, "end_s": 200}]})",
                ErrorCode::Invariant);
    // session index out of range
    expect_code(R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "x", "age_months": 10, "sex": "M"},
      "session_index": 4, "duration_s": 600})",
                ErrorCode::Invariant);
    // duplicate trace kind
    expect_code(R"({
      "schema": "biosession/1",
      "meta": {"subject_id": "x", "age_months": 10, "sex": "M"},
      "session_index": 1, "duration_s": 600,
      "signals": [{"kind": "HR", "rate_hz": 1, "samples": [1]},
                  {"kind": "HR", "rate_hz": 1, "samples": [2]}]})",
                ErrorCode::Invariant);
}

TEST_CASE("round trip preserves sessions structurally") {
    synth::SynthSpec spec;
    spec.seed = 11;
    spec.gaps.count = 3;
    const Session original = synth::gen_session(spec).session;
    const Session round = parse_session(serialize_session(original));
    CHECK(round == original);

    const Session small = parse_session(minimal_doc());
    CHECK(parse_session(serialize_session(small)) == small);
}

TEST_CASE("validate_session reports pass, warnings and failures") {
    Session s = ramp_session(600, 1.0);
    s.phases.push_back({PhaseLabel::Baseline, 0.0, 119.0});
    ValidationReport r = validate_session(s);
    CHECK(r.pass);
    CHECK(r.warnings.empty());

    Session no_baseline = ramp_session(600, 1.0);
    r = validate_session(no_baseline);
    CHECK(r.pass);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("baseline") != std::string::npos);

    Session sparse = ramp_session(600, 1.0);
    sparse.phases.push_back({PhaseLabel::Baseline, 0.0, 119.0});
    for (std::size_t i = 200; i < 560; ++i) sparse.traces[0].valid[i] = 0; // 60% missing
    r = validate_session(sparse);
    CHECK(r.pass);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("exclusion") != std::string::npos);
}

TEST_CASE("slice_phase covers [start, end) at the trace rate") {
    Session s = ramp_session(600, 1.0);
    s.phases.push_back({PhaseLabel::Baseline, 0.0, 119.0});
    s.phases.push_back({PhaseLabel::Coin, 119.0, 300.0});

    const SignalTrace baseline = slice_phase(s, SignalKind::HR, PhaseLabel::Baseline);
    CHECK(baseline.samples.size() == 119);
    CHECK(baseline.t0 == 0.0);

    // direct-indexing oracle: the ramp value equals the global sample index
    const SignalTrace coin = slice_phase(s, SignalKind::HR, PhaseLabel::Coin);
    CHECK(coin.samples.size() == 181);
    CHECK(coin.t0 == 119.0);
    CHECK(coin.samples.front() == 119.0);
    CHECK(coin.samples.back() == 299.0);

    CHECK_THROWS_AS(slice_phase(s, SignalKind::BF, PhaseLabel::Coin), Error);
    CHECK_THROWS_AS(slice_phase(s, SignalKind::HR, PhaseLabel::Battle), Error);

    // zero intersection with the trace extent
    Session late = ramp_session(100, 1.0);
    late.duration_s = 600;
    late.phases.push_back({PhaseLabel::Coin, 400.0, 500.0});
    CHECK_THROWS_AS(slice_phase(late, SignalKind::HR, PhaseLabel::Coin), Error);
}

TEST_CASE("slice length matches the window and concatenation is exact") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const double rate = std::vector<double>{1.0, 32.0, 128.0}[trial % 3];
        const double duration = 200.0 + std::floor(rng.uniform(0.0, 100.0));
        Session s = ramp_session(duration, rate);
        const double a = std::floor(rng.uniform(1.0, 50.0));
        const double b = a + std::floor(rng.uniform(10.0, 100.0));
        const double c = b + std::floor(rng.uniform(10.0, 90.0));
        s.phases.push_back({PhaseLabel::Coin, a, b});
        s.phases.push_back({PhaseLabel::Station, b, c});

        const SignalTrace left = slice_phase(s, SignalKind::HR, PhaseLabel::Coin);
        const SignalTrace right = slice_phase(s, SignalKind::HR, PhaseLabel::Station);
        const SignalTrace merged = slice_range(s.traces[0], a, c);

        CHECK(std::abs(static_cast<double>(left.samples.size()) - (b - a) * rate) <= 1.0);
        REQUIRE(left.samples.size() + right.samples.size() == merged.samples.size());
        for (std::size_t i = 0; i < left.samples.size(); ++i)
            CHECK(merged.samples[i] == left.samples[i]);
        for (std::size_t i = 0; i < right.samples.size(); ++i)
            CHECK(merged.samples[left.samples.size() + i] == right.samples[i]);
    }
}

TEST_CASE("behavior_rates yields the 13 per-minute rates") {
    BehavioralRecord b;
    b.duration_min = 30.0;
    b.counts["SO_Peers"][Condition::Spontaneous] = 12.0;
    const std::vector<BehaviorRate> rates = behavior_rates(b);
    CHECK(rates.size() == 13);

    int so_therapist = 0;
    double so_peers_spont = -1.0;
    int zero_rates = 0;
    for (const auto& r : rates) {
        if (r.feature == "SO_Therapist") ++so_therapist;
        if (r.feature == "SO_Peers" && r.condition == Condition::Spontaneous)
            so_peers_spont = r.rate_per_min;
        if (r.rate_per_min == 0.0) ++zero_rates;
    }
    CHECK(so_therapist == 1); // spontaneous only
    CHECK(so_peers_spont == doctest::Approx(0.4));
    CHECK(zero_rates == 12);

    BehavioralRecord zero;
    zero.duration_min = 10.0;
    for (const auto& r : behavior_rates(zero)) CHECK(r.rate_per_min == 0.0);

    BehavioralRecord bad;
    bad.duration_min = 0.0;
    CHECK_THROWS_AS(behavior_rates(bad), Error);
}

TEST_CASE("behavior_rates is homogeneous of degree -1 in duration") {
    BehavioralRecord b;
    b.duration_min = 17.0;
    b.counts["SO_Peers"][Condition::Spontaneous] = 9.0;
    b.counts["SR_Peers"][Condition::Suggested] = 4.0;
    b.counts["SR_Therapist"][Condition::Prompted] = 6.0;
    BehavioralRecord doubled = b;
    doubled.duration_min = 34.0;

    const auto r1 = behavior_rates(b);
    const auto r2 = behavior_rates(doubled);
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i)
        CHECK(r2[i].rate_per_min == r1[i].rate_per_min / 2.0);
}

TEST_CASE("age group boundary sits at 156 months") {
    ParticipantMeta m{"x", 155, Sex::M};
    CHECK(m.age_group() == AgeGroup::PreAdolescent);
    m.age_months = 156;
    CHECK(m.age_group() == AgeGroup::Adolescent);
}
