#include "biosession/session.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "biosession/numeric.hpp"

namespace biosession {

using nlohmann::json;

const std::vector<std::string> kCountFeatures = {"SO_Peers", "SR_Peers", "SO_Therapist",
                                                 "SR_Therapist"};
const std::vector<std::string> kLikertFeatures = {"Adaptation_Diff", "VS_Diff", "Involvement",
                                                  "Relation_PP", "Instructions"};
const std::vector<Condition> kConditions = {Condition::Spontaneous, Condition::Suggested,
                                            Condition::Indicated, Condition::Prompted};

const char* to_string(SignalKind k) {
    switch (k) {
        case SignalKind::HR: return "HR";
        case SignalKind::RR: return "RR";
        case SignalKind::BF: return "BF";
    }
    return "?";
}

const char* to_string(PhaseLabel l) {
    switch (l) {
        case PhaseLabel::Baseline: return "Baseline";
        case PhaseLabel::Coin: return "Coin";
        case PhaseLabel::Station: return "Station";
        case PhaseLabel::Battle: return "Battle";
    }
    return "?";
}

const char* to_string(Sex s) { return s == Sex::M ? "M" : "F"; }

const char* to_string(AgeGroup g) {
    return g == AgeGroup::PreAdolescent ? "PreAdolescent" : "Adolescent";
}

const char* to_string(Condition c) {
    switch (c) {
        case Condition::Spontaneous: return "Spontaneous";
        case Condition::Suggested: return "Suggested";
        case Condition::Indicated: return "Indicated";
        case Condition::Prompted: return "Prompted";
    }
    return "?";
}

namespace {

template <typename Enum>
Enum enum_from_string(const std::string& s, std::initializer_list<Enum> values,
                      const std::string& what) {
    for (Enum v : values)
        if (s == to_string(v)) return v;
    throw Error(ErrorCode::Schema, what + ": unknown value '" + s + "'");
}

} // namespace

SignalKind signal_kind_from_string(const std::string& s) {
    return enum_from_string(s, {SignalKind::HR, SignalKind::RR, SignalKind::BF}, "signal kind");
}

PhaseLabel phase_label_from_string(const std::string& s) {
    return enum_from_string(
        s, {PhaseLabel::Baseline, PhaseLabel::Coin, PhaseLabel::Station, PhaseLabel::Battle},
        "phase label");
}

Sex sex_from_string(const std::string& s) { return enum_from_string(s, {Sex::M, Sex::F}, "sex"); }

Condition condition_from_string(const std::string& s) {
    return enum_from_string(s,
                            {Condition::Spontaneous, Condition::Suggested, Condition::Indicated,
                             Condition::Prompted},
                            "condition");
}

bool SignalTrace::all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
}

const SignalTrace* Session::find_trace(SignalKind kind) const {
    for (const auto& t : traces)
        if (t.kind == kind) return &t;
    return nullptr;
}

const PhaseAnnotation* Session::find_phase(PhaseLabel label) const {
    for (const auto& p : phases)
        if (p.label == label) return &p;
    return nullptr;
}

// ============================================================================
// Parsing
// ============================================================================

namespace {

const json& require(const json& j, const char* key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end())
        throw Error(ErrorCode::Schema, path + "." + key + " is required");
    return *it;
}

double require_number(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_number())
        throw Error(ErrorCode::Schema, path + "." + key + " must be a number");
    return v.get<double>();
}

std::string require_string(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_string())
        throw Error(ErrorCode::Schema, path + "." + key + " must be a string");
    return v.get<std::string>();
}

SignalTrace parse_trace(const json& j, const std::string& path) {
    SignalTrace t;
    t.kind = signal_kind_from_string(require_string(j, "kind", path));
    t.rate_hz = require_number(j, "rate_hz", path);
    t.t0 = j.value("t0", 0.0);
    const json& samples = require(j, "samples", path);
    if (!samples.is_array())
        throw Error(ErrorCode::Schema, path + ".samples must be an array");
    t.samples.reserve(samples.size());
    for (const auto& v : samples) {
        if (!v.is_number())
            throw Error(ErrorCode::Schema, path + ".samples must contain numbers");
        t.samples.push_back(v.get<double>());
    }
    if (auto it = j.find("valid"); it != j.end()) {
        if (!it->is_array())
            throw Error(ErrorCode::Schema, path + ".valid must be an array");
        t.valid.reserve(it->size());
        for (const auto& v : *it) t.valid.push_back(v.get<bool>() ? 1 : 0);
    } else {
        t.valid.assign(t.samples.size(), 1); // omitted mask means all-valid
    }
    if (t.samples.empty())
        throw Error(ErrorCode::Invariant, path + ".samples must be non-empty");
    if (t.valid.size() != t.samples.size())
        throw Error(ErrorCode::Invariant, path + ": samples and valid lengths differ");
    if (!(t.rate_hz > 0))
        throw Error(ErrorCode::Invariant, path + ".rate_hz must be > 0");
    return t;
}

BehavioralRecord parse_behavior(const json& j, const std::string& path) {
    BehavioralRecord b;
    b.duration_min = require_number(j, "duration_min", path);
    if (!(b.duration_min > 0))
        throw Error(ErrorCode::Invariant, path + ".duration_min must be > 0");
    if (auto it = j.find("counts"); it != j.end()) {
        for (const auto& [feature, conds] : it->items()) {
            if (std::find(kCountFeatures.begin(), kCountFeatures.end(), feature) ==
                kCountFeatures.end())
                continue; // unknown features ignored
            for (const auto& [cond, value] : conds.items()) {
                const Condition c = condition_from_string(cond);
                if (!value.is_number())
                    throw Error(ErrorCode::Schema,
                                path + ".counts." + feature + "." + cond + " must be a number");
                const double v = value.get<double>();
                if (v < 0)
                    throw Error(ErrorCode::Invariant,
                                path + ".counts." + feature + "." + cond + " must be >= 0");
                b.counts[feature][c] = v;
            }
        }
    }
    for (const auto& [feature, conds] : b.counts) {
        if (feature == "SO_Therapist") {
            for (const auto& [c, v] : conds)
                if (c != Condition::Spontaneous)
                    throw Error(ErrorCode::Invariant,
                                path + ".counts.SO_Therapist carries only Spontaneous");
            continue;
        }
        const auto sug = conds.find(Condition::Suggested);
        const auto ind = conds.find(Condition::Indicated);
        const auto pro = conds.find(Condition::Prompted);
        if (sug != conds.end() && ind != conds.end() && pro != conds.end() &&
            std::abs(pro->second - (sug->second + ind->second)) > 1e-9)
            throw Error(ErrorCode::Invariant, path + ".counts." + feature +
                                                  ".Prompted must equal Suggested + Indicated");
    }
    if (auto it = j.find("likert"); it != j.end()) {
        for (const auto& [feature, value] : it->items()) {
            if (std::find(kLikertFeatures.begin(), kLikertFeatures.end(), feature) ==
                kLikertFeatures.end())
                continue;
            if (!value.is_number_integer())
                throw Error(ErrorCode::Schema, path + ".likert." + feature + " must be an integer");
            const int v = value.get<int>();
            if (v < 0 || v > 5)
                throw Error(ErrorCode::Invariant, path + ".likert." + feature + " must be in 0..5");
            b.likert[feature] = v;
        }
    }
    return b;
}

} // namespace

Session parse_session(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Schema, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::Schema, "top level must be an object");

    const std::string schema = require_string(j, "schema", "$");
    if (schema != "biosession/1")
        throw Error(ErrorCode::Schema, "$.schema must be \"biosession/1\", got \"" + schema + "\"");

    Session s;
    const json& meta = require(j, "meta", "$");
    s.meta.subject_id = require_string(meta, "subject_id", "$.meta");
    s.meta.age_months = static_cast<int>(require_number(meta, "age_months", "$.meta"));
    s.meta.sex = sex_from_string(require_string(meta, "sex", "$.meta"));
    if (s.meta.age_months < 0)
        throw Error(ErrorCode::Invariant, "$.meta.age_months must be >= 0");

    if (auto it = j.find("clinical"); it != j.end() && !it->is_null()) {
        ClinicalProfile c;
        c.ados_comparison = it->value("ados_comparison", 0.0);
        c.ados_total = it->value("ados_total", 0.0);
        c.ados_sa = it->value("ados_sa", 0.0);
        c.iq = it->value("iq", 0.0);
        c.vci = it->value("vci", 0.0);
        c.pri = it->value("pri", 0.0);
        c.wmi = it->value("wmi", 0.0);
        c.psi = it->value("psi", 0.0);
        for (double v : {c.ados_comparison, c.ados_total, c.ados_sa, c.iq, c.vci, c.pri, c.wmi,
                         c.psi})
            if (!std::isfinite(v))
                throw Error(ErrorCode::Invariant, "$.clinical scores must be finite");
        if (c.iq < 0) throw Error(ErrorCode::Invariant, "$.clinical.iq must be >= 0");
        s.clinical = c;
    }

    s.session_index = static_cast<int>(require_number(j, "session_index", "$"));
    if (s.session_index < 1 || s.session_index > 3)
        throw Error(ErrorCode::Invariant, "$.session_index must be in {1,2,3}");

    s.duration_s = require_number(j, "duration_s", "$");
    if (!(s.duration_s > 0))
        throw Error(ErrorCode::Invariant, "$.duration_s must be > 0");

    if (auto it = j.find("phases"); it != j.end()) {
        if (!it->is_array()) throw Error(ErrorCode::Schema, "$.phases must be an array");
        int idx = 0;
        for (const auto& pj : *it) {
            const std::string path = "$.phases[" + std::to_string(idx++) + "]";
            PhaseAnnotation p;
            p.label = phase_label_from_string(require_string(pj, "label", path));
            p.start_s = require_number(pj, "start_s", path);
            p.end_s = require_number(pj, "end_s", path);
            if (!(p.start_s >= 0 && p.start_s < p.end_s && p.end_s <= s.duration_s))
                throw Error(ErrorCode::Invariant,
                            path + ": need 0 <= start_s < end_s <= duration_s");
            s.phases.push_back(p);
        }
        auto sorted = s.phases;
        std::sort(sorted.begin(), sorted.end(),
                  [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
        for (std::size_t i = 1; i < sorted.size(); ++i)
            if (sorted[i].start_s < sorted[i - 1].end_s - 1e-9)
                throw Error(ErrorCode::Invariant,
                            std::string("$.phases: ") + to_string(sorted[i - 1].label) + " and " +
                                to_string(sorted[i].label) + " overlap");
        int n_baseline = 0;
        for (const auto& p : s.phases)
            if (p.label == PhaseLabel::Baseline) ++n_baseline;
        if (n_baseline > 1)
            throw Error(ErrorCode::Invariant, "$.phases: at most one Baseline");
    }

    if (auto it = j.find("signals"); it != j.end()) {
        if (!it->is_array()) throw Error(ErrorCode::Schema, "$.signals must be an array");
        int idx = 0;
        std::set<SignalKind> seen;
        for (const auto& tj : *it) {
            const std::string path = "$.signals[" + std::to_string(idx++) + "]";
            SignalTrace t = parse_trace(tj, path);
            if (!seen.insert(t.kind).second)
                throw Error(ErrorCode::Invariant,
                            path + ": duplicate trace for kind " + to_string(t.kind));
            s.traces.push_back(std::move(t));
        }
    }

    if (auto it = j.find("behavior"); it != j.end() && !it->is_null())
        s.behavior = parse_behavior(*it, "$.behavior");

    return s;
}

std::string serialize_session(const Session& s, int indent) {
    json j;
    j["schema"] = "biosession/1";
    j["meta"] = {{"subject_id", s.meta.subject_id},
                 {"age_months", s.meta.age_months},
                 {"sex", to_string(s.meta.sex)}};
    if (s.clinical) {
        const auto& c = *s.clinical;
        j["clinical"] = {{"ados_comparison", c.ados_comparison},
                         {"ados_total", c.ados_total},
                         {"ados_sa", c.ados_sa},
                         {"iq", c.iq},
                         {"vci", c.vci},
                         {"pri", c.pri},
                         {"wmi", c.wmi},
                         {"psi", c.psi}};
    }
    j["session_index"] = s.session_index;
    j["duration_s"] = s.duration_s;
    j["phases"] = json::array();
    for (const auto& p : s.phases)
        j["phases"].push_back(
            {{"label", to_string(p.label)}, {"start_s", p.start_s}, {"end_s", p.end_s}});
    j["signals"] = json::array();
    for (const auto& t : s.traces) {
        json tj = {{"kind", to_string(t.kind)},
                   {"rate_hz", t.rate_hz},
                   {"t0", t.t0},
                   {"samples", t.samples}};
        if (!t.all_valid()) {
            json mask = json::array();
            for (auto v : t.valid) mask.push_back(v != 0);
            tj["valid"] = mask;
        }
        j["signals"].push_back(std::move(tj));
    }
    if (s.behavior) {
        const auto& b = *s.behavior;
        json bj;
        bj["duration_min"] = b.duration_min;
        json counts = json::object();
        for (const auto& [feature, conds] : b.counts) {
            json cj = json::object();
            for (const auto& [c, v] : conds) cj[to_string(c)] = v;
            counts[feature] = std::move(cj);
        }
        bj["counts"] = std::move(counts);
        json likert = json::object();
        for (const auto& [feature, v] : b.likert) likert[feature] = v;
        bj["likert"] = std::move(likert);
        j["behavior"] = std::move(bj);
    }
    return indent >= 0 ? j.dump(indent) : j.dump();
}

// ============================================================================
// Validation, slicing, rates
// ============================================================================

ValidationReport validate_session(const Session& s, double missing_warn_ratio) {
    ValidationReport r;
    if (s.session_index < 1 || s.session_index > 3)
        r.failures.push_back("session_index out of range");
    if (!(s.duration_s > 0)) r.failures.push_back("duration_s must be > 0");
    std::set<SignalKind> seen;
    for (const auto& t : s.traces) {
        if (!seen.insert(t.kind).second)
            r.failures.push_back(std::string("duplicate trace kind ") + to_string(t.kind));
        if (t.samples.empty() || t.samples.size() != t.valid.size())
            r.failures.push_back(std::string(to_string(t.kind)) + " trace: bad sample/mask shape");
        if (!(t.rate_hz > 0))
            r.failures.push_back(std::string(to_string(t.kind)) + " trace: rate_hz must be > 0");
    }
    auto sorted = s.phases;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].start_s < sorted[i - 1].end_s - 1e-9)
            r.failures.push_back("phases overlap");
    if (!s.find_phase(PhaseLabel::Baseline))
        r.warnings.push_back("no baseline phase: z-normalization will be impossible");
    for (const auto& t : s.traces) {
        if (t.samples.empty()) continue;
        const double invalid =
            static_cast<double>(std::count(t.valid.begin(), t.valid.end(), std::uint8_t{0}));
        const double ratio = invalid / static_cast<double>(t.valid.size());
        if (ratio > missing_warn_ratio)
            r.warnings.push_back(std::string(to_string(t.kind)) + " trace: missing ratio " +
                                 std::to_string(ratio) +
                                 " exceeds exclusion threshold, trace will be dropped");
    }
    r.pass = r.failures.empty();
    return r;
}

SignalTrace slice_range(const SignalTrace& t, double start_s, double end_s) {
    // sample i sits at time t0 + i/rate; keep samples in [start_s, end_s)
    const double rate = t.rate_hz;
    const auto n = static_cast<std::ptrdiff_t>(t.samples.size());
    auto first = static_cast<std::ptrdiff_t>(std::ceil((start_s - t.t0) * rate - 1e-9));
    auto last = static_cast<std::ptrdiff_t>(std::ceil((end_s - t.t0) * rate - 1e-9)); // exclusive
    first = std::max<std::ptrdiff_t>(first, 0);
    last = std::min(last, n);
    if (first >= last)
        throw Error(ErrorCode::NotFound, "window has no intersection with trace extent");
    SignalTrace out;
    out.kind = t.kind;
    out.rate_hz = rate;
    out.t0 = t.t0 + static_cast<double>(first) / rate;
    out.samples.assign(t.samples.begin() + first, t.samples.begin() + last);
    out.valid.assign(t.valid.begin() + first, t.valid.begin() + last);
    return out;
}

SignalTrace slice_phase(const Session& s, SignalKind kind, PhaseLabel label) {
    const SignalTrace* t = s.find_trace(kind);
    if (!t)
        throw Error(ErrorCode::NotFound, std::string("no trace of kind ") + to_string(kind));
    const PhaseAnnotation* p = s.find_phase(label);
    if (!p)
        throw Error(ErrorCode::NotFound, std::string("no phase labeled ") + to_string(label));
    SignalTrace out = slice_range(*t, p->start_s, p->end_s);
    out.t0 = p->start_s;
    return out;
}

std::vector<BehaviorRate> behavior_rates(const BehavioralRecord& b) {
    if (!(b.duration_min > 0))
        throw Error(ErrorCode::ZeroDuration, "duration_min must be > 0");
    std::vector<BehaviorRate> out;
    for (const auto& feature : kCountFeatures) {
        const auto conds_it = b.counts.find(feature);
        const bool therapist_opening = feature == "SO_Therapist";
        for (Condition c : kConditions) {
            if (therapist_opening && c != Condition::Spontaneous) continue;
            double count = 0.0;
            if (conds_it != b.counts.end()) {
                if (auto it = conds_it->second.find(c); it != conds_it->second.end())
                    count = it->second;
            }
            out.push_back({feature, c, count / b.duration_min});
        }
    }
    return out;
}

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::Schema: return "SchemaError";
        case ErrorCode::Invariant: return "InvariantError";
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::ZeroDuration: return "ZeroDuration";
        case ErrorCode::CutoffTooHigh: return "CutoffTooHigh";
        case ErrorCode::EmptyTrace: return "EmptyTrace";
        case ErrorCode::TooSparse: return "TooSparse";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
        case ErrorCode::DegeneratePipeline: return "DegeneratePipeline";
        case ErrorCode::WindowTooSmall: return "WindowTooSmall";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::ConstantInput: return "ConstantInput";
        case ErrorCode::SingleGroup: return "SingleGroup";
        case ErrorCode::DegenerateAgreement: return "DegenerateAgreement";
        case ErrorCode::MissingCells: return "MissingCells";
        case ErrorCode::AllZeroDiffs: return "AllZeroDiffs";
        case ErrorCode::EmptyGroup: return "EmptyGroup";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::NotConverged: return "NotConverged";
        case ErrorCode::ZeroVariance: return "ZeroVariance";
        case ErrorCode::PerplexityTooLarge: return "PerplexityTooLarge";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::SingletonOnly: return "SingletonOnly";
        case ErrorCode::CoincidentCentroids: return "CoincidentCentroids";
        case ErrorCode::SpecError: return "SpecError";
        case ErrorCode::IncompleteBundle: return "IncompleteBundle";
        case ErrorCode::Io: return "IoError";
    }
    return "Error";
}

} // namespace biosession
