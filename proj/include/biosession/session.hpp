#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biosession/error.hpp"

namespace biosession {

// ============================================================================
// Domain types for one recorded sitting: signals, phases, participant,
// behavioral observations. Immutable by convention after construction.
// ============================================================================

enum class SignalKind { HR, RR, BF };
enum class PhaseLabel { Baseline, Coin, Station, Battle };
enum class Sex { M, F };
enum class AgeGroup { PreAdolescent, Adolescent };
enum class Condition { Spontaneous, Suggested, Indicated, Prompted };

const char* to_string(SignalKind k);
const char* to_string(PhaseLabel l);
const char* to_string(Sex s);
const char* to_string(AgeGroup g);
const char* to_string(Condition c);

SignalKind signal_kind_from_string(const std::string& s);
PhaseLabel phase_label_from_string(const std::string& s);
Sex sex_from_string(const std::string& s);
Condition condition_from_string(const std::string& s);

/// Uniform-rate series with a per-sample validity mask. Samples with
/// valid == 0 are excluded from every statistic until interpolation fills
/// them; sentinel values are never used.
struct SignalTrace {
    SignalKind kind = SignalKind::HR;
    double rate_hz = 1.0;
    double t0 = 0.0; // seconds from session start
    std::vector<double> samples;
    std::vector<std::uint8_t> valid;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return rate_hz > 0 ? samples.size() / rate_hz : 0.0; }
    bool all_valid() const;

    bool operator==(const SignalTrace&) const = default;
};

struct PhaseAnnotation {
    PhaseLabel label = PhaseLabel::Baseline;
    double start_s = 0.0;
    double end_s = 0.0;

    bool operator==(const PhaseAnnotation&) const = default;
};

/// Age-group boundary: 156 months inclusive to Adolescent.
inline constexpr int kAdolescentBoundaryMonths = 156;

struct ParticipantMeta {
    std::string subject_id;
    int age_months = 0;
    Sex sex = Sex::M;

    AgeGroup age_group() const {
        return age_months >= kAdolescentBoundaryMonths ? AgeGroup::Adolescent
                                                       : AgeGroup::PreAdolescent;
    }

    bool operator==(const ParticipantMeta&) const = default;
};

struct ClinicalProfile {
    double ados_comparison = 0, ados_total = 0, ados_sa = 0;
    double iq = 0, vci = 0, pri = 0, wmi = 0, psi = 0;

    bool operator==(const ClinicalProfile&) const = default;
};

// Social-interaction count features and Likert-scored experience features.
extern const std::vector<std::string> kCountFeatures;  // SO_Peers, SR_Peers, SO_Therapist, SR_Therapist
extern const std::vector<std::string> kLikertFeatures; // Adaptation_Diff, VS_Diff, Involvement, Relation_PP, Instructions
extern const std::vector<Condition> kConditions;

/// Observation-form record for one session. SO_Therapist carries only the
/// Spontaneous condition; for every feature carrying all three,
/// Prompted = Suggested + Indicated.
struct BehavioralRecord {
    std::map<std::string, std::map<Condition, double>> counts;
    std::map<std::string, int> likert; // 0..5
    double duration_min = 0.0;

    bool operator==(const BehavioralRecord&) const = default;
};

struct Session {
    ParticipantMeta meta;
    std::optional<ClinicalProfile> clinical;
    int session_index = 1; // 1..3
    double duration_s = 0.0;
    std::vector<SignalTrace> traces;
    std::vector<PhaseAnnotation> phases;
    std::optional<BehavioralRecord> behavior;

    const SignalTrace* find_trace(SignalKind kind) const;
    const PhaseAnnotation* find_phase(PhaseLabel label) const;

    bool operator==(const Session&) const = default;
};

// ============================================================================
// Operations
// ============================================================================

/// Parse one `biosession/1` JSON document. Unknown fields are ignored;
/// missing optional blocks yield absent members. Throws Error with code
/// Schema (missing/ill-typed field) or Invariant (value-level violation),
/// message carries the field path.
Session parse_session(const std::string& json_text);

/// Inverse of parse_session up to structural equality.
std::string serialize_session(const Session& s, int indent = -1);

struct ValidationReport {
    bool pass = true;
    std::vector<std::string> failures;
    std::vector<std::string> warnings;
};

/// Soft validation: failures for hard invariant violations, warnings for
/// conditions that degrade the pipeline (no Baseline phase, missing ratio
/// above the exclusion threshold).
ValidationReport validate_session(const Session& s,
                                  double missing_warn_ratio = 0.5);

/// Sub-trace covering [start_s, end_s) of the given phase at the trace's
/// rate, t0 = phase start. Throws NotFound if the kind or label is absent
/// or the phase does not intersect the trace extent.
SignalTrace slice_phase(const Session& s, SignalKind kind, PhaseLabel label);

/// Sub-trace covering [start_s, end_s) of an arbitrary window.
SignalTrace slice_range(const SignalTrace& t, double start_s, double end_s);

struct BehaviorRate {
    std::string feature;
    Condition condition;
    double rate_per_min;
};

/// The 13 per-minute rates: 4 conditions for SO_Peers/SR_Peers/SR_Therapist,
/// Spontaneous only for SO_Therapist. Deterministic order.
std::vector<BehaviorRate> behavior_rates(const BehavioralRecord& b);

} // namespace biosession
