#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biosession/session.hpp"

namespace biosession {

struct PreprocessConfig {
    double lp_cutoff_hz = 0.45;
    int lp_order = 4;
    double target_rate_hz = 1.0;
    double missing_exclusion_ratio = 0.5; // strict >: equality retains the trace
    double winsor_fraction = 0.05;
    int rf_trees = 100;
    int rf_max_depth = 0; // unlimited
    std::uint64_t rf_seed = 20230315;
};

struct BaselineStats {
    double mean = 0.0;
    double sd = 0.0;
};

/// Zero-phase (forward-backward) Butterworth low-pass. Invalid samples pass
/// through unchanged and stay masked; for the filter pass they are bridged by
/// linear interpolation so gap contents cannot contaminate the valid region.
SignalTrace lowpass(const SignalTrace& trace, const PreprocessConfig& cfg);

/// Linear interpolation onto the integer-second grid. An output sample is
/// masked invalid when either immediately bracketing input sample is invalid.
SignalTrace resample_to_1hz(const SignalTrace& trace);

/// Invalid-sample fraction in [0, 1].
double missing_ratio(const SignalTrace& trace);

/// Replace every invalid sample with a random-forest regression prediction;
/// valid samples are untouched and the output mask is all-true. Features per
/// position: normalized time, sin/cos of time at 60 s / 300 s / whole-trace
/// periods, rolling mean and SD of the 5 nearest valid neighbors per side.
SignalTrace rf_interpolate(const SignalTrace& trace, const PreprocessConfig& cfg);

/// Winsorize the baseline segment at the [winsor, 1-winsor] percentiles and
/// return mean and sample SD of the winsorized values.
BaselineStats baseline_stats(const SignalTrace& baseline_segment, double winsor_fraction);

/// x -> (x - mean)/sd on every sample; mask unchanged.
SignalTrace normalize(const SignalTrace& trace, const BaselineStats& stats);

struct TraceLog {
    SignalKind kind = SignalKind::HR;
    double missing_ratio = 0.0;
    bool dropped = false;
    std::string drop_reason;
    double baseline_mean = 0.0;
    double baseline_sd = 0.0;
};

struct PreprocessLog {
    std::vector<TraceLog> traces;

    /// One JSON object per line, one line per trace.
    std::string to_json_lines() const;
};

struct PreprocessResult {
    Session session; // traces replaced by 1 Hz normalized versions
    PreprocessLog log;
};

/// Fixed order: lowpass -> resample -> missing check -> interpolate ->
/// baseline stats -> normalize. A trace above the missing threshold is
/// dropped and logged, not an error. Requires a Baseline phase.
PreprocessResult run_preprocess(const Session& session, const PreprocessConfig& cfg);

} // namespace biosession
