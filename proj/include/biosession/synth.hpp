#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "biosession/session.hpp"
#include "biosession/stats.hpp"

namespace biosession::synth {

struct SynthSpec {
    std::uint64_t seed = 1;
    double duration_s = 600.0;
    double baseline_s = 119.0;
    double acquisition_rate_hz = 128.0;

    struct Hr {
        double mean_bpm = 85.0;
        double sd = 4.0;         // slow-wander amplitude scale
        double noise_sd = 0.5;
    } hr;

    struct Rr {
        double mean_ms = 700.0;
        double sdnn_ms = 50.0;   // targets for the 1 Hz tachogram
        double rmssd_ms = 35.0;
        double lf_amp_ms = 0.0;  // optional planted band tones
        double hf_amp_ms = 0.0;
    } rr;

    struct Bf {
        double rate_per_min = 15.0; // planted peak rate of the BF trace
        double amplitude = 3.0;
        double noise_sd = 0.3;
        double mean = 15.0;
    } bf;

    struct Gaps {
        int count = 0;
        double mean_len_s = 5.0;
    } gaps;

    bool with_behavior = true;
    bool with_clinical = true;
    std::string subject_id = "S001";
    int session_index = 1;
    int age_months = 140;
    Sex sex = Sex::M;
};

struct GroundTruth {
    double hr_mean = 0.0;
    double rr_mean_ms = 0.0;
    double sdnn_ms = 0.0;
    double rmssd_ms = 0.0;
    double bf_rate_per_min = 0.0;
    double lf_hz = 0.1;
    double hf_hz = 0.3;
    int gap_count = 0;
};

struct SynthSession {
    Session session;
    GroundTruth truth;
};

/// 128 Hz HR/RR/BF traces with annotated Baseline + Coin/Station/Battle
/// phases, planted gaps (never inside the baseline window), and optional
/// behavioral/clinical blocks. Deterministic given the seed.
SynthSession gen_session(const SynthSpec& spec);

struct GlmDataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd X; // standardized columns
    double intercept = 0.0;
    std::vector<double> beta;
    stats::Family family = stats::Family::Poisson;
};

/// Standard-normal predictors (exactly standardized), log-link mean,
/// response sampled from the family.
GlmDataset gen_glm_dataset(stats::Family family, double intercept,
                           const std::vector<double>& beta, int n, std::uint64_t seed,
                           double gamma_shape = 5.0);

struct Blobs {
    Eigen::MatrixXd points;
    std::vector<int> labels;
};

/// Isotropic unit-variance Gaussian blobs with centroids on a regular
/// simplex of edge length separation (falls back to a line when the
/// dimension cannot host the simplex).
Blobs gen_blobs(int k, int n_per, double separation, int dim, std::uint64_t seed);

} // namespace biosession::synth
