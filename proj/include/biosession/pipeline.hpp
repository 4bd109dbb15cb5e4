#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biosession/clustering.hpp"
#include "biosession/features.hpp"
#include "biosession/preprocess.hpp"
#include "biosession/session.hpp"
#include "biosession/synth.hpp"

namespace biosession::pipeline {

struct PipelineConfig {
    std::string input_dir;
    std::string out_dir;
    std::uint64_t seed = 1;
    double alpha = 0.05;
    int jobs = 1;
    PreprocessConfig preprocess;
    cluster::EmbeddingConfig embedding;
    int k_min = 2;
    int k_max = 8;
    bool cluster_include_subject_id = true;
    std::string glm_default_family = "gamma";
    std::map<std::string, std::string> glm_family_overrides;

    /// Canonical JSON form; hashing it pins the run in the manifest.
    std::string to_json() const;
    static PipelineConfig from_json(const std::string& text);
};

PipelineConfig load_config(const std::filesystem::path& path);

struct IngestSummary {
    int total = 0;
    int passed = 0;
    std::vector<std::string> messages; // per-file warnings/failures
};

/// Parse + validate every session file; never throws on per-file problems.
IngestSummary ingest(const std::vector<std::filesystem::path>& files);

struct RunSummary {
    int sessions_total = 0;
    int sessions_failed = 0;
    std::vector<std::string> errors;
    bool bundle_written = false;
};

/// Full pipeline: ingest -> preprocess -> features -> analyses -> clustering
/// -> report bundle under cfg.out_dir. Per-session failures are recorded and
/// the run continues.
RunSummary run_pipeline(const PipelineConfig& cfg);

/// Stage subcommands share the run machinery but stop early / reuse bundles.
RunSummary run_preprocess_only(const PipelineConfig& cfg);
RunSummary run_features_only(const PipelineConfig& cfg);
RunSummary run_analyze_only(const PipelineConfig& cfg);
RunSummary run_cluster_only(const PipelineConfig& cfg);

/// Renders report.md from an existing bundle directory.
void write_report(const std::filesystem::path& bundle_dir, double alpha = 0.05);

/// Writes a synthetic corpus (session JSON files + ground-truth manifest).
void simulate_corpus(const std::filesystem::path& out_dir, int n_sessions,
                     std::uint64_t seed);

/// "%.6g" float formatting shared by every table writer.
std::string format_number(double v);

/// FNV-1a 64-bit, used for config hashes and subject-id encoding.
std::uint64_t fnv1a64(const std::string& text);

} // namespace biosession::pipeline
