// Command-line front end: ingest, preprocess, features, analyze, cluster,
// run, report, simulate. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 partial-failure threshold exceeded.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "biosession/pipeline.hpp"

namespace fs = std::filesystem;
using namespace biosession;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitPartialFailure = 3;
constexpr double kFailureThreshold = 0.2;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::string input_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
    bool verbose = false;
};

pipeline::PipelineConfig effective_config(const GlobalOpts& g) {
    pipeline::PipelineConfig cfg;
    if (!g.config_path.empty()) cfg = pipeline::load_config(g.config_path);
    if (!g.input_dir.empty()) cfg.input_dir = g.input_dir;
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    if (g.seed_set) cfg.seed = g.seed;
    if (g.jobs > 0) cfg.jobs = g.jobs;
    return cfg;
}

int finish_run(const pipeline::RunSummary& summary, bool verbose) {
    if (verbose || summary.sessions_failed > 0)
        for (const auto& e : summary.errors) std::cerr << e << "\n";
    std::cout << summary.sessions_total << " sessions, " << summary.sessions_failed
              << " failed\n";
    if (summary.sessions_total > 0 &&
        summary.sessions_failed >
            kFailureThreshold * static_cast<double>(summary.sessions_total))
        return kExitPartialFailure;
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"physiological session analytics"};
    app.require_subcommand(1);
    app.fallthrough(true); // global flags may follow the subcommand

    GlobalOpts g;
    app.add_option("--config", g.config_path, "pipeline config JSON");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--seed", g.seed, "master seed")->each([&](const std::string&) {
        g.seed_set = true;
    });
    app.add_option("--jobs", g.jobs, "worker threads");
    app.add_flag("--verbose", g.verbose, "verbose logging");

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "parse and validate session files");
    std::vector<std::string> ingest_paths;
    ingest_cmd->add_option("paths", ingest_paths, "session files or directories");

    auto* preprocess_cmd =
        app.add_subcommand("preprocess", "preprocess traces and write the drop log");
    auto* features_cmd = app.add_subcommand("features", "extract the feature matrix");
    auto* analyze_cmd =
        app.add_subcommand("analyze", "run correlations, comparisons and GLMs");
    auto* cluster_cmd = app.add_subcommand("cluster", "embedding + clustering analysis");
    auto* run_cmd = app.add_subcommand("run", "full pipeline producing the report bundle");

    auto* report_cmd = app.add_subcommand("report", "render report.md from a bundle");
    std::string bundle_dir;
    report_cmd->add_option("bundle", bundle_dir, "bundle directory")->required();
    double report_alpha = 0.05;
    report_cmd->add_option("--alpha", report_alpha, "significance threshold");

    auto* simulate_cmd = app.add_subcommand("simulate", "write a synthetic corpus");
    int n_sessions = 30;
    simulate_cmd->add_option("--sessions", n_sessions, "number of sessions");

    // stage subcommands all take the corpus directory as positional input
    std::string positional_input;
    for (auto* cmd : {preprocess_cmd, features_cmd, analyze_cmd, cluster_cmd, run_cmd})
        cmd->add_option("input", positional_input, "session corpus directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!positional_input.empty()) g.input_dir = positional_input;

        if (ingest_cmd->parsed()) {
            std::vector<fs::path> files;
            for (const auto& p : ingest_paths) {
                if (fs::is_directory(p)) {
                    for (const auto& e : fs::directory_iterator(p))
                        if (e.is_regular_file() && e.path().extension() == ".json" &&
                            e.path().filename() != "ground_truth.json")
                            files.push_back(e.path());
                } else {
                    files.push_back(p);
                }
            }
            std::sort(files.begin(), files.end());
            const pipeline::IngestSummary s = pipeline::ingest(files);
            for (const auto& m : s.messages) std::cout << m << "\n";
            std::cout << s.passed << "/" << s.total << " sessions\n";
            return s.passed == s.total ? kExitOk : kExitData;
        }
        if (simulate_cmd->parsed()) {
            if (g.out_dir.empty()) {
                std::cerr << "simulate needs --out\n";
                return kExitUsage;
            }
            pipeline::simulate_corpus(g.out_dir, n_sessions,
                                      g.seed_set ? g.seed : 1);
            std::cout << n_sessions << " sessions written to " << g.out_dir << "\n";
            return kExitOk;
        }
        if (report_cmd->parsed()) {
            pipeline::write_report(bundle_dir, report_alpha);
            std::cout << "report.md written to " << bundle_dir << "\n";
            return kExitOk;
        }

        const pipeline::PipelineConfig cfg = effective_config(g);
        if (cfg.input_dir.empty() || cfg.out_dir.empty()) {
            std::cerr << "need an input corpus (positional or config) and --out\n";
            return kExitUsage;
        }
        pipeline::RunSummary summary;
        if (preprocess_cmd->parsed())
            summary = pipeline::run_preprocess_only(cfg);
        else if (features_cmd->parsed())
            summary = pipeline::run_features_only(cfg);
        else if (analyze_cmd->parsed())
            summary = pipeline::run_analyze_only(cfg);
        else if (cluster_cmd->parsed())
            summary = pipeline::run_cluster_only(cfg);
        else
            summary = pipeline::run_pipeline(cfg);
        return finish_run(summary, g.verbose);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
