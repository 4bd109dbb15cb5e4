#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "biosession/pipeline.hpp"

using namespace biosession;
using namespace biosession::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("biosession_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config survives a to_json/from_json round trip") {
    PipelineConfig cfg;
    cfg.input_dir = "in";
    cfg.out_dir = "out";
    cfg.seed = 99;
    cfg.alpha = 0.01;
    cfg.preprocess.lp_cutoff_hz = 0.4;
    cfg.embedding.perplexity = 12.0;
    cfg.k_max = 6;
    cfg.glm_family_overrides["Involvement"] = "poisson";
    const PipelineConfig round = PipelineConfig::from_json(cfg.to_json());
    CHECK(round.to_json() == cfg.to_json());
    CHECK(fnv1a64(round.to_json()) == fnv1a64(cfg.to_json()));

    CHECK_THROWS_AS(PipelineConfig::from_json("{\"alpha\": 2.0}"), Error);
    CHECK_THROWS_AS(PipelineConfig::from_json("nope"), Error);
}

TEST_CASE("ingest summarizes empty, valid and malformed corpora") {
    const IngestSummary empty = ingest({});
    CHECK(empty.total == 0);
    CHECK(empty.passed == 0);

    const fs::path dir = fresh_dir("ingest");
    simulate_corpus(dir, 4, 11);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json" && e.path().filename() != "ground_truth.json")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    REQUIRE(files.size() == 4);
    const IngestSummary ok = ingest(files);
    CHECK(ok.total == 4);
    CHECK(ok.passed == 4);

    std::ofstream(dir / "broken.json") << "{ not json";
    files.push_back(dir / "broken.json");
    const IngestSummary broken = ingest(files);
    CHECK(broken.total == 5);
    CHECK(broken.passed == 4);
    bool named = false;
    for (const auto& m : broken.messages)
        if (m.find("broken.json") != std::string::npos && m.find("FAIL") != std::string::npos)
            named = true;
    CHECK(named);
}

TEST_CASE("simulate writes a corpus with a ground-truth manifest") {
    const fs::path dir = fresh_dir("simulate");
    simulate_corpus(dir, 7, 3);
    int session_files = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json" && e.path().filename() != "ground_truth.json")
            ++session_files;
    CHECK(session_files == 7);
    CHECK(fs::exists(dir / "ground_truth.json"));

    // determinism of the corpus itself
    const fs::path dir2 = fresh_dir("simulate2");
    simulate_corpus(dir2, 7, 3);
    for (const auto& e : fs::directory_iterator(dir))
        CHECK(slurp(e.path()) == slurp(dir2 / e.path().filename()));
}

TEST_CASE("run_pipeline is byte-deterministic and logs planted drops") {
    const fs::path corpus = fresh_dir("corpus");
    simulate_corpus(corpus, 12, 21);

    PipelineConfig cfg;
    cfg.input_dir = corpus.string();
    cfg.seed = 5;
    cfg.jobs = 1;

    const fs::path out_a = fresh_dir("bundle_a");
    cfg.out_dir = out_a.string();
    const RunSummary a = run_pipeline(cfg);
    CHECK(a.sessions_total == 12);
    CHECK(a.sessions_failed == 0);
    CHECK(a.bundle_written);

    const fs::path out_b = fresh_dir("bundle_b");
    cfg.out_dir = out_b.string();
    run_pipeline(cfg);

    int compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(out_a)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), out_a);
        CHECK(slurp(e.path()) == slurp(out_b / rel));
        ++compared;
    }
    CHECK(compared >= 6); // features, tests, glm, log, manifest, plotdata

    // worker count must not change the results
    const fs::path out_c = fresh_dir("bundle_c");
    cfg.out_dir = out_c.string();
    cfg.jobs = 4;
    run_pipeline(cfg);
    CHECK(slurp(out_a / "features.csv") == slurp(out_c / "features.csv"));
    CHECK(slurp(out_a / "tests.csv") == slurp(out_c / "tests.csv"));

    // the simulated corpus plants a >50%-missing trace; it must hit the log
    const std::string log = slurp(out_a / "preprocess_log.jsonl");
    CHECK(log.find("\"dropped\":true") != std::string::npos);
    CHECK(log.find("exceeds") != std::string::npos);
}

TEST_CASE("run continues past malformed sessions and flags them") {
    const fs::path corpus = fresh_dir("partial");
    simulate_corpus(corpus, 4, 31);
    std::ofstream(corpus / "zz_broken.json") << "{]";

    PipelineConfig cfg;
    cfg.input_dir = corpus.string();
    cfg.out_dir = fresh_dir("partial_out").string();
    cfg.seed = 2;
    const RunSummary s = run_pipeline(cfg);
    CHECK(s.sessions_total == 5);
    CHECK(s.sessions_failed == 1);
    REQUIRE(s.errors.size() == 1);
    CHECK(s.errors[0].find("zz_broken.json") != std::string::npos);
}

TEST_CASE("report renders bundle summaries and rejects incomplete bundles") {
    const fs::path corpus = fresh_dir("report_corpus");
    simulate_corpus(corpus, 10, 41);
    PipelineConfig cfg;
    cfg.input_dir = corpus.string();
    const fs::path out = fresh_dir("report_bundle");
    cfg.out_dir = out.string();
    cfg.seed = 3;
    run_pipeline(cfg);

    write_report(out);
    const std::string md = slurp(out / "report.md");
    CHECK(md.find("# Analysis report") != std::string::npos);
    CHECK(md.find("GLM models") != std::string::npos);
    CHECK(md.find("sessions processed: 10") != std::string::npos);

    const fs::path empty = fresh_dir("report_empty");
    CHECK_THROWS_AS(write_report(empty), Error);
}

TEST_CASE("report prints the no-significant-results placeholder") {
    const fs::path dir = fresh_dir("report_none");
    std::ofstream(dir / "manifest.json")
        << R"({"schema":"biosession-bundle/1","sessions_total":0,"sessions_failed":0})";
    std::ofstream(dir / "tests.csv")
        << "analysis_id,feature,group_a,group_b,statistic_name,statistic,p,n,method\n";
    std::ofstream(dir / "glm.json") << "[]";
    write_report(dir);
    const std::string md = slurp(dir / "report.md");
    CHECK(md.find("no significant results") != std::string::npos);
}

TEST_CASE("format_number pins six significant digits") {
    CHECK(format_number(0.123456789) == "0.123457");
    CHECK(format_number(1234567.0) == "1.23457e+06");
    CHECK(format_number(1.0) == "1");
}
