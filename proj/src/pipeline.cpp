#include "biosession/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <atomic>
#include <future>
#include <set>
#include <sstream>

#include <json.hpp>

#include "biosession/distributions.hpp"
#include "biosession/numeric.hpp"
#include "biosession/rng.hpp"

namespace biosession::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// ============================================================================
// Config
// ============================================================================

std::string PipelineConfig::to_json() const {
    json j;
    j["input_dir"] = input_dir;
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["alpha"] = alpha;
    j["jobs"] = jobs;
    j["preprocess"] = {{"lp_cutoff_hz", preprocess.lp_cutoff_hz},
                       {"lp_order", preprocess.lp_order},
                       {"target_rate_hz", preprocess.target_rate_hz},
                       {"missing_exclusion_ratio", preprocess.missing_exclusion_ratio},
                       {"winsor_fraction", preprocess.winsor_fraction},
                       {"rf_trees", preprocess.rf_trees},
                       {"rf_max_depth", preprocess.rf_max_depth},
                       {"rf_seed", preprocess.rf_seed}};
    j["embedding"] = {{"perplexity", embedding.perplexity},
                      {"theta", embedding.theta},
                      {"iterations", embedding.iterations},
                      {"early_exaggeration", embedding.early_exaggeration},
                      {"exaggeration_iters", embedding.exaggeration_iters},
                      {"learning_rate", embedding.learning_rate}};
    j["k_min"] = k_min;
    j["k_max"] = k_max;
    j["cluster_include_subject_id"] = cluster_include_subject_id;
    j["glm_default_family"] = glm_default_family;
    j["glm_family_overrides"] = glm_family_overrides;
    return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Schema, std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig cfg;
    cfg.input_dir = j.value("input_dir", cfg.input_dir);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.jobs = j.value("jobs", cfg.jobs);
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
        throw Error(ErrorCode::Invariant, "alpha must be in (0, 1)");
    if (auto it = j.find("preprocess"); it != j.end()) {
        cfg.preprocess.lp_cutoff_hz = it->value("lp_cutoff_hz", cfg.preprocess.lp_cutoff_hz);
        cfg.preprocess.lp_order = it->value("lp_order", cfg.preprocess.lp_order);
        cfg.preprocess.target_rate_hz =
            it->value("target_rate_hz", cfg.preprocess.target_rate_hz);
        cfg.preprocess.missing_exclusion_ratio =
            it->value("missing_exclusion_ratio", cfg.preprocess.missing_exclusion_ratio);
        cfg.preprocess.winsor_fraction =
            it->value("winsor_fraction", cfg.preprocess.winsor_fraction);
        cfg.preprocess.rf_trees = it->value("rf_trees", cfg.preprocess.rf_trees);
        cfg.preprocess.rf_max_depth = it->value("rf_max_depth", cfg.preprocess.rf_max_depth);
        cfg.preprocess.rf_seed = it->value("rf_seed", cfg.preprocess.rf_seed);
    }
    if (auto it = j.find("embedding"); it != j.end()) {
        cfg.embedding.perplexity = it->value("perplexity", cfg.embedding.perplexity);
        cfg.embedding.theta = it->value("theta", cfg.embedding.theta);
        cfg.embedding.iterations = it->value("iterations", cfg.embedding.iterations);
        cfg.embedding.early_exaggeration =
            it->value("early_exaggeration", cfg.embedding.early_exaggeration);
        cfg.embedding.exaggeration_iters =
            it->value("exaggeration_iters", cfg.embedding.exaggeration_iters);
        cfg.embedding.learning_rate =
            it->value("learning_rate", cfg.embedding.learning_rate);
    }
    cfg.k_min = j.value("k_min", cfg.k_min);
    cfg.k_max = j.value("k_max", cfg.k_max);
    cfg.cluster_include_subject_id =
        j.value("cluster_include_subject_id", cfg.cluster_include_subject_id);
    cfg.glm_default_family = j.value("glm_default_family", cfg.glm_default_family);
    if (auto it = j.find("glm_family_overrides"); it != j.end())
        cfg.glm_family_overrides =
            it->get<std::map<std::string, std::string>>();
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return PipelineConfig::from_json(ss.str());
}

// ============================================================================
// Ingest
// ============================================================================

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
    out << content;
}

std::vector<fs::path> session_files(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::exists(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json" &&
            entry.path().filename() != "ground_truth.json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace

IngestSummary ingest(const std::vector<fs::path>& files) {
    IngestSummary summary;
    summary.total = static_cast<int>(files.size());
    for (const auto& f : files) {
        try {
            const Session s = parse_session(read_file(f));
            const ValidationReport report = validate_session(s);
            for (const auto& w : report.warnings)
                summary.messages.push_back(f.filename().string() + ": warning: " + w);
            if (report.pass) {
                ++summary.passed;
            } else {
                for (const auto& fail : report.failures)
                    summary.messages.push_back(f.filename().string() + ": FAIL: " + fail);
            }
        } catch (const std::exception& e) {
            summary.messages.push_back(f.filename().string() + ": FAIL: " + e.what());
        }
    }
    return summary;
}

// ============================================================================
// Analysis table assembly
// ============================================================================

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct SessionRecord {
    std::string file;
    Session raw;
    Session preprocessed;
    PreprocessLog log;
    features::FeatureVector session_features;               // Session segment
    std::vector<features::FeatureVector> scenario_features; // per phase
    bool failed = false;
    std::string error;
};

std::vector<std::string> behavior_rate_names() {
    std::vector<std::string> names;
    BehavioralRecord dummy;
    dummy.duration_min = 1.0;
    for (const auto& r : behavior_rates(dummy))
        names.push_back(r.feature + "_" + to_string(r.condition));
    return names;
}

const std::vector<std::string> kClinicalNames = {"ados_comparison", "ados_total", "ados_sa",
                                                 "iq", "vci", "pri", "wmi", "psi"};

// session-level analysis table: one row per successfully processed session
struct AnalysisTable {
    std::vector<std::string> columns;
    std::vector<const SessionRecord*> rows;
    Eigen::MatrixXd values; // NaN = absent

    int col(const std::string& name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
    }
};

AnalysisTable build_table(const std::vector<SessionRecord>& records) {
    AnalysisTable t;
    t.columns.push_back("age_months");
    t.columns.push_back("sex_f"); // F coded 1
    for (const auto& c : kClinicalNames) t.columns.push_back(c);
    for (const auto& f : features::feature_registry()) t.columns.push_back(f);
    for (const auto& r : behavior_rate_names()) t.columns.push_back(r);
    for (const auto& l : kLikertFeatures) t.columns.push_back(l);

    for (const auto& rec : records)
        if (!rec.failed) t.rows.push_back(&rec);

    t.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(t.rows.size()),
                                         static_cast<Eigen::Index>(t.columns.size()), kNan);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const SessionRecord& rec = *t.rows[i];
        const auto row = static_cast<Eigen::Index>(i);
        t.values(row, 0) = rec.raw.meta.age_months;
        t.values(row, 1) = rec.raw.meta.sex == Sex::F ? 1.0 : 0.0;
        if (rec.raw.clinical) {
            const ClinicalProfile& c = *rec.raw.clinical;
            const double vals[] = {c.ados_comparison, c.ados_total, c.ados_sa, c.iq,
                                   c.vci,             c.pri,        c.wmi,     c.psi};
            for (int j = 0; j < 8; ++j) t.values(row, 2 + j) = vals[j];
        }
        for (const auto& [name, value] : rec.session_features.values)
            t.values(row, t.col(name)) = value;
        if (rec.raw.behavior) {
            for (const auto& r : behavior_rates(*rec.raw.behavior))
                t.values(row, t.col(r.feature + "_" + to_string(r.condition))) =
                    r.rate_per_min;
            for (const auto& [name, v] : rec.raw.behavior->likert)
                t.values(row, t.col(name)) = static_cast<double>(v);
        }
    }
    return t;
}

// complete cases for a column pair with per-column 3-sigma outlier removal
std::pair<std::vector<double>, std::vector<double>>
paired_complete(const AnalysisTable& t, int col_x, int col_y, bool filter_outliers) {
    std::vector<double> x, y;
    for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
        const double a = t.values(i, col_x), b = t.values(i, col_y);
        if (std::isnan(a) || std::isnan(b)) continue;
        x.push_back(a);
        y.push_back(b);
    }
    if (!filter_outliers || x.size() < 3) return {x, y};
    const double mx = mean(x), sx = sample_sd(x);
    const double my = mean(y), sy = sample_sd(y);
    std::vector<double> fx, fy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i] - mx) > 3.0 * sx || std::abs(y[i] - my) > 3.0 * sy) continue;
        fx.push_back(x[i]);
        fy.push_back(y[i]);
    }
    return {fx, fy};
}

// ============================================================================
// tests.csv rows
// ============================================================================

struct TestRow {
    std::string analysis_id;
    std::string feature;
    std::string group_a;
    std::string group_b;
    std::string statistic_name;
    double statistic;
    double p;
    int n;
    std::string method;
};

void correlation_tests(const AnalysisTable& t, std::vector<TestRow>& out) {
    const int age_col = t.col("age_months");
    const int sex_col = t.col("sex_f");
    for (int c = 0; c < static_cast<int>(t.columns.size()); ++c) {
        if (c == age_col || c == sex_col) continue;
        const std::string& feature = t.columns[c];
        {
            auto [x, y] = paired_complete(t, age_col, c, true);
            if (x.size() >= 4) {
                try {
                    const stats::TestResult r = stats::spearman(x, y);
                    out.push_back({"age_spearman", feature, "age", "", r.statistic_name,
                                   r.statistic, r.p_value, r.n, to_string(r.method)});
                } catch (const Error&) {
                    // constant input: no test row
                }
            }
        }
        {
            auto [g, y] = paired_complete(t, sex_col, c, false);
            std::vector<int> labels(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) labels[i] = g[i] > 0.5 ? 1 : 0;
            if (g.size() >= 4) {
                try {
                    const stats::TestResult r = stats::point_biserial(labels, y);
                    out.push_back({"sex_point_biserial", feature, "M", "F",
                                   r.statistic_name, r.statistic, r.p_value, r.n,
                                   to_string(r.method)});
                } catch (const Error&) {
                }
            }
        }
    }
}

// repeated-measures comparisons across scenarios (physiological features) and
// across sessions 1..3 (all features), split by age group
void scenario_tests(const std::vector<SessionRecord>& records, double alpha,
                    std::vector<TestRow>& out) {
    const std::vector<std::string> scenarios = {"Coin", "Station", "Battle"};
    for (const AgeGroup group : {AgeGroup::PreAdolescent, AgeGroup::Adolescent}) {
        const std::string gname = to_string(group);
        for (const auto& feature : features::feature_registry()) {
            Eigen::MatrixXd blocks(0, 3);
            for (const auto& rec : records) {
                if (rec.failed || rec.raw.meta.age_group() != group) continue;
                double row[3];
                bool complete = true;
                for (int s = 0; s < 3 && complete; ++s) {
                    complete = false;
                    for (const auto& fv : rec.scenario_features) {
                        if (fv.segment_label != scenarios[s]) continue;
                        const auto it = fv.values.find(feature);
                        if (it != fv.values.end()) {
                            row[s] = it->second;
                            complete = true;
                        }
                        break;
                    }
                }
                if (!complete) continue;
                blocks.conservativeResize(blocks.rows() + 1, 3);
                for (int s = 0; s < 3; ++s) blocks(blocks.rows() - 1, s) = row[s];
            }
            if (blocks.rows() < 5) continue;
            const stats::TestResult omnibus = stats::friedman(blocks);
            out.push_back({"scenario_friedman_" + gname, feature, "Coin|Station|Battle", "",
                           omnibus.statistic_name, omnibus.statistic, omnibus.p_value,
                           omnibus.n, to_string(omnibus.method)});
            if (omnibus.p_value >= alpha) continue;
            for (int a = 0; a < 3; ++a) {
                for (int b = a + 1; b < 3; ++b) {
                    std::vector<double> xa(blocks.rows()), xb(blocks.rows());
                    for (Eigen::Index i = 0; i < blocks.rows(); ++i) {
                        xa[static_cast<std::size_t>(i)] = blocks(i, a);
                        xb[static_cast<std::size_t>(i)] = blocks(i, b);
                    }
                    try {
                        const stats::TestResult r = stats::wilcoxon_signed_rank(xa, xb);
                        out.push_back({"scenario_wilcoxon_" + gname, feature, scenarios[a],
                                       scenarios[b], r.statistic_name, r.statistic,
                                       r.p_value, r.n, to_string(r.method)});
                    } catch (const Error&) {
                        // all-zero differences or too few pairs: skip the contrast
                    }
                }
            }
        }
    }
}

void session_tests(const std::vector<SessionRecord>& records, const AnalysisTable& t,
                   double alpha, std::vector<TestRow>& out) {
    // subject -> session_index -> table row
    std::map<std::string, std::map<int, Eigen::Index>> by_subject;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        by_subject[t.rows[i]->raw.meta.subject_id][t.rows[i]->raw.session_index] =
            static_cast<Eigen::Index>(i);

    for (const AgeGroup group : {AgeGroup::PreAdolescent, AgeGroup::Adolescent}) {
        const std::string gname = to_string(group);
        for (int c = 0; c < static_cast<int>(t.columns.size()); ++c) {
            const std::string& feature = t.columns[c];
            if (feature == "age_months" || feature == "sex_f") continue;
            Eigen::MatrixXd blocks(0, 3);
            for (const auto& [subject, sessions] : by_subject) {
                if (sessions.size() < 3) continue;
                if (t.rows[static_cast<std::size_t>(sessions.begin()->second)]
                        ->raw.meta.age_group() != group)
                    continue;
                double row[3];
                bool complete = true;
                for (int s = 1; s <= 3 && complete; ++s) {
                    const auto it = sessions.find(s);
                    if (it == sessions.end() ||
                        std::isnan(t.values(it->second, c)))
                        complete = false;
                    else
                        row[s - 1] = t.values(it->second, c);
                }
                if (!complete) continue;
                blocks.conservativeResize(blocks.rows() + 1, 3);
                for (int s = 0; s < 3; ++s) blocks(blocks.rows() - 1, s) = row[s];
            }
            if (blocks.rows() < 5) continue;
            const stats::TestResult omnibus = stats::friedman(blocks);
            out.push_back({"session_friedman_" + gname, feature, "1|2|3", "",
                           omnibus.statistic_name, omnibus.statistic, omnibus.p_value,
                           omnibus.n, to_string(omnibus.method)});
            if (omnibus.p_value >= alpha) continue;
            for (int a = 0; a < 3; ++a) {
                for (int b = a + 1; b < 3; ++b) {
                    std::vector<double> xa(blocks.rows()), xb(blocks.rows());
                    for (Eigen::Index i = 0; i < blocks.rows(); ++i) {
                        xa[static_cast<std::size_t>(i)] = blocks(i, a);
                        xb[static_cast<std::size_t>(i)] = blocks(i, b);
                    }
                    try {
                        const stats::TestResult r = stats::wilcoxon_signed_rank(xa, xb);
                        out.push_back({"session_wilcoxon_" + gname, feature,
                                       "session" + std::to_string(a + 1),
                                       "session" + std::to_string(b + 1), r.statistic_name,
                                       r.statistic, r.p_value, r.n, to_string(r.method)});
                    } catch (const Error&) {
                    }
                }
            }
        }
    }
}

// ============================================================================
// GLM analysis
// ============================================================================

json glm_analysis(const AnalysisTable& t, const PipelineConfig& cfg,
                  const fs::path& plot_dir) {
    json out = json::array();

    std::vector<int> predictor_cols;
    for (const auto& name : features::feature_registry()) {
        const int c = t.col(name);
        if (c >= 0) predictor_cols.push_back(c);
    }
    std::vector<std::string> target_names = behavior_rate_names();
    for (const auto& l : kLikertFeatures) target_names.push_back(l);

    for (const auto& target : target_names) {
        const int yc = t.col(target);
        if (yc < 0) continue;

        // complete cases over target + all predictors
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
            if (std::isnan(t.values(i, yc))) continue;
            bool ok = true;
            for (const int c : predictor_cols)
                if (std::isnan(t.values(i, c))) {
                    ok = false;
                    break;
                }
            if (ok) rows.push_back(i);
        }

        std::string family_name = cfg.glm_default_family;
        if (const auto it = cfg.glm_family_overrides.find(target);
            it != cfg.glm_family_overrides.end())
            family_name = it->second;
        const stats::Family family =
            family_name == "poisson" ? stats::Family::Poisson : stats::Family::Gamma;

        // Gamma needs strictly positive responses; zero rows drop out (this is
        // why per-model n varies)
        std::vector<Eigen::Index> kept_rows;
        for (const Eigen::Index i : rows) {
            const double y = t.values(i, yc);
            if (family == stats::Family::Gamma && !(y > 0.0)) continue;
            kept_rows.push_back(i);
        }

        json record;
        record["target"] = target;
        record["family"] = to_string(family);
        record["n"] = kept_rows.size();

        if (kept_rows.size() < 10) {
            record["skipped"] = "insufficient complete cases";
            out.push_back(record);
            continue;
        }

        std::vector<double> y;
        for (const Eigen::Index i : kept_rows) y.push_back(t.values(i, yc));

        // distribution diagnostics + QQ plot data for the response
        try {
            const stats::DistributionDiagnostics d = stats::diagnostics(y);
            record["diagnostics"] = {{"skewness", d.skewness},
                                     {"excess_kurtosis", d.excess_kurtosis},
                                     {"shapiro_w", d.shapiro_w},
                                     {"shapiro_p", d.shapiro_p}};
        } catch (const Error&) {
        }
        {
            std::vector<double> sorted(y);
            std::sort(sorted.begin(), sorted.end());
            json qq = json::array();
            const auto n = sorted.size();
            for (std::size_t i = 0; i < n; ++i) {
                const double q = normal_quantile((i + 0.5) / static_cast<double>(n));
                qq.push_back({{"theoretical", q}, {"sample", sorted[i]}});
            }
            write_file(plot_dir / ("qq_" + target + ".json"),
                       json{{"target", target}, {"points", qq}}.dump(2));
        }

        // predictor matrix: drop zero-variance columns, VIF-screen, standardize
        std::vector<int> cols;
        for (const int c : predictor_cols) {
            double first = t.values(kept_rows.front(), c);
            bool varies = false;
            for (const Eigen::Index i : kept_rows)
                if (t.values(i, c) != first) {
                    varies = true;
                    break;
                }
            if (varies) cols.push_back(c);
        }
        Eigen::MatrixXd X(static_cast<Eigen::Index>(kept_rows.size()),
                          static_cast<Eigen::Index>(cols.size()));
        for (std::size_t i = 0; i < kept_rows.size(); ++i)
            for (std::size_t jc = 0; jc < cols.size(); ++jc)
                X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jc)) =
                    t.values(kept_rows[i], cols[jc]);

        if (X.rows() <= X.cols()) {
            record["skipped"] = "more predictors than cases";
            out.push_back(record);
            continue;
        }

        // multicollinearity screening before the sufficiency check: the
        // redundant HRV trio and friends drop out here
        const stats::VifReport vif = stats::vif_filter(X, 5.0);
        json excluded = json::array();
        for (const int e : vif.excluded) excluded.push_back(t.columns[cols[e]]);
        record["vif_excluded"] = excluded;

        if (kept_rows.size() < vif.kept.size() + 5) {
            record["skipped"] = "insufficient complete cases after screening";
            out.push_back(record);
            continue;
        }

        Eigen::MatrixXd Xk(X.rows(), static_cast<Eigen::Index>(vif.kept.size()));
        std::vector<std::string> names;
        for (std::size_t j = 0; j < vif.kept.size(); ++j) {
            Xk.col(static_cast<Eigen::Index>(j)) = X.col(vif.kept[j]);
            names.push_back(t.columns[cols[vif.kept[j]]]);
        }
        const cluster::Standardized sx = cluster::standardize(Xk);

        try {
            const stats::GlmFit fit = stats::fit_glm(y, sx.matrix, family, names);
            json terms = json::array();
            for (const auto& term : fit.terms)
                terms.push_back({{"name", term.name},
                                 {"coef", term.coef},
                                 {"se", term.se},
                                 {"z", term.z},
                                 {"p", term.p}});
            record["terms"] = terms;
            record["deviance"] = fit.deviance;
            record["null_deviance"] = fit.null_deviance;
            record["aic"] = fit.aic;
            record["pseudo_r2"] = fit.pseudo_r2;
            record["dispersion"] = fit.dispersion;
            record["converged"] = fit.converged;
        } catch (const Error& e) {
            record["error"] = e.what();
        }
        out.push_back(record);
    }
    return out;
}

// ============================================================================
// Clustering analysis
// ============================================================================

json clustering_analysis(const AnalysisTable& t, const PipelineConfig& cfg,
                         const fs::path& out_dir, std::vector<std::string>& errors) {
    json result;

    // behavioral features + age (+ optional subject-id encoding)
    std::vector<std::string> base = behavior_rate_names();
    for (const auto& l : kLikertFeatures) base.push_back(l);
    base.push_back("age_months");

    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
        bool ok = true;
        for (const auto& name : base)
            if (std::isnan(t.values(i, t.col(name)))) {
                ok = false;
                break;
            }
        if (ok) rows.push_back(i);
    }
    const int n = static_cast<int>(rows.size());
    if (n < 8) {
        errors.push_back("clustering skipped: fewer than 8 complete session rows");
        result["skipped"] = "insufficient rows";
        return result;
    }

    std::vector<std::string> names = base;
    Eigen::MatrixXd M(n, static_cast<Eigen::Index>(base.size()) +
                             (cfg.cluster_include_subject_id ? 1 : 0));
    for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < base.size(); ++j)
            M(i, static_cast<Eigen::Index>(j)) = t.values(rows[i], t.col(base[j]));
    if (cfg.cluster_include_subject_id) {
        // opaque id is not metric; a unit-interval hash preserves identity
        // grouping while staying numeric (config switch to exclude)
        for (int i = 0; i < n; ++i)
            M(i, M.cols() - 1) =
                static_cast<double>(fnv1a64(t.rows[rows[i]]->raw.meta.subject_id) >> 11) *
                0x1.0p-53;
        names.push_back("subject_id_hash");
    }

    const std::vector<int> kept_cols = cluster::variance_filter(M, 50.0);
    Eigen::MatrixXd filtered(n, static_cast<Eigen::Index>(kept_cols.size()));
    json kept_names = json::array();
    for (std::size_t j = 0; j < kept_cols.size(); ++j) {
        filtered.col(static_cast<Eigen::Index>(j)) = M.col(kept_cols[j]);
        kept_names.push_back(names[static_cast<std::size_t>(kept_cols[j])]);
    }
    result["variance_filter"] = {{"total_features", names.size()},
                                 {"kept_features", kept_names}};

    Eigen::MatrixXd standardized;
    try {
        standardized = cluster::standardize(filtered).matrix;
    } catch (const Error& e) {
        errors.push_back(std::string("clustering skipped: ") + e.what());
        result["skipped"] = e.what();
        return result;
    }

    cluster::EmbeddingConfig emb = cfg.embedding;
    emb.seed = cfg.seed;
    const cluster::TsneResult tsne = cluster::tsne_embed(standardized, emb);
    for (const auto& w : tsne.warnings) result["warnings"].push_back(w);
    result["tsne"] = {{"kl_after_exaggeration", tsne.kl_after_exaggeration},
                      {"kl_final", tsne.kl_final},
                      {"perplexity_used", tsne.perplexity_used}};

    const int k_max = std::min(cfg.k_max, n - 1);
    const cluster::KSelection sel =
        cluster::select_k(tsne.embedding, cfg.k_min, k_max, cfg.seed);
    const cluster::KmeansResult km =
        cluster::kmeans(tsne.embedding, sel.k_best, 10, cfg.seed + static_cast<std::uint64_t>(sel.k_best));
    const double sil = cluster::silhouette(tsne.embedding, km.labels);
    const double db = cluster::davies_bouldin(tsne.embedding, km.labels);

    result["k_best"] = sel.k_best;
    result["silhouette"] = sil;
    result["davies_bouldin"] = db;
    result["inertia"] = km.inertia;

    // scores.csv
    {
        std::string csv = "k,silhouette,davies_bouldin,inertia\n";
        for (const auto& row : sel.table)
            csv += std::to_string(row.k) + "," + format_number(row.silhouette) + "," +
                   format_number(row.davies_bouldin) + "," + format_number(row.inertia) +
                   "\n";
        write_file(out_dir / "scores.csv", csv);
    }
    // clusters.csv
    {
        std::string csv = "subject_id,session_index,x,y,cluster\n";
        for (int i = 0; i < n; ++i) {
            const SessionRecord& rec = *t.rows[rows[i]];
            csv += rec.raw.meta.subject_id + "," + std::to_string(rec.raw.session_index) +
                   "," + format_number(tsne.embedding(i, 0)) + "," +
                   format_number(tsne.embedding(i, 1)) + "," +
                   std::to_string(km.labels[i]) + "\n";
        }
        write_file(out_dir / "clusters.csv", csv);
    }
    // plot data: silhouette / davies-bouldin / inertia vs k
    {
        json series = json::array();
        for (const auto& row : sel.table)
            series.push_back({{"k", row.k},
                              {"silhouette", row.silhouette},
                              {"davies_bouldin", row.davies_bouldin},
                              {"inertia", row.inertia}});
        write_file(out_dir / "plotdata" / "silhouette_vs_k.json",
                   json{{"series", series}, {"k_best", sel.k_best}}.dump(2));
    }

    // cluster validation: demographic + clinical + physiological + behavioral
    {
        std::vector<std::string> validation = {"age_months", "sex_f"};
        for (const auto& c : kClinicalNames) validation.push_back(c);
        for (const auto& f : features::feature_registry()) validation.push_back(f);
        for (const auto& r : behavior_rate_names()) validation.push_back(r);
        for (const auto& l : kLikertFeatures) validation.push_back(l);

        Eigen::MatrixXd V(n, static_cast<Eigen::Index>(validation.size()));
        for (int i = 0; i < n; ++i)
            for (std::size_t j = 0; j < validation.size(); ++j)
                V(i, static_cast<Eigen::Index>(j)) =
                    t.values(rows[i], t.col(validation[j]));

        // profile per feature over complete values only
        json profile_rows = json::array();
        for (std::size_t j = 0; j < validation.size(); ++j) {
            std::vector<int> lab;
            std::vector<double> vals;
            for (int i = 0; i < n; ++i) {
                const double v = V(i, static_cast<Eigen::Index>(j));
                if (std::isnan(v)) continue;
                lab.push_back(km.labels[i]);
                vals.push_back(v);
            }
            if (vals.size() < 6) continue;
            Eigen::MatrixXd col(static_cast<Eigen::Index>(vals.size()), 1);
            for (std::size_t i = 0; i < vals.size(); ++i)
                col(static_cast<Eigen::Index>(i), 0) = vals[i];
            const cluster::ClusterProfile p =
                cluster::cluster_profile(lab, col, {validation[j]}, cfg.alpha);
            if (p.rows.empty()) continue;
            const auto& row = p.rows.front();
            json comparisons = json::array();
            for (const auto& c : row.comparisons)
                comparisons.push_back({{"cluster_a", c.cluster_a},
                                       {"cluster_b", c.cluster_b},
                                       {"U", c.u},
                                       {"p", c.p},
                                       {"significant", c.significant}});
            profile_rows.push_back({{"feature", validation[j]},
                                    {"means", row.means},
                                    {"sds", row.sds},
                                    {"comparisons", comparisons}});
        }
        json sizes = json::array();
        std::vector<int> size_count(static_cast<std::size_t>(sel.k_best), 0);
        for (const int l : km.labels) ++size_count[static_cast<std::size_t>(l)];
        for (const int s : size_count) sizes.push_back(s);
        result["sizes"] = sizes;
        write_file(out_dir / "plotdata" / "cluster_profile.json",
                   json{{"sizes", sizes}, {"rows", profile_rows}}.dump(2));
    }
    return result;
}

// ============================================================================
// Orchestration
// ============================================================================

SessionRecord process_one(const fs::path& file, const PipelineConfig& cfg) {
    SessionRecord rec;
    rec.file = file.filename().string();
    try {
        rec.raw = parse_session(read_file(file));
        const ValidationReport v = validate_session(rec.raw);
        if (!v.pass)
            throw Error(ErrorCode::Invariant, "validation failed: " + v.failures.front());
        const PreprocessResult pre = run_preprocess(rec.raw, cfg.preprocess);
        rec.preprocessed = pre.session;
        rec.log = pre.log;
        auto session_fv =
            features::session_features(rec.preprocessed, features::SegmentMode::Session);
        if (!session_fv.empty()) rec.session_features = std::move(session_fv.front());
        rec.scenario_features =
            features::session_features(rec.preprocessed, features::SegmentMode::Scenario);
    } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
    }
    return rec;
}

std::vector<SessionRecord> process_all(const std::vector<fs::path>& files,
                                       const PipelineConfig& cfg) {
    std::vector<SessionRecord> records(files.size());
    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
        for (std::size_t i = 0; i < files.size(); ++i)
            records[i] = process_one(files[i], cfg);
        return records;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> workers;
    workers.reserve(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
        workers.push_back(std::async(std::launch::async, [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= files.size()) return;
                records[i] = process_one(files[i], cfg);
            }
        }));
    }
    for (auto& f : workers) f.get();
    return records;
}

std::string features_csv(const std::vector<SessionRecord>& records) {
    std::string csv = "subject_id,session_index,segment,duration_s,age_months,sex";
    for (const auto& f : features::feature_registry()) csv += "," + f;
    csv += ",welch_short_segment\n";
    for (const SessionRecord& rec : records) {
        if (rec.failed) continue;
        std::vector<const features::FeatureVector*> fvs = {&rec.session_features};
        for (const auto& fv : rec.scenario_features) fvs.push_back(&fv);
        for (const auto* fv : fvs) {
            csv += rec.raw.meta.subject_id + "," + std::to_string(rec.raw.session_index) +
                   "," + fv->segment_label + "," + format_number(fv->duration_s) + "," +
                   std::to_string(rec.raw.meta.age_months) + "," +
                   to_string(rec.raw.meta.sex);
            for (const auto& name : features::feature_registry()) {
                const auto it = fv->values.find(name);
                csv += ",";
                if (it != fv->values.end()) csv += format_number(it->second);
            }
            csv += std::string(",") + (fv->welch_short_segment ? "1" : "0") + "\n";
        }
    }
    return csv;
}

std::string tests_csv(const std::vector<TestRow>& rows) {
    std::string csv = "analysis_id,feature,group_a,group_b,statistic_name,statistic,p,n,method\n";
    for (const TestRow& r : rows)
        csv += r.analysis_id + "," + r.feature + "," + r.group_a + "," + r.group_b + "," +
               r.statistic_name + "," + format_number(r.statistic) + "," +
               format_number(r.p) + "," + std::to_string(r.n) + "," + r.method + "\n";
    return csv;
}

// scenario-mean plot data mirroring the per-scenario comparison figures
json scenario_means_json(const std::vector<SessionRecord>& records) {
    json out = json::array();
    for (const auto& feature : features::feature_registry()) {
        json per_scenario;
        for (const std::string scenario : {"Coin", "Station", "Battle"}) {
            std::vector<double> vals;
            for (const auto& rec : records) {
                if (rec.failed) continue;
                for (const auto& fv : rec.scenario_features) {
                    if (fv.segment_label != scenario) continue;
                    const auto it = fv.values.find(feature);
                    if (it != fv.values.end()) vals.push_back(it->second);
                }
            }
            if (!vals.empty())
                per_scenario[scenario] = {{"mean", mean(vals)},
                                          {"sd", sample_sd(vals)},
                                          {"n", vals.size()}};
        }
        if (!per_scenario.empty())
            out.push_back({{"feature", feature}, {"scenarios", per_scenario}});
    }
    return out;
}

RunSummary run_stages(const PipelineConfig& cfg, bool with_features, bool with_analyses,
                      bool with_clustering) {
    if (cfg.out_dir.empty())
        throw Error(ErrorCode::Io, "config needs out_dir");
    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir / "plotdata");

    const std::vector<fs::path> files = session_files(cfg.input_dir);
    std::vector<SessionRecord> records = process_all(files, cfg);

    // stable ordering regardless of worker count
    std::stable_sort(records.begin(), records.end(),
                     [](const SessionRecord& a, const SessionRecord& b) {
                         if (a.raw.meta.subject_id != b.raw.meta.subject_id)
                             return a.raw.meta.subject_id < b.raw.meta.subject_id;
                         if (a.raw.session_index != b.raw.session_index)
                             return a.raw.session_index < b.raw.session_index;
                         return a.file < b.file;
                     });

    RunSummary summary;
    summary.sessions_total = static_cast<int>(records.size());
    std::string log_lines;
    for (const auto& rec : records) {
        if (rec.failed) {
            ++summary.sessions_failed;
            summary.errors.push_back(rec.file + ": " + rec.error);
            log_lines += json{{"file", rec.file}, {"error", rec.error}}.dump() + "\n";
        } else {
            for (const auto& t : rec.log.traces) {
                json j{{"file", rec.file},
                       {"kind", to_string(t.kind)},
                       {"missing_ratio", t.missing_ratio},
                       {"dropped", t.dropped}};
                if (t.dropped)
                    j["reason"] = t.drop_reason;
                else {
                    j["baseline_mean"] = t.baseline_mean;
                    j["baseline_sd"] = t.baseline_sd;
                }
                log_lines += j.dump() + "\n";
            }
        }
    }
    write_file(out_dir / "preprocess_log.jsonl", log_lines);

    if (with_features) write_file(out_dir / "features.csv", features_csv(records));

    const AnalysisTable table = build_table(records);

    if (with_analyses) {
        std::vector<TestRow> rows;
        correlation_tests(table, rows);
        scenario_tests(records, cfg.alpha, rows);
        session_tests(records, table, cfg.alpha, rows);
        write_file(out_dir / "tests.csv", tests_csv(rows));
        write_file(out_dir / "glm.json",
                   glm_analysis(table, cfg, out_dir / "plotdata").dump(2));
        write_file(out_dir / "plotdata" / "scenario_feature_means.json",
                   scenario_means_json(records).dump(2));
    }

    json cluster_result;
    if (with_clustering)
        cluster_result = clustering_analysis(table, cfg, out_dir, summary.errors);

    // manifest pins the configuration and seeds for reproducibility
    {
        json manifest;
        manifest["schema"] = "biosession-bundle/1";
        manifest["config_hash"] = fnv1a64(cfg.to_json());
        manifest["seed"] = cfg.seed;
        manifest["rf_seed"] = cfg.preprocess.rf_seed;
        manifest["sessions_total"] = summary.sessions_total;
        manifest["sessions_failed"] = summary.sessions_failed;
        json names = json::array();
        for (const auto& rec : records) names.push_back(rec.file);
        manifest["sessions"] = names;
        if (!cluster_result.is_null()) manifest["clustering"] = cluster_result;
        write_file(out_dir / "manifest.json", manifest.dump(2));
    }
    summary.bundle_written = true;
    return summary;
}

} // namespace

RunSummary run_pipeline(const PipelineConfig& cfg) { return run_stages(cfg, true, true, true); }

RunSummary run_preprocess_only(const PipelineConfig& cfg) {
    return run_stages(cfg, false, false, false);
}

RunSummary run_features_only(const PipelineConfig& cfg) {
    return run_stages(cfg, true, false, false);
}

RunSummary run_analyze_only(const PipelineConfig& cfg) {
    return run_stages(cfg, true, true, false);
}

RunSummary run_cluster_only(const PipelineConfig& cfg) {
    return run_stages(cfg, true, false, true);
}

// ============================================================================
// Report
// ============================================================================

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

} // namespace

void write_report(const fs::path& bundle_dir, double alpha) {
    for (const char* required : {"manifest.json", "tests.csv", "glm.json"})
        if (!fs::exists(bundle_dir / required))
            throw Error(ErrorCode::IncompleteBundle,
                        std::string("bundle is missing ") + required);

    const json manifest = json::parse(read_file(bundle_dir / "manifest.json"));
    const auto tests = parse_csv(read_file(bundle_dir / "tests.csv"));
    const json glm = json::parse(read_file(bundle_dir / "glm.json"));

    std::string md = "# Analysis report\n\n";
    md += "- sessions processed: " + std::to_string(manifest.value("sessions_total", 0)) +
          " (" + std::to_string(manifest.value("sessions_failed", 0)) + " failed)\n";
    md += "- config hash: " + std::to_string(manifest.value("config_hash", 0ULL)) + "\n";
    md += "- seed: " + std::to_string(manifest.value("seed", 0ULL)) + "\n\n";

    md += "## Significant tests (p < " + format_number(alpha) + ")\n\n";
    std::vector<std::vector<std::string>> significant;
    for (std::size_t i = 1; i < tests.size(); ++i) {
        if (tests[i].size() < 9) continue;
        const double p = std::atof(tests[i][6].c_str());
        if (p < alpha) significant.push_back(tests[i]);
    }
    if (significant.empty()) {
        md += "no significant results\n\n";
    } else {
        md += "| analysis | feature | groups | statistic | p | n |\n";
        md += "|---|---|---|---|---|---|\n";
        for (const auto& r : significant) {
            std::string groups = r[2];
            if (!r[3].empty()) groups += " vs " + r[3];
            md += "| " + r[0] + " | " + r[1] + " | " + groups + " | " + r[4] + "=" + r[5] +
                  " | " + r[6] + " | " + r[7] + " |\n";
        }
        md += "\n";
    }
    md += "All " + std::to_string(tests.empty() ? 0 : tests.size() - 1) +
          " test rows are in tests.csv.\n\n";

    md += "## GLM models\n\n";
    if (glm.empty()) {
        md += "no models fitted\n\n";
    } else {
        md += "| target | family | n | deviance | AIC | pseudo R2 | significant terms |\n";
        md += "|---|---|---|---|---|---|---|\n";
        for (const auto& m : glm) {
            if (m.contains("skipped") || m.contains("error")) continue;
            std::string sig;
            for (const auto& term : m.value("terms", json::array())) {
                if (term.value("name", "") == "intercept") continue;
                if (term.value("p", 1.0) < alpha) {
                    if (!sig.empty()) sig += "; ";
                    sig += term.value("name", "") + " (coef " +
                           format_number(term.value("coef", 0.0)) + ", p " +
                           format_number(term.value("p", 1.0)) + ")";
                }
            }
            if (sig.empty()) sig = "none";
            md += "| " + m.value("target", "") + " | " + m.value("family", "") + " | " +
                  std::to_string(m.value("n", 0)) + " | " +
                  format_number(m.value("deviance", 0.0)) + " | " +
                  format_number(m.value("aic", 0.0)) + " | " +
                  format_number(m.value("pseudo_r2", 0.0)) + " | " + sig + " |\n";
        }
        md += "\n";
    }

    if (manifest.contains("clustering") && !manifest["clustering"].contains("skipped")) {
        const json& c = manifest["clustering"];
        md += "## Clustering\n\n";
        md += "- clusters: " + std::to_string(c.value("k_best", 0)) + "\n";
        md += "- silhouette: " + format_number(c.value("silhouette", 0.0)) + "\n";
        md += "- davies_bouldin: " + format_number(c.value("davies_bouldin", 0.0)) + "\n";
        md += "- inertia (elbow coefficient): " + format_number(c.value("inertia", 0.0)) +
              "\n";
        if (c.contains("sizes")) {
            md += "- sizes:";
            for (const auto& s : c["sizes"]) md += " " + std::to_string(s.get<int>());
            md += "\n";
        }
        md += "\nEmbedding coordinates: clusters.csv; per-k scores: scores.csv; "
              "per-cluster profile: plotdata/cluster_profile.json.\n";
    }

    write_file(bundle_dir / "report.md", md);
}

// ============================================================================
// Synthetic corpus
// ============================================================================

void simulate_corpus(const fs::path& out_dir, int n_sessions, std::uint64_t seed) {
    fs::create_directories(out_dir);
    Rng rng(seed ^ 0x73696dULL);

    json truth_manifest = json::array();
    int produced = 0;
    int subject = 0;
    while (produced < n_sessions) {
        ++subject;
        const int sessions_for_subject = std::min(
            n_sessions - produced, subject % 5 == 0 ? 1 : (subject % 4 == 0 ? 2 : 3));
        char sid[16];
        std::snprintf(sid, sizeof(sid), "S%03d", subject);
        Rng srng = rng.child(static_cast<std::uint64_t>(subject));
        const int age = 96 + static_cast<int>(srng.uniform_int(110));
        const Sex sex = srng.uniform() < 0.2 ? Sex::F : Sex::M;

        for (int si = 1; si <= sessions_for_subject; ++si, ++produced) {
            synth::SynthSpec spec;
            spec.seed = seed * 1000003ULL + static_cast<std::uint64_t>(produced);
            spec.subject_id = sid;
            spec.session_index = si;
            spec.age_months = age;
            spec.sex = sex;
            spec.duration_s = 520.0 + std::floor(srng.uniform(0.0, 180.0));
            spec.hr.mean_bpm = srng.uniform(75.0, 105.0);
            spec.rr.mean_ms = srng.uniform(580.0, 800.0);
            spec.rr.sdnn_ms = srng.uniform(35.0, 65.0);
            spec.rr.rmssd_ms = spec.rr.sdnn_ms * srng.uniform(0.5, 0.9);
            spec.bf.rate_per_min = srng.uniform(10.0, 18.0);
            spec.gaps.count = 2 + static_cast<int>(srng.uniform_int(3));
            spec.gaps.mean_len_s = 4.0;

            synth::SynthSession gen = synth::gen_session(spec);

            // a few sessions carry a >50%-missing trace to exercise the
            // exclusion rule end to end
            bool forced_drop = false;
            if (produced % 11 == 5) {
                SignalTrace& t = gen.session.traces[static_cast<std::size_t>(produced) % 3];
                const auto start = static_cast<std::size_t>(
                    spec.baseline_s * t.rate_hz + t.rate_hz);
                const auto len = static_cast<std::size_t>(0.6 * t.valid.size());
                for (std::size_t i = start; i < std::min(start + len, t.valid.size()); ++i)
                    t.valid[i] = 0;
                forced_drop = true;
            }

            char fname[32];
            std::snprintf(fname, sizeof(fname), "%s_s%d.json", sid, si);
            write_file(out_dir / fname, serialize_session(gen.session, 0));
            truth_manifest.push_back(
                {{"file", fname},
                 {"subject_id", sid},
                 {"session_index", si},
                 {"hr_mean", gen.truth.hr_mean},
                 {"rr_mean_ms", gen.truth.rr_mean_ms},
                 {"sdnn_ms", gen.truth.sdnn_ms},
                 {"rmssd_ms", gen.truth.rmssd_ms},
                 {"bf_rate_per_min", gen.truth.bf_rate_per_min},
                 {"gap_count", gen.truth.gap_count},
                 {"forced_missing_trace", forced_drop}});
        }
    }
    write_file(out_dir / "ground_truth.json", truth_manifest.dump(2));
}

} // namespace biosession::pipeline
