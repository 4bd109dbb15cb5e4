#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "biosession/clustering.hpp"
#include "biosession/rng.hpp"
#include "biosession/synth.hpp"

using namespace biosession;
using namespace biosession::cluster;

namespace {

// labels match up to a permutation of cluster ids
bool labels_match(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> mapping;
    std::set<int> used;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto it = mapping.find(a[i]);
        if (it == mapping.end()) {
            if (used.count(b[i])) return false;
            mapping[a[i]] = b[i];
            used.insert(b[i]);
        } else if (it->second != b[i]) {
            return false;
        }
    }
    return true;
}

// independent brute-force silhouette
double oracle_silhouette(const Eigen::MatrixXd& pts, const std::vector<int>& labels) {
    const int n = static_cast<int>(pts.rows());
    const int k = *std::max_element(labels.begin(), labels.end()) + 1;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> sum(k, 0.0);
        std::vector<int> cnt(k, 0);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            sum[labels[j]] += (pts.row(i) - pts.row(j)).norm();
            ++cnt[labels[j]];
        }
        ++cnt[labels[i]]; // own cluster size includes i
        if (cnt[labels[i]] <= 1) continue;
        const double a = sum[labels[i]] / (cnt[labels[i]] - 1);
        double b = 1e300;
        for (int c = 0; c < k; ++c)
            if (c != labels[i] && cnt[c] > 0) b = std::min(b, sum[c] / cnt[c]);
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

double oracle_davies_bouldin(const Eigen::MatrixXd& pts, const std::vector<int>& labels) {
    const int n = static_cast<int>(pts.rows());
    const int k = *std::max_element(labels.begin(), labels.end()) + 1;
    Eigen::MatrixXd cent = Eigen::MatrixXd::Zero(k, pts.cols());
    std::vector<int> cnt(k, 0);
    for (int i = 0; i < n; ++i) {
        cent.row(labels[i]) += pts.row(i);
        ++cnt[labels[i]];
    }
    for (int c = 0; c < k; ++c) cent.row(c) /= cnt[c];
    std::vector<double> sigma(k, 0.0);
    for (int i = 0; i < n; ++i)
        sigma[labels[i]] += (pts.row(i) - cent.row(labels[i])).norm();
    for (int c = 0; c < k; ++c) sigma[c] /= cnt[c];
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        double worst = 0.0;
        for (int j = 0; j < k; ++j)
            if (i != j)
                worst = std::max(worst,
                                 (sigma[i] + sigma[j]) / (cent.row(i) - cent.row(j)).norm());
        acc += worst;
    }
    return acc / k;
}

} // namespace

TEST_CASE("variance_filter keeps columns at or above the median variance") {
    Rng rng(1);
    Eigen::MatrixXd m(400, 4);
    const double sds[] = {0.0, 1.0, std::sqrt(2.0), std::sqrt(3.0)};
    for (int i = 0; i < 400; ++i)
        for (int j = 0; j < 4; ++j) m(i, j) = sds[j] * rng.normal();
    const std::vector<int> kept = variance_filter(m, 50.0);
    CHECK(kept == std::vector<int>{2, 3}); // median of variances ~1.5

    Eigen::MatrixXd same(100, 3);
    for (int i = 0; i < 100; ++i) {
        const double v = rng.normal();
        same(i, 0) = v;
        same(i, 1) = -v;
        same(i, 2) = v + 1.0;
    }
    CHECK(variance_filter(same, 50.0).size() == 3); // equal variances all kept
}

TEST_CASE("standardize produces exact column z-scores") {
    Eigen::MatrixXd m(3, 1);
    m << 2, 4, 6;
    const Standardized s = standardize(m);
    CHECK(s.matrix(0, 0) == doctest::Approx(-1.0));
    CHECK(s.matrix(1, 0) == doctest::Approx(0.0));
    CHECK(s.matrix(2, 0) == doctest::Approx(1.0));
    CHECK(s.sd[0] == doctest::Approx(2.0));

    // already standardized input is unchanged; stats recompute to (0, 1)
    const Standardized twice = standardize(s.matrix);
    CHECK(twice.mean[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(twice.sd[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < 3; ++i)
        CHECK(twice.matrix(i, 0) == doctest::Approx(s.matrix(i, 0)).epsilon(1e-12));

    Eigen::MatrixXd degenerate(3, 1);
    degenerate.setConstant(5.0);
    CHECK_THROWS_AS(standardize(degenerate), Error);
}

TEST_CASE("variance_filter + standardize commute with column permutation") {
    Rng rng(2);
    Eigen::MatrixXd m(120, 4);
    const double sds[] = {0.5, 3.0, 1.0, 2.0};
    for (int i = 0; i < 120; ++i)
        for (int j = 0; j < 4; ++j) m(i, j) = sds[j] * rng.normal();
    Eigen::MatrixXd permuted(120, 4);
    const int perm[] = {2, 0, 3, 1};
    for (int j = 0; j < 4; ++j) permuted.col(j) = m.col(perm[j]);

    const std::vector<int> kept1 = variance_filter(m, 50.0);
    const std::vector<int> kept2 = variance_filter(permuted, 50.0);
    std::set<int> identity1, identity2;
    for (const int j : kept1) identity1.insert(j);
    for (const int j : kept2) identity2.insert(perm[j]);
    CHECK(identity1 == identity2); // kept columns track input identity
}

TEST_CASE("kmeans closed-form cases") {
    const synth::Blobs blobs = synth::gen_blobs(1, 30, 0.0, 2, 3);
    const KmeansResult one = kmeans(blobs.points, 1, 4, 9);
    const Eigen::RowVectorXd centroid = blobs.points.colwise().mean();
    CHECK((one.centroids.row(0) - centroid).norm() < 1e-9);
    double total = 0.0;
    for (int i = 0; i < blobs.points.rows(); ++i)
        total += (blobs.points.row(i) - centroid).squaredNorm();
    CHECK(one.inertia == doctest::Approx(total).epsilon(1e-9));

    const KmeansResult full = kmeans(blobs.points, 30, 4, 9);
    CHECK(full.inertia == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("kmeans recovers three well-separated blobs exactly") {
    const synth::Blobs blobs = synth::gen_blobs(3, 30, 10.0, 2, 17);
    const KmeansResult km = kmeans(blobs.points, 3, 10, 4);
    CHECK(labels_match(km.labels, blobs.labels));
}

TEST_CASE("kmeans inertia never increases with more restarts") {
    const synth::Blobs blobs = synth::gen_blobs(4, 25, 3.0, 3, 23);
    double prev = std::numeric_limits<double>::infinity();
    for (const int restarts : {1, 3, 10}) {
        const KmeansResult km = kmeans(blobs.points, 4, restarts, 11);
        CHECK(km.inertia <= prev + 1e-9);
        prev = km.inertia;
    }
    CHECK_THROWS_AS(kmeans(blobs.points, 101, 1, 0), Error);
}

TEST_CASE("silhouette: separated blobs high, random labels near zero") {
    const synth::Blobs blobs = synth::gen_blobs(2, 40, 12.0, 2, 29);
    CHECK(silhouette(blobs.points, blobs.labels) >= 0.8);

    Rng rng(31);
    const synth::Blobs cloud = synth::gen_blobs(1, 60, 0.0, 2, 37);
    std::vector<int> random_labels(60);
    for (auto& l : random_labels) l = static_cast<int>(rng.uniform_int(2));
    random_labels[0] = 0;
    random_labels[1] = 1; // both clusters present
    CHECK(std::abs(silhouette(cloud.points, random_labels)) <= 0.1);
}

TEST_CASE("silhouette and davies-bouldin match brute-force recomputation") {
    Rng rng(41);
    const synth::Blobs blobs = synth::gen_blobs(3, 17, 4.0, 3, 43); // n = 51
    Eigen::MatrixXd pts = blobs.points.topRows(50);
    std::vector<int> labels(blobs.labels.begin(), blobs.labels.begin() + 50);
    CHECK(silhouette(pts, labels) ==
          doctest::Approx(oracle_silhouette(pts, labels)).epsilon(1e-12));

    Eigen::MatrixXd pts30 = blobs.points.topRows(30);
    std::vector<int> labels30(blobs.labels.begin(), blobs.labels.begin() + 30);
    CHECK(davies_bouldin(pts30, labels30) ==
          doctest::Approx(oracle_davies_bouldin(pts30, labels30)).epsilon(1e-12));
}

TEST_CASE("davies-bouldin limits and monotonicity in separation") {
    Eigen::MatrixXd points(6, 2);
    points << 0, 0, 0, 0, 0, 0, 9, 9, 9, 9, 9, 9; // two point masses
    const std::vector<int> labels{0, 0, 0, 1, 1, 1};
    CHECK(davies_bouldin(points, labels) == doctest::Approx(0.0));

    double prev = 1e300;
    for (const double sep : {2.0, 4.0, 8.0, 16.0}) {
        const synth::Blobs blobs = synth::gen_blobs(2, 40, sep, 2, 47);
        const double db = davies_bouldin(blobs.points, blobs.labels);
        CHECK(db < prev);
        prev = db;
    }
}

TEST_CASE("scores are invariant under rigid motions") {
    const synth::Blobs blobs = synth::gen_blobs(3, 20, 6.0, 2, 53);
    const double angle = 0.83;
    Eigen::Matrix2d rot;
    rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    Eigen::MatrixXd moved = blobs.points * rot.transpose();
    moved.rowwise() += Eigen::RowVector2d(42.0, -13.0);
    CHECK(silhouette(moved, blobs.labels) ==
          doctest::Approx(silhouette(blobs.points, blobs.labels)).epsilon(1e-9));
    CHECK(davies_bouldin(moved, blobs.labels) ==
          doctest::Approx(davies_bouldin(blobs.points, blobs.labels)).epsilon(1e-9));
}

TEST_CASE("select_k finds the planted number of blobs") {
    const synth::Blobs three = synth::gen_blobs(3, 25, 10.0, 2, 59);
    CHECK(select_k(three.points, 2, 8, 3).k_best == 3);

    const synth::Blobs two = synth::gen_blobs(2, 30, 10.0, 2, 61);
    CHECK(select_k(two.points, 2, 8, 3).k_best == 2);

    // single cloud: a full table comes back, no hard error
    const synth::Blobs one = synth::gen_blobs(1, 60, 0.0, 2, 67);
    const KSelection sel = select_k(one.points, 2, 6, 3);
    CHECK(sel.table.size() == 5);
    for (const auto& row : sel.table) CHECK(row.silhouette < 0.6);
}

TEST_CASE("tsne separates planted blobs by the 1-NN consistency metric") {
    const synth::Blobs blobs = synth::gen_blobs(2, 50, 10.0, 5, 71);
    EmbeddingConfig cfg;
    cfg.seed = 5;
    const TsneResult result = tsne_embed(blobs.points, cfg);
    REQUIRE(result.embedding.rows() == 100);
    REQUIRE(result.embedding.cols() == 2);

    int consistent = 0;
    for (int i = 0; i < 100; ++i) {
        double best = 1e300;
        int arg = -1;
        for (int j = 0; j < 100; ++j) {
            if (i == j) continue;
            const double d = (result.embedding.row(i) - result.embedding.row(j)).squaredNorm();
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        consistent += blobs.labels[i] == blobs.labels[arg];
    }
    CHECK(consistent >= 95);
    CHECK(result.kl_final <= result.kl_after_exaggeration + 1e-9);
    CHECK(std::abs(result.embedding.col(0).mean()) < 1e-6); // centered
}

TEST_CASE("tsne keeps duplicated rows adjacent in the embedding") {
    Rng rng(73);
    Eigen::MatrixXd m(40, 4);
    for (int i = 0; i < 40; ++i)
        for (int j = 0; j < 4; ++j) m(i, j) = rng.normal();
    m.row(39) = m.row(0); // exact duplicate
    EmbeddingConfig cfg;
    cfg.seed = 9;
    const TsneResult result = tsne_embed(m, cfg);

    const double dup = (result.embedding.row(39) - result.embedding.row(0)).norm();
    std::vector<double> all;
    for (int i = 0; i < 40; ++i)
        for (int j = i + 1; j < 40; ++j)
            all.push_back((result.embedding.row(i) - result.embedding.row(j)).norm());
    std::sort(all.begin(), all.end());
    CHECK(dup <= all[all.size() / 20]); // below the 5th percentile
}

TEST_CASE("tsne caps the perplexity and stays reproducible") {
    Rng rng(79);
    Eigen::MatrixXd m(10, 3);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = rng.normal();
    EmbeddingConfig cfg;
    cfg.perplexity = 30.0;
    cfg.seed = 21;
    cfg.iterations = 300;
    const TsneResult a = tsne_embed(m, cfg);
    CHECK(a.perplexity_used == doctest::Approx(3.0));
    REQUIRE(a.warnings.size() == 1);
    CHECK(a.warnings[0].find("capped") != std::string::npos);

    const TsneResult b = tsne_embed(m, cfg);
    CHECK(a.embedding == b.embedding); // bit-identical given the seed

    Eigen::MatrixXd tiny(4, 2);
    tiny.setRandom();
    CHECK_THROWS_AS(tsne_embed(tiny, cfg), Error);
}

TEST_CASE("cluster_profile flags planted shifts and calibrates on nulls") {
    // same distribution in both clusters: few false flags across seeds
    int flagged = 0, total = 0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed) + 200);
        Eigen::MatrixXd table(40, 3);
        for (int i = 0; i < 40; ++i)
            for (int j = 0; j < 3; ++j) table(i, j) = rng.normal();
        std::vector<int> labels(40);
        for (int i = 0; i < 40; ++i) labels[i] = i < 20 ? 0 : 1;
        const ClusterProfile p = cluster_profile(labels, table, {"a", "b", "c"});
        for (const auto& row : p.rows)
            for (const auto& c : row.comparisons) {
                ++total;
                flagged += c.significant;
            }
    }
    CHECK(static_cast<double>(flagged) / total <= 0.10);

    // a +3 sigma shift on one feature is flagged with U near zero
    Rng rng(301);
    Eigen::MatrixXd table(40, 2);
    for (int i = 0; i < 40; ++i) {
        table(i, 0) = rng.normal() + (i < 20 ? 3.0 : 0.0);
        table(i, 1) = rng.normal();
    }
    std::vector<int> labels(40);
    for (int i = 0; i < 40; ++i) labels[i] = i < 20 ? 0 : 1;
    const ClusterProfile p = cluster_profile(labels, table, {"shifted", "noise"});
    REQUIRE(p.rows.size() == 2);
    CHECK(p.sizes == std::vector<int>{20, 20});
    REQUIRE(p.rows[0].comparisons.size() == 1);
    CHECK(p.rows[0].comparisons[0].significant);
    CHECK(p.rows[0].comparisons[0].u <= 60.0); // far below mn/2 = 200
    CHECK(p.rows[0].means.size() == 2);        // one column per cluster
}
