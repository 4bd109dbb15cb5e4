#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "biosession/stats.hpp"

namespace biosession::cluster {

/// Indices of columns whose variance reaches the given percentile of the
/// column-variance distribution (>=, so equal-variance columns all survive).
std::vector<int> variance_filter(const Eigen::MatrixXd& matrix, double percentile = 50.0);

struct Standardized {
    Eigen::MatrixXd matrix; // column-wise z-scores
    Eigen::VectorXd mean;
    Eigen::VectorXd sd; // sample SD
};

Standardized standardize(const Eigen::MatrixXd& matrix);

struct EmbeddingConfig {
    double perplexity = 30.0; // auto-capped at (n-1)/3
    double theta = 0.5;       // Barnes-Hut accuracy (0 = exact)
    int iterations = 1000;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    double learning_rate = 200.0;
    std::uint64_t seed = 0;
};

struct TsneResult {
    Eigen::MatrixXd embedding; // n x 2, centered
    double kl_after_exaggeration = 0.0;
    double kl_final = 0.0;
    double perplexity_used = 0.0;
    std::vector<std::string> warnings;
};

/// Barnes-Hut t-SNE to 2 components: exact input similarities with binary
/// perplexity search, quadtree-approximated repulsive forces, momentum +
/// per-dimension gains, early exaggeration. Deterministic given the seed.
TsneResult tsne_embed(const Eigen::MatrixXd& matrix, const EmbeddingConfig& cfg);

struct KmeansResult {
    std::vector<int> labels;
    Eigen::MatrixXd centroids;
    double inertia = 0.0;
};

/// k-means++ initialization, Lloyd iterations to inertia tolerance 1e-10,
/// best of `restarts` seeded runs.
KmeansResult kmeans(const Eigen::MatrixXd& points, int k, int restarts = 10,
                    std::uint64_t seed = 0);

/// Mean over points of (b - a)/max(a, b); brute-force O(n^2) distances.
double silhouette(const Eigen::MatrixXd& points, const std::vector<int>& labels);

/// Mean over clusters of the worst (sigma_i + sigma_j)/d(c_i, c_j); sigma is
/// the mean distance to the centroid. Coincident centroids yield +infinity.
double davies_bouldin(const Eigen::MatrixXd& points, const std::vector<int>& labels);

struct KSelection {
    struct Row {
        int k;
        double silhouette;
        double davies_bouldin;
        double inertia;
    };
    int k_best = 0;
    std::vector<Row> table;
};

/// Scores every k in [k_min, k_max]; k_best maximizes silhouette with lower
/// Davies-Bouldin as the tie-breaker.
KSelection select_k(const Eigen::MatrixXd& points, int k_min = 2, int k_max = 8,
                    std::uint64_t seed = 0, int restarts = 10);

struct ClusterModel {
    Eigen::MatrixXd embedding;
    std::vector<int> labels;
    int k = 0;
    double inertia = 0.0;
    double silhouette = 0.0;
    double davies_bouldin = 0.0;
    std::uint64_t seed = 0;
};

struct ClusterProfile {
    struct FeatureRow {
        std::string feature;
        std::vector<double> means; // per cluster
        std::vector<double> sds;
        struct Comparison {
            int cluster_a, cluster_b;
            double u;
            double p;
            bool significant;
        };
        std::vector<Comparison> comparisons;
    };
    std::vector<int> sizes;
    std::vector<FeatureRow> rows;
};

/// Per-cluster mean (SD) of every feature column plus all pairwise
/// Mann-Whitney comparisons, flagged at the given alpha.
ClusterProfile cluster_profile(const std::vector<int>& labels,
                               const Eigen::MatrixXd& feature_table,
                               const std::vector<std::string>& feature_names,
                               double alpha = 0.05);

} // namespace biosession::cluster
