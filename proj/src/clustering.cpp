#include "biosession/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "biosession/numeric.hpp"
#include "biosession/rng.hpp"

namespace biosession::cluster {

std::vector<int> variance_filter(const Eigen::MatrixXd& matrix, double percentile_q) {
    const int p = static_cast<int>(matrix.cols());
    if (p < 2) throw Error(ErrorCode::TooShort, "variance_filter needs >= 2 columns");
    std::vector<double> variances(p);
    for (int j = 0; j < p; ++j) {
        const double m = matrix.col(j).mean();
        variances[j] = (matrix.col(j).array() - m).square().sum() /
                       std::max<double>(1.0, static_cast<double>(matrix.rows() - 1));
    }
    const double cut = percentile(variances, percentile_q);
    std::vector<int> kept;
    for (int j = 0; j < p; ++j)
        if (variances[j] >= cut) kept.push_back(j);
    return kept;
}

Standardized standardize(const Eigen::MatrixXd& matrix) {
    Standardized s;
    const auto n = matrix.rows();
    s.mean.resize(matrix.cols());
    s.sd.resize(matrix.cols());
    s.matrix.resizeLike(matrix);
    for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
        const double m = matrix.col(j).mean();
        const double sd = std::sqrt((matrix.col(j).array() - m).square().sum() /
                                    static_cast<double>(n - 1));
        if (!(sd > 0.0))
            throw Error(ErrorCode::ZeroVariance,
                        "column " + std::to_string(j) + " has zero variance");
        s.mean[j] = m;
        s.sd[j] = sd;
        s.matrix.col(j) = (matrix.col(j).array() - m) / sd;
    }
    return s;
}

// ============================================================================
// k-means
// ============================================================================

namespace {

double squared_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return (a - b).squaredNorm();
}

KmeansResult kmeans_single(const Eigen::MatrixXd& points, int k, Rng& rng) {
    const int n = static_cast<int>(points.rows());
    const auto dim = points.cols();

    // k-means++ seeding
    Eigen::MatrixXd centroids(k, dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    const int first = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    centroids.row(0) = points.row(first);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c - 1)));
            total += d2[i];
        }
        int chosen = n - 1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
        }
        centroids.row(c) = points.row(chosen);
    }

    std::vector<int> labels(n, 0);
    double inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 300; ++iter) {
        double new_inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (int c = 0; c < k; ++c) {
                const double d = squared_distance(points.row(i), centroids.row(c));
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
            labels[i] = arg;
            new_inertia += best;
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(labels[i]) += points.row(i);
            ++counts[labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // re-seed an empty cluster at the farthest point
                int far = 0;
                double best = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d =
                        squared_distance(points.row(i), centroids.row(labels[i]));
                    if (d > best) {
                        best = d;
                        far = i;
                    }
                }
                centroids.row(c) = points.row(far);
            } else {
                centroids.row(c) = sums.row(c) / counts[c];
            }
        }
        if (std::abs(inertia - new_inertia) <= 1e-10 * std::max(1.0, new_inertia)) {
            inertia = new_inertia;
            break;
        }
        inertia = new_inertia;
    }
    // final assignment against the converged centroids
    double final_inertia = 0.0;
    for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c < k; ++c) {
            const double d = squared_distance(points.row(i), centroids.row(c));
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        labels[i] = arg;
        final_inertia += best;
    }
    return {std::move(labels), std::move(centroids), final_inertia};
}

} // namespace

KmeansResult kmeans(const Eigen::MatrixXd& points, int k, int restarts, std::uint64_t seed) {
    const int n = static_cast<int>(points.rows());
    if (k < 1 || k > n)
        throw Error(ErrorCode::KTooLarge, "kmeans needs 1 <= k <= n");
    Rng root(seed ^ 0x6b6d65616e73ULL);
    KmeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, restarts); ++r) {
        Rng rng = root.child(static_cast<std::uint64_t>(r));
        KmeansResult candidate = kmeans_single(points, k, rng);
        if (candidate.inertia < best.inertia) best = std::move(candidate);
    }
    return best;
}

// ============================================================================
// Internal quality scores
// ============================================================================

double silhouette(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
    const int n = static_cast<int>(points.rows());
    if (static_cast<int>(labels.size()) != n)
        throw Error(ErrorCode::LengthMismatch, "labels do not align with points");
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    if (k < 2 || k > n - 1)
        throw Error(ErrorCode::OutOfRange, "silhouette needs 2 <= k <= n-1");
    std::vector<int> sizes(k, 0);
    for (const int l : labels) ++sizes[l];
    if (std::all_of(sizes.begin(), sizes.end(), [](int s) { return s <= 1; }))
        throw Error(ErrorCode::SingletonOnly, "all clusters are singletons");

    double acc = 0.0;
    std::vector<double> dist_to(k);
    for (int i = 0; i < n; ++i) {
        std::fill(dist_to.begin(), dist_to.end(), 0.0);
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            dist_to[labels[j]] += std::sqrt(squared_distance(points.row(i), points.row(j)));
        }
        const int own = labels[i];
        if (sizes[own] <= 1) continue; // singleton contributes 0
        const double a = dist_to[own] / (sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == own || sizes[c] == 0) continue;
            b = std::min(b, dist_to[c] / sizes[c]);
        }
        acc += (b - a) / std::max(a, b);
    }
    return acc / n;
}

double davies_bouldin(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
    const int n = static_cast<int>(points.rows());
    if (static_cast<int>(labels.size()) != n)
        throw Error(ErrorCode::LengthMismatch, "labels do not align with points");
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    if (k < 2) throw Error(ErrorCode::OutOfRange, "davies_bouldin needs k >= 2");

    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> sizes(k, 0);
    for (int i = 0; i < n; ++i) {
        centroids.row(labels[i]) += points.row(i);
        ++sizes[labels[i]];
    }
    for (int c = 0; c < k; ++c)
        if (sizes[c] > 0) centroids.row(c) /= sizes[c];

    std::vector<double> sigma(k, 0.0); // mean distance to own centroid
    for (int i = 0; i < n; ++i)
        sigma[labels[i]] +=
            std::sqrt(squared_distance(points.row(i), centroids.row(labels[i])));
    for (int c = 0; c < k; ++c)
        if (sizes[c] > 0) sigma[c] /= sizes[c];

    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        double worst = 0.0;
        for (int j = 0; j < k; ++j) {
            if (i == j) continue;
            const double d = std::sqrt(squared_distance(centroids.row(i), centroids.row(j)));
            const double ratio = d > 0.0 ? (sigma[i] + sigma[j]) / d
                                         : std::numeric_limits<double>::infinity();
            worst = std::max(worst, ratio);
        }
        acc += worst;
    }
    return acc / k;
}

KSelection select_k(const Eigen::MatrixXd& points, int k_min, int k_max, std::uint64_t seed,
                    int restarts) {
    const int n = static_cast<int>(points.rows());
    if (k_min < 2 || k_max > n - 1 || k_min > k_max)
        throw Error(ErrorCode::OutOfRange, "select_k range must lie within [2, n-1]");
    KSelection sel;
    double best_sil = -2.0, best_db = std::numeric_limits<double>::infinity();
    for (int k = k_min; k <= k_max; ++k) {
        const KmeansResult km = kmeans(points, k, restarts, seed + static_cast<std::uint64_t>(k));
        const double sil = silhouette(points, km.labels);
        const double db = davies_bouldin(points, km.labels);
        sel.table.push_back({k, sil, db, km.inertia});
        const bool better = sil > best_sil || (sil == best_sil && db < best_db);
        if (better) {
            best_sil = sil;
            best_db = db;
            sel.k_best = k;
        }
    }
    return sel;
}

ClusterProfile cluster_profile(const std::vector<int>& labels,
                               const Eigen::MatrixXd& feature_table,
                               const std::vector<std::string>& feature_names,
                               double alpha) {
    const int n = static_cast<int>(feature_table.rows());
    if (static_cast<int>(labels.size()) != n)
        throw Error(ErrorCode::LengthMismatch, "labels do not align with the feature table");
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

    ClusterProfile profile;
    profile.sizes.assign(k, 0);
    for (const int l : labels) ++profile.sizes[l];

    for (Eigen::Index col = 0; col < feature_table.cols(); ++col) {
        ClusterProfile::FeatureRow row;
        row.feature = static_cast<std::size_t>(col) < feature_names.size()
                          ? feature_names[static_cast<std::size_t>(col)]
                          : "f" + std::to_string(col);
        std::vector<std::vector<double>> groups(k);
        for (int i = 0; i < n; ++i)
            groups[labels[i]].push_back(feature_table(i, col));
        for (int c = 0; c < k; ++c) {
            row.means.push_back(mean(groups[c]));
            row.sds.push_back(sample_sd(groups[c]));
        }
        for (int a = 0; a < k; ++a) {
            for (int b = a + 1; b < k; ++b) {
                if (groups[a].size() < 3 || groups[b].size() < 3) continue;
                const stats::TestResult r = stats::mann_whitney_u(groups[a], groups[b]);
                row.comparisons.push_back(
                    {a, b, r.statistic, r.p_value, r.p_value < alpha});
            }
        }
        profile.rows.push_back(std::move(row));
    }
    return profile;
}

} // namespace biosession::cluster
