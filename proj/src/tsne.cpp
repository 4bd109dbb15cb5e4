#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "biosession/clustering.hpp"
#include "biosession/rng.hpp"

namespace biosession::cluster {

namespace {

// ----------------------------------------------------------------------------
// Input similarities: conditional Gaussians with per-point precision found by
// binary search on the perplexity, then symmetrized and normalized.
// ----------------------------------------------------------------------------

Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& X, double perplexity) {
    const int n = static_cast<int>(X.rows());
    Eigen::MatrixXd d2(n, n);
    for (int i = 0; i < n; ++i) {
        d2(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
            const double d = (X.row(i) - X.row(j)).squaredNorm();
            d2(i, j) = d;
            d2(j, i) = d;
        }
    }

    const double target_entropy = std::log(perplexity);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        Eigen::VectorXd probs(n);
        for (int iter = 0; iter < 64; ++iter) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                probs[j] = j == i ? 0.0 : std::exp(-beta * d2(i, j));
                sum += probs[j];
            }
            double entropy = 0.0;
            if (sum > 0.0) {
                for (int j = 0; j < n; ++j) {
                    if (probs[j] <= 0.0) continue;
                    const double p = probs[j] / sum;
                    entropy -= p * std::log(p);
                }
            }
            const double diff = entropy - target_entropy;
            if (std::abs(diff) < 1e-7) break;
            if (diff > 0.0) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = beta_lo > 0.0 ? 0.5 * (beta + beta_lo) : beta / 2.0;
            }
            probs.setZero();
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            probs[j] = j == i ? 0.0 : std::exp(-beta * d2(i, j));
            sum += probs[j];
        }
        if (sum <= 0.0) {
            // all other points coincide at infinite distance scale: uniform row
            for (int j = 0; j < n; ++j) probs[j] = j == i ? 0.0 : 1.0;
            sum = static_cast<double>(n - 1);
        }
        for (int j = 0; j < n; ++j) P(i, j) = probs[j] / sum;
    }

    Eigen::MatrixXd joint = (P + P.transpose()) / (2.0 * n);
    const double total = joint.sum();
    if (total > 0.0) joint /= total;
    // floor keeps log terms finite during early exaggeration
    return joint.cwiseMax(1e-12);
}

// ----------------------------------------------------------------------------
// Quadtree for Barnes-Hut repulsion in the 2-D embedding.
// ----------------------------------------------------------------------------

struct QuadTree {
    struct Node {
        double cx, cy, half;
        double com_x = 0.0, com_y = 0.0;
        int count = 0;
        int children[4] = {-1, -1, -1, -1};
        double px = 0.0, py = 0.0; // occupied leaf position
        bool leaf = true;
    };
    std::vector<Node> nodes;

    explicit QuadTree(const Eigen::MatrixXd& y) {
        const double min_x = y.col(0).minCoeff(), max_x = y.col(0).maxCoeff();
        const double min_y = y.col(1).minCoeff(), max_y = y.col(1).maxCoeff();
        const double half =
            0.5 * std::max({max_x - min_x, max_y - min_y, 1e-6}) + 1e-6;
        nodes.push_back({0.5 * (min_x + max_x), 0.5 * (min_y + max_y), half});
        for (Eigen::Index i = 0; i < y.rows(); ++i) insert(0, y(i, 0), y(i, 1), 0);
    }

    void insert(int node, double x, double ypos, int depth) {
        Node& nd = nodes[node];
        const int count = nd.count;
        nd.com_x = (nd.com_x * count + x) / (count + 1);
        nd.com_y = (nd.com_y * count + ypos) / (count + 1);
        nd.count = count + 1;

        if (nd.leaf) {
            if (nd.count == 1) {
                nd.px = x;
                nd.py = ypos;
                return;
            }
            if ((nd.px == x && nd.py == ypos) || depth > 60)
                return; // coincident points aggregate in the leaf
            // split: push the resident point down, then fall through
            const double ox = nd.px, oy = nd.py;
            nodes[node].leaf = false;
            insert_child(node, ox, oy, depth);
        }
        insert_child(node, x, ypos, depth);
    }

    void insert_child(int node, double x, double ypos, int depth) {
        const int quadrant = (x > nodes[node].cx ? 1 : 0) + (ypos > nodes[node].cy ? 2 : 0);
        if (nodes[node].children[quadrant] < 0) {
            const double h = nodes[node].half / 2.0;
            const double cx = nodes[node].cx + (quadrant & 1 ? h : -h);
            const double cy = nodes[node].cy + (quadrant & 2 ? h : -h);
            nodes[node].children[quadrant] = static_cast<int>(nodes.size());
            nodes.push_back({cx, cy, h});
        }
        const int child = nodes[node].children[quadrant];
        Node& cnode = nodes[child];
        if (cnode.leaf && cnode.count == 0) {
            cnode.count = 1;
            cnode.com_x = cnode.px = x;
            cnode.com_y = cnode.py = ypos;
            return;
        }
        insert(child, x, ypos, depth + 1);
    }

    // accumulates the repulsive numerator and the normalization Z for point p
    void accumulate(double px, double py, double theta, double& fx, double& fy,
                    double& z) const {
        accumulate_node(0, px, py, theta, fx, fy, z);
    }

    void accumulate_node(int node, double px, double py, double theta, double& fx,
                         double& fy, double& z) const {
        const Node& nd = nodes[node];
        if (nd.count == 0) return;
        const double dx = px - nd.com_x;
        const double dy = py - nd.com_y;
        const double d2 = dx * dx + dy * dy;
        const bool summarize =
            nd.leaf || (2.0 * nd.half) * (2.0 * nd.half) < theta * theta * d2;
        if (summarize) {
            const double w = 1.0 / (1.0 + d2);
            z += nd.count * w;
            const double coeff = nd.count * w * w;
            fx += coeff * dx;
            fy += coeff * dy;
            return;
        }
        for (const int c : nd.children)
            if (c >= 0) accumulate_node(c, px, py, theta, fx, fy, z);
    }
};

double kl_divergence(const Eigen::MatrixXd& P, const Eigen::MatrixXd& y) {
    const int n = static_cast<int>(y.rows());
    double z = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            z += 2.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
    double kl = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double p = P(i, j);
            if (p <= 0.0) continue;
            const double q =
                std::max(1.0 / ((1.0 + (y.row(i) - y.row(j)).squaredNorm()) * z), 1e-300);
            kl += p * std::log(p / q);
        }
    }
    return kl;
}

} // namespace

TsneResult tsne_embed(const Eigen::MatrixXd& matrix, const EmbeddingConfig& cfg) {
    const int n = static_cast<int>(matrix.rows());
    if (n < 5) throw Error(ErrorCode::TooShort, "tsne_embed needs n >= 5");
    if (!matrix.allFinite())
        throw Error(ErrorCode::OutOfRange, "tsne_embed input contains non-finite values");
    if (!(cfg.theta >= 0.0 && cfg.theta <= 1.0))
        throw Error(ErrorCode::OutOfRange, "theta must be in [0, 1]");

    TsneResult result;
    const double cap = (static_cast<double>(n) - 1.0) / 3.0;
    double perplexity = cfg.perplexity;
    if (perplexity > cap) {
        perplexity = std::floor(cap);
        result.warnings.push_back("perplexity capped at " + std::to_string(perplexity) +
                                  " for n = " + std::to_string(n));
    }
    if (perplexity < 1.0)
        throw Error(ErrorCode::PerplexityTooLarge,
                    "no admissible perplexity for n = " + std::to_string(n));
    result.perplexity_used = perplexity;

    Eigen::MatrixXd P = joint_probabilities(matrix, perplexity);
    P *= cfg.early_exaggeration;

    Rng rng(cfg.seed ^ 0x74736e65ULL);
    Eigen::MatrixXd y(n, 2);
    for (int i = 0; i < n; ++i) {
        y(i, 0) = 1e-4 * rng.normal();
        y(i, 1) = 1e-4 * rng.normal();
    }
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(n, 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
    Eigen::MatrixXd grad(n, 2);

    bool exaggeration_on = true;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        if (exaggeration_on && iter == cfg.exaggeration_iters) {
            P /= cfg.early_exaggeration;
            exaggeration_on = false;
            result.kl_after_exaggeration = kl_divergence(P, y);
        }

        // attractive part, exact over the dense P
        grad.setZero();
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const double dx = y(i, 0) - y(j, 0);
                const double dy = y(i, 1) - y(j, 1);
                const double w = 1.0 / (1.0 + dx * dx + dy * dy);
                const double coeff = P(i, j) * w; // symmetric
                grad(i, 0) += coeff * dx;
                grad(i, 1) += coeff * dy;
                grad(j, 0) -= coeff * dx;
                grad(j, 1) -= coeff * dy;
            }
        }

        // repulsive part via Barnes-Hut
        const QuadTree tree(y);
        Eigen::MatrixXd rep(n, 2);
        double z_total = 0.0;
        for (int i = 0; i < n; ++i) {
            double fx = 0.0, fy = 0.0, z = 0.0;
            tree.accumulate(y(i, 0), y(i, 1), cfg.theta, fx, fy, z);
            z -= 1.0; // remove the self term w(0) = 1
            rep(i, 0) = fx;
            rep(i, 1) = fy;
            z_total += z;
        }
        if (z_total > 0.0) grad -= rep / z_total;
        grad *= 4.0;

        const double momentum = iter < cfg.exaggeration_iters ? 0.5 : 0.8;
        for (int i = 0; i < n; ++i) {
            for (int d = 0; d < 2; ++d) {
                const bool same_sign = (grad(i, d) > 0.0) == (delta(i, d) > 0.0);
                gains(i, d) = same_sign ? std::max(gains(i, d) * 0.8, 0.01)
                                        : gains(i, d) + 0.2;
                delta(i, d) =
                    momentum * delta(i, d) - cfg.learning_rate * gains(i, d) * grad(i, d);
                y(i, d) += delta(i, d);
            }
        }
        y.rowwise() -= y.colwise().mean(); // keep the embedding centered
    }

    if (exaggeration_on) P /= cfg.early_exaggeration; // short runs
    result.kl_final = kl_divergence(P, y);
    if (cfg.iterations <= cfg.exaggeration_iters)
        result.kl_after_exaggeration = result.kl_final;
    result.embedding = std::move(y);
    return result;
}

} // namespace biosession::cluster
