#include "biosession/random_forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "biosession/rng.hpp"

namespace biosession {

namespace {

double mean_of(const Eigen::VectorXd& y, const std::vector<int>& idx, int begin, int end) {
    double s = 0.0;
    for (int i = begin; i < end; ++i) s += y[idx[i]];
    return s / (end - begin);
}

} // namespace

int RandomForestRegressor::build_node(Tree& tree, const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y, std::vector<int>& indices,
                                      int begin, int end, int depth) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node_id].value = mean_of(y, indices, begin, end);

    const int count = end - begin;
    if (count < 2 * params_.min_samples_leaf ||
        (params_.max_depth > 0 && depth >= params_.max_depth))
        return node_id;

    // best split: maximize sum-of-squares reduction, exact scan per feature
    double parent_sum = 0.0, parent_sq = 0.0;
    for (int i = begin; i < end; ++i) {
        parent_sum += y[indices[i]];
        parent_sq += y[indices[i]] * y[indices[i]];
    }
    const double parent_sse = parent_sq - parent_sum * parent_sum / count;
    if (parent_sse <= 1e-24) return node_id; // pure node

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_sse = parent_sse;
    std::vector<int> sorted(indices.begin() + begin, indices.begin() + end);
    for (int f = 0; f < X.cols(); ++f) {
        std::sort(sorted.begin(), sorted.end(),
                  [&](int a, int b) { return X(a, f) < X(b, f); });
        double left_sum = 0.0, left_sq = 0.0;
        for (int i = 0; i + 1 < count; ++i) {
            const double yi = y[sorted[i]];
            left_sum += yi;
            left_sq += yi * yi;
            if (X(sorted[i], f) == X(sorted[i + 1], f)) continue; // no boundary here
            const int nl = i + 1, nr = count - nl;
            if (nl < params_.min_samples_leaf || nr < params_.min_samples_leaf) continue;
            const double right_sum = parent_sum - left_sum;
            const double right_sq = parent_sq - left_sq;
            const double sse = (left_sq - left_sum * left_sum / nl) +
                               (right_sq - right_sum * right_sum / nr);
            if (sse < best_sse - 1e-24) {
                best_sse = sse;
                best_feature = f;
                best_threshold = 0.5 * (X(sorted[i], f) + X(sorted[i + 1], f));
            }
        }
    }
    if (best_feature < 0) return node_id;

    const auto mid_it = std::partition(
        indices.begin() + begin, indices.begin() + end,
        [&](int i) { return X(i, best_feature) <= best_threshold; });
    const int mid = static_cast<int>(mid_it - indices.begin());
    if (mid == begin || mid == end) return node_id; // numeric degeneracy

    tree.nodes[node_id].feature = best_feature;
    tree.nodes[node_id].threshold = best_threshold;
    const int left = build_node(tree, X, y, indices, begin, mid, depth + 1);
    tree.nodes[node_id].left = left;
    const int right = build_node(tree, X, y, indices, mid, end, depth + 1);
    tree.nodes[node_id].right = right;
    return node_id;
}

void RandomForestRegressor::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const int n = static_cast<int>(X.rows());
    trees_.clear();
    trees_.resize(params_.n_trees);
    Rng root(params_.seed);
    for (int t = 0; t < params_.n_trees; ++t) {
        Rng rng = root.child(static_cast<std::uint64_t>(t));
        std::vector<int> bootstrap(n);
        for (int i = 0; i < n; ++i)
            bootstrap[i] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
        build_node(trees_[t], X, y, bootstrap, 0, n, 0);
    }
}

double RandomForestRegressor::predict(const Eigen::RowVectorXd& x) const {
    double acc = 0.0;
    for (const Tree& tree : trees_) {
        int node = 0;
        while (tree.nodes[node].feature >= 0) {
            node = x[tree.nodes[node].feature] <= tree.nodes[node].threshold
                       ? tree.nodes[node].left
                       : tree.nodes[node].right;
        }
        acc += tree.nodes[node].value;
    }
    return acc / static_cast<double>(trees_.size());
}

Eigen::VectorXd RandomForestRegressor::predict(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        out[i] = predict(Eigen::RowVectorXd(X.row(i)));
    return out;
}

} // namespace biosession
