#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace biosession {

/// Bagged CART regression forest: bootstrap per tree, exact best-SSE splits
/// over all features, leaves grown to min_samples_leaf. Deterministic given
/// the seed.
class RandomForestRegressor {
public:
    struct Params {
        int n_trees = 100;
        int max_depth = 0; // 0 = unlimited
        int min_samples_leaf = 1;
        std::uint64_t seed = 0;
    };

    explicit RandomForestRegressor(Params params) : params_(params) {}

    void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
    double predict(const Eigen::RowVectorXd& x) const;
    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;

private:
    struct Node {
        int feature = -1;        // -1 marks a leaf
        double threshold = 0.0;  // go left when x[feature] <= threshold
        double value = 0.0;
        int left = -1, right = -1;
    };
    struct Tree {
        std::vector<Node> nodes;
    };

    int build_node(Tree& tree, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   std::vector<int>& indices, int begin, int end, int depth);

    Params params_;
    std::vector<Tree> trees_;
};

} // namespace biosession
