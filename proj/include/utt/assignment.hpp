#pragma once

#include <Eigen/Core>
#include <vector>

namespace utt {

/// Minimum-cost one-to-one assignment (Hungarian method, O(n^2 m)).
/// Returns, for each row, the assigned column or -1. Every row is assigned
/// when rows <= cols, otherwise every column is.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

/// Same, maximizing the total score.
std::vector<int> solve_max_assignment(const Eigen::MatrixXd& score);

}  // namespace utt
