#pragma once

#include <cstddef>
#include <vector>

#include "diffrte/blocks.hpp"
#include "diffrte/diffusion.hpp"

namespace diffrte {

struct LossWeights {
    double beta1 = 1.0;  // up/down edges
    double beta2 = 1.0;  // left/right edges
    double beta3 = 1.0;  // level
};

// cost[i][j]: weighted negative log-likelihood of ground truth j under
// prediction i. Probabilities are floored before the log, so entries are
// finite and non-negative.
struct CostMatrix {
    std::size_t predictions = 0;   // N
    std::size_t ground_truths = 0; // M
    std::vector<double> cost;      // row-major N x M

    double at(std::size_t i, std::size_t j) const { return cost[i * ground_truths + j]; }
    double& at(std::size_t i, std::size_t j) { return cost[i * ground_truths + j]; }
};

CostMatrix build_cost(const BlockProbabilities& probs, const std::vector<DiscreteBlock>& gt,
                      const LossWeights& betas);

// How surplus predictions (beyond the matched core) pick their target.
enum class SurplusPolicy { cheapest_ground_truth, pad_repeat };

struct AssignmentMap {
    // Target ground-truth index for every prediction.
    std::vector<std::size_t> xi;
    // core[j] = prediction index covering ground truth j; entries distinct.
    std::vector<std::size_t> core;

    double core_cost(const CostMatrix& c) const;
};

// Minimum-total-cost one-to-one cover of all M ground truths (Hungarian /
// successive shortest augmenting paths); requires N >= M.
AssignmentMap optimal_assign(const CostMatrix& cost,
                             SurplusPolicy policy = SurplusPolicy::cheapest_ground_truth);

// Assigns each row of an R x C matrix (R <= C) to a distinct column at
// minimum total cost. Returns the column per row.
std::vector<std::size_t> min_cost_row_assignment(const std::vector<double>& cost,
                                                 std::size_t rows, std::size_t cols);

}  // namespace diffrte
