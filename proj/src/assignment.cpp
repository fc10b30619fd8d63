#include "diffrte/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace diffrte {

namespace {

constexpr double kProbFloor = 1e-12;

double nll(double p) { return -std::log(std::max(p, kProbFloor)); }

}  // namespace

CostMatrix build_cost(const BlockProbabilities& probs, const std::vector<DiscreteBlock>& gt,
                      const LossWeights& betas) {
    const std::size_t n = probs.block_count();
    const std::size_t m = gt.size();
    if (m == 0) throw ValidationError("build_cost: need at least one ground truth");
    CostMatrix c;
    c.predictions = n;
    c.ground_truths = m;
    c.cost.assign(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const DiscreteBlock& g = gt[j];
            const double edge_ud = nll(probs.up.at(i, g.up)) + nll(probs.down.at(i, g.down));
            const double edge_lr = nll(probs.left.at(i, g.left)) + nll(probs.right.at(i, g.right));
            const double level = nll(probs.level.at(i, g.level));
            c.at(i, j) = betas.beta1 * edge_ud + betas.beta2 * edge_lr + betas.beta3 * level;
        }
    }
    return c;
}

std::vector<std::size_t> min_cost_row_assignment(const std::vector<double>& cost,
                                                 std::size_t rows, std::size_t cols) {
    if (rows > cols) throw ValidationError("min_cost_row_assignment: rows must be <= cols");
    if (cost.size() != rows * cols) throw ValidationError("min_cost_row_assignment: bad size");
    const double inf = std::numeric_limits<double>::infinity();
    // Potentials-based successive shortest augmenting paths, 1-indexed.
    std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
    std::vector<std::size_t> matched_row(cols + 1, 0);  // 0 = free
    std::vector<std::size_t> way(cols + 1, 0);
    for (std::size_t i = 1; i <= rows; ++i) {
        matched_row[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(cols + 1, inf);
        std::vector<bool> used(cols + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = matched_row[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= cols; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= cols; ++j) {
                if (used[j]) {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (matched_row[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col_of_row(rows, 0);
    for (std::size_t j = 1; j <= cols; ++j) {
        if (matched_row[j] != 0) col_of_row[matched_row[j] - 1] = j - 1;
    }
    return col_of_row;
}

double AssignmentMap::core_cost(const CostMatrix& c) const {
    double total = 0.0;
    for (std::size_t j = 0; j < core.size(); ++j) total += c.at(core[j], j);
    return total;
}

AssignmentMap optimal_assign(const CostMatrix& cost, SurplusPolicy policy) {
    const std::size_t n = cost.predictions;
    const std::size_t m = cost.ground_truths;
    if (n < m) {
        throw ValidationError("optimal_assign: predictions (" + std::to_string(n) +
                              ") must be >= ground truths (" + std::to_string(m) + ")");
    }
    AssignmentMap map;
    // Rows = ground truths, columns = predictions.
    std::vector<double> transposed(m * n, 0.0);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < n; ++i) transposed[j * n + i] = cost.at(i, j);
    map.core = min_cost_row_assignment(transposed, m, n);

    map.xi.assign(n, 0);
    std::vector<bool> in_core(n, false);
    for (std::size_t j = 0; j < m; ++j) {
        map.xi[map.core[j]] = j;
        in_core[map.core[j]] = true;
    }

    if (policy == SurplusPolicy::cheapest_ground_truth) {
        for (std::size_t i = 0; i < n; ++i) {
            if (in_core[i]) continue;
            std::size_t best = 0;
            for (std::size_t j = 1; j < m; ++j) {
                if (cost.at(i, j) < cost.at(i, best)) best = j;
            }
            map.xi[i] = best;
        }
        return map;
    }

    // pad_repeat: surplus predictions match against repeated ground-truth
    // columns in a square assignment; the core above stays authoritative.
    std::vector<std::size_t> surplus;
    for (std::size_t i = 0; i < n; ++i) {
        if (!in_core[i]) surplus.push_back(i);
    }
    if (surplus.empty()) return map;
    const std::size_t s = surplus.size();
    std::vector<double> padded(s * s, 0.0);
    for (std::size_t r = 0; r < s; ++r)
        for (std::size_t cidx = 0; cidx < s; ++cidx)
            padded[r * s + cidx] = cost.at(surplus[r], cidx % m);
    const std::vector<std::size_t> assigned = min_cost_row_assignment(padded, s, s);
    for (std::size_t r = 0; r < s; ++r) map.xi[surplus[r]] = assigned[r] % m;
    return map;
}

}  // namespace diffrte
