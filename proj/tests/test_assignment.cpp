#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "diffrte/assignment.hpp"
#include "diffrte/tensor.hpp"

using namespace diffrte;

namespace {

CostMatrix make_cost(std::size_t n, std::size_t m, const std::vector<double>& values) {
    CostMatrix c;
    c.predictions = n;
    c.ground_truths = m;
    c.cost = values;
    return c;
}

CostMatrix random_cost(std::size_t n, std::size_t m, Rng& rng) {
    CostMatrix c;
    c.predictions = n;
    c.ground_truths = m;
    c.cost.resize(n * m);
    for (double& v : c.cost) v = rng.uniform(0.0, 1.0);
    return c;
}

// Exhaustive minimum over all injections from ground truths into predictions.
double brute_force_min(const CostMatrix& c) {
    const std::size_t n = c.predictions, m = c.ground_truths;
    double best = std::numeric_limits<double>::infinity();
    std::vector<bool> used(n, false);
    std::function<void(std::size_t, double)> rec = [&](std::size_t j, double acc) {
        if (acc >= best) return;
        if (j == m) {
            best = acc;
            return;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            used[i] = true;
            rec(j + 1, acc + c.at(i, j));
            used[i] = false;
        }
    };
    rec(0, 0.0);
    return best;
}

}  // namespace

TEST_CASE("build_cost on one-hot and zero-weight cases") {
    BlockProbabilities p;
    p.up = Tensor::zeros(2, 4);
    p.down = Tensor::zeros(2, 4);
    p.left = Tensor::zeros(2, 4);
    p.right = Tensor::zeros(2, 4);
    p.level = Tensor::zeros(2, 3);
    // prediction 0 is exactly one-hot on gt 0's coordinates
    p.up.at(0, 1) = 1.0;
    p.down.at(0, 2) = 1.0;
    p.left.at(0, 3) = 1.0;
    p.right.at(0, 3) = 1.0;
    p.level.at(0, 2) = 1.0;
    // prediction 1 is uniform
    for (std::size_t j = 0; j < 4; ++j) {
        p.up.at(1, j) = 0.25;
        p.down.at(1, j) = 0.25;
        p.left.at(1, j) = 0.25;
        p.right.at(1, j) = 0.25;
    }
    for (std::size_t j = 0; j < 3; ++j) p.level.at(1, j) = 1.0 / 3.0;
    const std::vector<DiscreteBlock> gt = {{1, 2, 3, 3, 2}};

    const CostMatrix perfect = build_cost(p, gt, LossWeights{1, 1, 1});
    CHECK(perfect.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    // hand evaluation: 4 * -log(0.25) + -log(1/3)
    CHECK(perfect.at(1, 0) ==
          doctest::Approx(4.0 * std::log(4.0) + std::log(3.0)).epsilon(1e-12));

    const CostMatrix annihilated = build_cost(p, gt, LossWeights{0, 0, 0});
    CHECK(annihilated.at(0, 0) == 0.0);
    CHECK(annihilated.at(1, 0) == 0.0);

    // zero probabilities floor rather than produce infinities
    const std::vector<DiscreteBlock> gt_zero = {{0, 0, 0, 0, 0}};
    const CostMatrix floored = build_cost(p, gt_zero, LossWeights{1, 1, 1});
    CHECK(std::isfinite(floored.at(0, 0)));
    CHECK(floored.at(0, 0) > 0.0);
}

TEST_CASE("2x2 hand-computed cost entries") {
    BlockProbabilities p;
    p.up = Tensor({2, 2}, {0.9, 0.1, 0.3, 0.7});
    p.down = Tensor({2, 2}, {0.8, 0.2, 0.4, 0.6});
    p.left = Tensor({2, 2}, {0.6, 0.4, 0.5, 0.5});
    p.right = Tensor({2, 2}, {0.7, 0.3, 0.2, 0.8});
    p.level = Tensor({2, 2}, {0.55, 0.45, 0.35, 0.65});
    const std::vector<DiscreteBlock> gt = {{0, 0, 0, 0, 0}, {1, 1, 1, 1, 1}};
    const LossWeights betas{2.0, 0.5, 1.5};
    const CostMatrix c = build_cost(p, gt, betas);
    auto expected = [&](std::size_t i, std::size_t j) {
        const DiscreteBlock& g = gt[j];
        return 2.0 * (-std::log(p.up.at(i, g.up)) - std::log(p.down.at(i, g.down))) +
               0.5 * (-std::log(p.left.at(i, g.left)) - std::log(p.right.at(i, g.right))) +
               1.5 * (-std::log(p.level.at(i, g.level)));
    };
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(c.at(i, j) == doctest::Approx(expected(i, j)).epsilon(1e-12));
}

TEST_CASE("single ground truth: all predictions share it and the core is the cheapest row") {
    const CostMatrix c = make_cost(3, 1, {0.7, 0.2, 0.9});
    const AssignmentMap map = optimal_assign(c);
    CHECK(map.xi == std::vector<std::size_t>{0, 0, 0});
    REQUIRE(map.core.size() == 1);
    CHECK(map.core[0] == 1);
}

TEST_CASE("diagonal-dominant square case forces the identity") {
    const CostMatrix c = make_cost(3, 3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
    const AssignmentMap map = optimal_assign(c);
    CHECK(map.core == std::vector<std::size_t>{0, 1, 2});
    CHECK(map.xi == std::vector<std::size_t>{0, 1, 2});
    CHECK(map.core_cost(c) == 0.0);
}

TEST_CASE("surplus predictions pick their cheapest ground truth with low-index ties") {
    const CostMatrix c = make_cost(4, 2,
                                   {0.0, 1.0,    // core for gt 0
                                    1.0, 0.0,    // core for gt 1
                                    0.5, 0.5,    // tie: lowest index wins
                                    0.9, 0.1});  // prefers gt 1
    const AssignmentMap map = optimal_assign(c);
    CHECK(map.core == std::vector<std::size_t>{0, 1});
    CHECK(map.xi[2] == 0);
    CHECK(map.xi[3] == 1);
}

TEST_CASE("pad_repeat policy still covers every ground truth and keeps the optimal core") {
    Rng rng(17);
    const CostMatrix c = random_cost(6, 2, rng);
    const AssignmentMap a = optimal_assign(c, SurplusPolicy::cheapest_ground_truth);
    const AssignmentMap b = optimal_assign(c, SurplusPolicy::pad_repeat);
    CHECK(a.core == b.core);
    std::vector<bool> covered(2, false);
    for (std::size_t g : b.xi) covered[g] = true;
    CHECK(covered == std::vector<bool>(2, true));
}

TEST_CASE("requires at least as many predictions as ground truths") {
    const CostMatrix c = make_cost(1, 2, {0.1, 0.2});
    CHECK_THROWS_AS(optimal_assign(c), ValidationError);
}

TEST_CASE("matched core equals the exhaustive minimum over 1000 random instances") {
    Rng rng(2024);
    for (int iter = 0; iter < 1000; ++iter) {
        const std::size_t n = 1 + rng.uniform_index(7);
        const std::size_t m = 1 + rng.uniform_index(n);
        const CostMatrix c = random_cost(n, m, rng);
        const AssignmentMap map = optimal_assign(c);
        // all core entries distinct
        std::vector<bool> used(n, false);
        for (std::size_t i : map.core) {
            REQUIRE_FALSE(used[i]);
            used[i] = true;
        }
        REQUIRE(map.core_cost(c) == doctest::Approx(brute_force_min(c)).epsilon(1e-9));
        // xi covers every ground truth
        std::vector<bool> covered(m, false);
        for (std::size_t g : map.xi) covered[g] = true;
        for (bool cv : covered) REQUIRE(cv);
    }
}

TEST_CASE("scaling costs by a positive constant preserves the chosen core") {
    Rng rng(5);
    const CostMatrix c = random_cost(5, 3, rng);
    CostMatrix scaled = c;
    for (double& v : scaled.cost) v *= 7.5;
    const AssignmentMap a = optimal_assign(c);
    const AssignmentMap b = optimal_assign(scaled);
    CHECK(a.core == b.core);
    CHECK(a.xi == b.xi);
}
