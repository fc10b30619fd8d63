#include <doctest.h>

#include <cmath>
#include <numeric>

#include "diffrte/diffusion.hpp"

using namespace diffrte;

TEST_CASE("single-step schedule") {
    const NoiseSchedule s = build_schedule(1, ScheduleKind::linear, 0.5, 0.5);
    REQUIRE(s.T == 1);
    CHECK(s.alpha_bar[0] == 0.5);
    CHECK(s.alpha_bar_at(0) == 1.0);
}

TEST_CASE("linear schedule endpoints and monotonicity") {
    const NoiseSchedule s = build_schedule(1000, ScheduleKind::linear, 1e-4, 0.02);
    CHECK(s.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-12));
    for (int i = 1; i < s.T; ++i) CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
    // frozen value from a 60-digit product of (1 - beta_t)
    CHECK(s.alpha_bar[999] == doctest::Approx(4.0358297653756835e-05).epsilon(1e-10));
    // independent compensated product at long-double precision
    long double prod = 1.0L;
    for (int i = 0; i < 1000; ++i) {
        const long double beta = 1e-4L + (0.02L - 1e-4L) * i / 999.0L;
        prod *= (1.0L - beta);
    }
    CHECK(s.alpha_bar[999] == doctest::Approx(static_cast<double>(prod)).epsilon(1e-12));
}

TEST_CASE("cosine schedule satisfies the invariants") {
    const NoiseSchedule s = build_schedule(500, ScheduleKind::cosine, 0, 0);
    s.validate();
    CHECK(s.alpha_bar[0] > 0.99);
    CHECK(s.alpha_bar[499] < 0.01);
}

TEST_CASE("build_schedule rejects invalid ranges") {
    CHECK_THROWS_AS(build_schedule(10, ScheduleKind::linear, 0.0, 0.02), ValidationError);
    CHECK_THROWS_AS(build_schedule(10, ScheduleKind::linear, 0.5, 0.2), ValidationError);
    CHECK_THROWS_AS(build_schedule(0, ScheduleKind::linear, 1e-4, 0.02), ValidationError);
}

TEST_CASE("alpha_bar equals running product within 1e-12") {
    const NoiseSchedule s = build_schedule(200, ScheduleKind::linear, 1e-3, 0.05);
    double running = 1.0;
    for (int i = 0; i < s.T; ++i) {
        running *= 1.0 - s.beta[i];
        CHECK(std::abs(s.alpha_bar[i] - running) < 1e-12);
    }
}

TEST_CASE("forward noise limits") {
    NoiseSchedule synthetic;
    synthetic.T = 2;
    synthetic.beta = {1e-9, 0.5};
    synthetic.alpha = {1.0 - 1e-9, 0.5};
    synthetic.alpha_bar = {1.0 - 1e-9, (1.0 - 1e-9) * 0.5};
    const std::vector<Block> z0 = {Block{0.3, -0.4, 0.9, -1.0, 0.1}};
    Rng rng(5);
    // alpha_bar ~= 1: output ~= z0
    const auto near_clean = forward_noise(z0, 1, synthetic, rng);
    for (int j = 0; j < 5; ++j) {
        CHECK(near_clean[0].coords()[j] == doctest::Approx(z0[0].coords()[j]).epsilon(1e-3));
    }
    // alpha_bar ~= 0: output ~= pure standard normal draw
    NoiseSchedule mostly_noise;
    mostly_noise.T = 1;
    mostly_noise.beta = {1.0 - 1e-12};
    mostly_noise.alpha = {1e-12};
    mostly_noise.alpha_bar = {1e-12};
    Rng rng_a(17), rng_b(17);
    const auto noised = forward_noise(z0, 1, mostly_noise, rng_a);
    std::array<double, 5> eps{};
    for (double& v : eps) v = rng_b.normal();
    for (int j = 0; j < 5; ++j) {
        CHECK(noised[0].coords()[j] == doctest::Approx(eps[j]).epsilon(1e-4));
    }
    CHECK_THROWS_AS(forward_noise(z0, 3, synthetic, rng), ValidationError);
}

TEST_CASE("forward noise Monte Carlo moments match the closed form") {
    const NoiseSchedule s = build_schedule(1000, ScheduleKind::linear, 1e-4, 0.02);
    const int t = 250;
    const double z0_coord = 1.7;
    const std::vector<Block> z0 = {Block{z0_coord, z0_coord, z0_coord, z0_coord, z0_coord}};
    Rng rng(4242);
    const int draws = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < draws; ++i) {
        const auto zt = forward_noise(z0, t, s, rng);
        for (double v : zt[0].coords()) {
            sum += v;
            sq += v * v;
        }
    }
    const double n = draws * 5.0;
    const double mean = sum / n;
    const double stddev = std::sqrt(sq / n - mean * mean);
    const double ab = s.alpha_bar_at(t);
    CHECK(mean == doctest::Approx(std::sqrt(ab) * z0_coord).epsilon(0.01));
    CHECK(stddev == doctest::Approx(std::sqrt(1.0 - ab)).epsilon(0.01));
}

TEST_CASE("expand_blocks pads, shuffles and records the permutation") {
    Rng rng(7);
    const std::vector<Block> gt = {Block{0.1, 0.2, 0.3, 0.4, 0.5}, Block{-0.1, -0.2, -0.3, -0.4, -0.5},
                                   Block{1, 1, 1, 1, 1}};
    const ExpandedBlocks e = expand_blocks(gt, 30, rng);
    REQUIRE(e.z0.size() == 30);
    CHECK(e.ground_truth_count == 3);
    // permutation inverts: row i of z0 came from unshuffled row permutation[i]
    std::vector<Block> unshuffled(30);
    for (std::size_t i = 0; i < 30; ++i) unshuffled[e.permutation[i]] = e.z0[i];
    for (std::size_t j = 0; j < 3; ++j) {
        for (int c = 0; c < 5; ++c) {
            CHECK(unshuffled[j].coords()[c] == gt[j].coords()[c]);
        }
    }
    // permutation is a bijection
    std::vector<bool> seen(30, false);
    for (std::size_t p : e.permutation) {
        CHECK_FALSE(seen[p]);
        seen[p] = true;
    }
}

TEST_CASE("expand_blocks edge cases") {
    Rng rng(9);
    const std::vector<Block> gt = {Block{0.5, 0.5, 0.5, 0.5, 0.5}};
    const ExpandedBlocks same = expand_blocks(gt, 1, rng);
    CHECK(same.z0.size() == 1);
    CHECK(same.z0[0].coords() == gt[0].coords());

    const ExpandedBlocks empty = expand_blocks({}, 5, rng);
    CHECK(empty.z0.size() == 5);
    CHECK(empty.ground_truth_count == 0);

    CHECK_THROWS_AS(expand_blocks(std::vector<Block>(3), 2, rng), ValidationError);
}

TEST_CASE("ddim_step terminal and fixed-point behavior") {
    const NoiseSchedule s = build_schedule(100, ScheduleKind::linear, 1e-3, 0.05);
    const std::vector<Block> z0_hat = {Block{0.2, -0.6, 0.9, 0.0, -0.3}};
    const std::vector<Block> z_cur = {Block{1.4, 0.3, -2.0, 0.4, 0.8}};
    // t_prev = 0 has alpha_bar 1: the step emits z0_hat exactly
    const auto final_step = ddim_step(z_cur, z0_hat, 10, 0, s);
    for (int c = 0; c < 5; ++c) {
        CHECK(final_step[0].coords()[c] == doctest::Approx(z0_hat[0].coords()[c]).epsilon(1e-15));
    }
    // z0_hat = 0 and equal alpha_bars leave the state unchanged
    NoiseSchedule flat;
    flat.T = 2;
    flat.beta = {0.3, 1e-15};
    flat.alpha = {0.7, 1.0 - 1e-15};
    flat.alpha_bar = {0.7, 0.7 * (1.0 - 1e-15)};
    const std::vector<Block> zero_hat = {Block{}};
    const auto fixed = ddim_step(z_cur, zero_hat, 2, 1, flat);
    for (int c = 0; c < 5; ++c) {
        CHECK(fixed[0].coords()[c] == doctest::Approx(z_cur[0].coords()[c]).epsilon(1e-7));
    }
    CHECK_THROWS_AS(ddim_step(z_cur, z0_hat, 5, 5, s), ValidationError);
}

TEST_CASE("oracle denoiser telescopes to z0 for any plan") {
    const NoiseSchedule s = build_schedule(1000, ScheduleKind::linear, 1e-4, 0.02);
    Rng rng(55);
    for (const int sigma : {5, 10, 15}) {
        const SamplingPlan plan = SamplingPlan::make(s.T, sigma, 4, 4.0);
        std::vector<Block> z0(4), z(4);
        for (auto& b : z0) {
            std::array<double, 5> c{};
            for (double& v : c) v = rng.uniform(-1, 1);
            b = Block::from_coords(c);
        }
        for (auto& b : z) {
            std::array<double, 5> c{};
            for (double& v : c) v = rng.normal();
            b = Block::from_coords(c);
        }
        for (int idx = sigma - 1; idx >= 0; --idx) {
            const int t_cur = plan.tau[static_cast<std::size_t>(idx)];
            const int t_prev = idx > 0 ? plan.tau[static_cast<std::size_t>(idx) - 1] : 0;
            z = ddim_step(z, z0, t_cur, t_prev, s);
        }
        for (std::size_t i = 0; i < z.size(); ++i) {
            for (int c = 0; c < 5; ++c) {
                CHECK(std::abs(z[i].coords()[c] - z0[i].coords()[c]) < 1e-9);
            }
        }
    }
}

TEST_CASE("sampling plan is arithmetic, increasing and ends at T") {
    for (const int sigma : {1, 5, 10, 15, 100}) {
        const SamplingPlan p = SamplingPlan::make(1000, sigma, 30, 4.0);
        CHECK(p.tau.back() == 1000);
        CHECK(static_cast<int>(p.tau.size()) == sigma);
        for (std::size_t i = 1; i < p.tau.size(); ++i) {
            CHECK(p.tau[i] - p.tau[i - 1] == p.tau[1] - p.tau[0]);
            CHECK(p.tau[i] > p.tau[i - 1]);
        }
        CHECK(p.tau.front() >= 1);
    }
    CHECK_THROWS_AS(SamplingPlan::make(10, 11, 30, 4.0), ValidationError);
}

namespace {

BlockProbabilities uniform_probs(std::size_t n, std::size_t L, std::size_t K) {
    BlockProbabilities p;
    p.up = Tensor::full(n, L, 1.0 / static_cast<double>(L));
    p.down = p.up;
    p.left = p.up;
    p.right = p.up;
    p.level = Tensor::full(n, K, 1.0 / static_cast<double>(K));
    return p;
}

BlockProbabilities one_hot_probs(std::size_t n, std::size_t L, std::size_t K, std::size_t edge_idx,
                                 std::size_t level_idx) {
    BlockProbabilities p;
    p.up = Tensor::zeros(n, L);
    p.level = Tensor::zeros(n, K);
    for (std::size_t i = 0; i < n; ++i) {
        p.up.at(i, edge_idx) = 1.0;
        p.level.at(i, level_idx) = 1.0;
    }
    p.down = p.up;
    p.left = p.up;
    p.right = p.up;
    return p;
}

}  // namespace

TEST_CASE("reconstruct_z0 modes") {
    const ScaleSpec scale{1.0, 10, 4};
    // one-hot: both modes agree on the scaled index
    const auto hot = one_hot_probs(2, 10, 4, 7, 2);
    const auto exp_mode = reconstruct_z0(hot, scale, ReconstructMode::expectation);
    const auto arg_mode = reconstruct_z0(hot, scale, ReconstructMode::argmax);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(exp_mode[i].up == doctest::Approx(scale.to_scaled(7, 10)).epsilon(1e-12));
        CHECK(arg_mode[i].up == exp_mode[i].up);
        CHECK(exp_mode[i].level == doctest::Approx(scale.to_scaled(2, 4)).epsilon(1e-12));
    }
    // uniform: expectation lands at the symmetric midpoint
    const auto uni = reconstruct_z0(uniform_probs(1, 10, 4), scale, ReconstructMode::expectation);
    CHECK(uni[0].up == doctest::Approx(0.0).epsilon(1e-12));
    // two-point distribution over L=2
    BlockProbabilities two;
    two.up = Tensor({1, 2}, {0.25, 0.75});
    two.down = two.up;
    two.left = two.up;
    two.right = two.up;
    two.level = Tensor({1, 1}, {1.0});
    const ScaleSpec s2{1.0, 2, 1};
    const auto r = reconstruct_z0(two, s2, ReconstructMode::expectation);
    CHECK(r[0].up == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("filter_blocks thresholds the summed head maxima") {
    const ScaleSpec scale{1.0, 10, 4};
    const auto hot = one_hot_probs(1, 10, 4, 3, 1);
    CHECK(filter_blocks(hot, 4.0, scale) == std::vector<bool>{true});  // score 5 >= 4
    const auto uni = uniform_probs(1, 10, 10);
    CHECK(filter_blocks(uni, 4.0, scale) == std::vector<bool>{false});  // score 0.5
    CHECK(filter_blocks(uni, 0.0, scale) == std::vector<bool>{true});   // phi 0 keeps all
}

TEST_CASE("filter_blocks is monotone in phi") {
    Rng rng(3);
    BlockProbabilities p;
    auto random_rows = [&](std::size_t n, std::size_t m) {
        Tensor t({n, m});
        for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (double v : t.row_span(i)) sum += v;
            for (double& v : t.row_span(i)) v /= sum;
        }
        return t;
    };
    p.up = random_rows(8, 6);
    p.down = random_rows(8, 6);
    p.left = random_rows(8, 6);
    p.right = random_rows(8, 6);
    p.level = random_rows(8, 3);
    const ScaleSpec scale{1.0, 6, 3};
    std::vector<bool> prev(8, true);
    for (double phi = 0.0; phi <= 5.0; phi += 0.25) {
        const auto keep = filter_blocks(p, phi, scale);
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (keep[i]) CHECK(prev[i]);  // raising phi never re-keeps a block
        }
        prev = keep;
    }
    // the at-index scoring mode stays within [0, 5] and is also monotone
    const auto strict0 = filter_blocks(p, 0.0, scale, PhiScoreMode::at_reconstructed);
    CHECK(strict0 == std::vector<bool>(8, true));
}
