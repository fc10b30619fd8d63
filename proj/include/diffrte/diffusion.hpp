#pragma once

#include <cstddef>
#include <vector>

#include "diffrte/blocks.hpp"
#include "diffrte/tensor.hpp"

namespace diffrte {

enum class ScheduleKind { linear, cosine };

// Precomputed variance schedule. Arrays are indexed by t-1 for t in [1, T];
// alpha_bar(0) is defined as 1 so the final reverse step emits z0 directly.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double alpha_bar_at(int t) const;  // t in [0, T]
    void validate() const;
};

NoiseSchedule build_schedule(int T, ScheduleKind kind, double beta_start, double beta_end);

// Reverse-plan parameters: sigma steps over an arithmetic timestep sequence
// ending at T, D denoising blocks, phi confidence threshold.
struct SamplingPlan {
    int sigma = 10;
    std::vector<int> tau;  // strictly increasing, tau.back() == T
    int denoise_blocks = 30;  // D
    double phi = 4.0;

    static SamplingPlan make(int T, int sigma, int denoise_blocks, double phi);
    void validate(int T) const;
};

// Per-block categorical heads: four edge distributions over L positions and
// one level distribution over K relations. Rows are stochastic.
struct BlockProbabilities {
    Tensor up;     // N x L
    Tensor down;   // N x L
    Tensor left;   // N x L
    Tensor right;  // N x L
    Tensor level;  // N x K

    std::size_t block_count() const { return up.rows(); }
};

// Closed-form forward corruption: z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps.
std::vector<Block> forward_noise(const std::vector<Block>& z0, int t,
                                 const NoiseSchedule& schedule, Rng& rng);

struct ExpandedBlocks {
    std::vector<Block> z0;             // N rows, shuffled
    std::vector<std::size_t> permutation;  // z0[i] came from unshuffled row permutation[i]
    std::size_t ground_truth_count = 0;    // M
};

// Pads M ground-truth blocks with N-M standard-normal rows, then shuffles
// with a recorded permutation.
ExpandedBlocks expand_blocks(const std::vector<Block>& gt_blocks, std::size_t n, Rng& rng);

// Deterministic reverse update from t_cur to t_prev (t_prev == 0 emits z0_hat).
std::vector<Block> ddim_step(const std::vector<Block>& z_cur, const std::vector<Block>& z0_hat,
                             int t_cur, int t_prev, const NoiseSchedule& schedule);

enum class ReconstructMode { expectation, argmax };

// Collapses the categorical heads back to continuous coordinates.
std::vector<Block> reconstruct_z0(const BlockProbabilities& probs, const ScaleSpec& scale,
                                  ReconstructMode mode);

enum class PhiScoreMode { head_maxima, at_reconstructed };

// Per-block confidence: sum of the five per-head maxima (default), or the sum
// of the probabilities at the reconstructed indices.
std::vector<double> block_scores(const BlockProbabilities& probs, const ScaleSpec& scale,
                                 PhiScoreMode mode = PhiScoreMode::head_maxima);

// keep[i] iff score[i] >= phi.
std::vector<bool> filter_blocks(const BlockProbabilities& probs, double phi,
                                const ScaleSpec& scale,
                                PhiScoreMode mode = PhiScoreMode::head_maxima);

}  // namespace diffrte
