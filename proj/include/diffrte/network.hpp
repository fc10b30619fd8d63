#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "diffrte/autodiff.hpp"
#include "diffrte/blocks.hpp"
#include "diffrte/diffusion.hpp"
#include "diffrte/tensor.hpp"

namespace diffrte {

enum class LevelPoolAxis { over_heads, over_hidden };

struct ModelConfig {
    int vocab_size = 2;      // includes PAD=0 and UNK=1
    int relation_count = 1;  // K
    int max_len = 64;        // L_max
    int d_model = 64;        // d, must be even (bidirectional halves)
    int d_embed = 64;        // token/positional embedding width
    int k_attn = 64;         // co-attention hidden width k
    int h_hidden = 64;       // biaffine / cross-attention width h
    double lambda = 1.0;
    double dropout = 0.0;
    bool soft_level_lookup = false;
    LevelPoolAxis level_pool = LevelPoolAxis::over_heads;

    void validate() const;
    std::size_t level_key_width() const {
        return level_pool == LevelPoolAxis::over_heads ? static_cast<std::size_t>(h_hidden) : 4u;
    }
};

struct RecurrentParams {
    ad::Var w_x_fwd, w_h_fwd, b_fwd;
    ad::Var w_x_bwd, w_h_bwd, b_bwd;
};

// One co-attention branch: affinity, fusion and timestep projection weights.
struct BranchParams {
    ad::Var w_b;     // d x d
    ad::Var w_e;     // k x d
    ad::Var w_h;     // k x d
    ad::Var w_s;     // 1 x k, scores the fused hidden state
    ad::Var time_w;  // d x d projection of the sinusoidal embedding
    ad::Var time_b;  // 1 x d
};

struct BiaffineParams {
    ad::Var u1;      // d x (h * d) bilinear tensor, laid out [p][q*d + r]
    ad::Var u2;      // 2d x h, top half acts on R_H, bottom half on the fused block
    ad::Var b;       // 1 x h
    ad::Var mlp_w1;  // h x h
    ad::Var mlp_b1;  // 1 x h
    ad::Var mlp_w2;  // h x 1
    ad::Var mlp_b2;  // 1 x 1
};

struct LevelHeadParams {
    ad::Var w_q;     // d x h
    ad::Var w_k;     // key_width x h
    ad::Var w_v;     // key_width x h
    ad::Var mlp_w1;  // h x h
    ad::Var mlp_b1;  // 1 x h
    ad::Var mlp_w2;  // h x K
    ad::Var mlp_b2;  // 1 x K
};

// All learnable arrays. Vars are shared handles: the optimizer mutates the
// same storage the graphs read.
struct Model {
    ModelConfig config;
    ad::Var tok_emb;  // V x d_emb
    ad::Var pos_emb;  // L_max x d_emb
    RecurrentParams rnn;
    ad::Var rel_emb;  // K x d
    BranchParams edge_branch;
    BranchParams level_branch;
    std::array<BiaffineParams, 4> biaffine;  // up, down, left, right
    LevelHeadParams level_head;

    static Model init(const ModelConfig& config, Rng& rng);

    std::vector<std::pair<std::string, ad::Var>> named_params() const;
    std::vector<ad::Var> params() const;
    void zero_grad() const;
    std::size_t parameter_count() const;
};

// Train-time context for the single configured dropout rate.
struct DropoutCtx {
    double rate = 0.0;
    Rng* rng = nullptr;
};

// Embedding + positional lookup followed by a bidirectional recurrent layer.
// Returns R_H with one row per token.
ad::Var encode_sentence(const Model& model, const std::vector<int>& token_ids,
                        const DropoutCtx& dropout = {});

// Mean-pools R_H rows over the union of each block's head and tail spans.
ad::Var edge_repr(const ad::Var& sentence_repr, const std::vector<Block>& noised,
                  const ScaleSpec& scale);

// Looks up (or interpolates) relation-matrix rows from each block's level.
ad::Var level_repr(const Model& model, const std::vector<Block>& noised, const ScaleSpec& scale);

// Sinusoidal timestep features (interleaved sine/cosine, base 1e4), width d.
Tensor timestep_features(int timestep, std::size_t width);

// Parallel co-attention fusion of the sentence with edge or level features,
// plus the projected timestep embedding. Output is N x d.
ad::Var co_attention(const ad::Var& sentence_repr, const ad::Var& block_repr,
                     const BranchParams& branch, int timestep);

struct EdgeScores {
    std::array<ad::Var, 4> probs;   // each N x L, row-stochastic
    std::array<ad::Var, 4> hidden;  // each (N*L) x h pre-MLP biaffine features
};

EdgeScores biaffine_edges(const Model& model, const ad::Var& sentence_repr,
                          const ad::Var& fused_edges);

ad::Var level_scores(const Model& model, const EdgeScores& edges, const ad::Var& fused_levels,
                     std::size_t block_count, std::size_t sentence_len);

struct ForwardResult {
    ad::Var up, down, left, right;  // N x L (padded to pad_to when requested)
    ad::Var level;                  // N x K

    BlockProbabilities values() const;
};

// Full network: encoder -> representations -> two co-attention branches ->
// biaffine edge heads -> cross-attention level head.
ForwardResult forward(const Model& model, const std::vector<int>& token_ids,
                      const std::vector<Block>& noised, int timestep,
                      const DropoutCtx& dropout = {}, std::size_t pad_to = 0);

}  // namespace diffrte
