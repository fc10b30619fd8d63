#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "diffrte/assignment.hpp"
#include "diffrte/diffusion.hpp"
#include "diffrte/network.hpp"

namespace diffrte {

// Flat key = value text. '#' starts a comment; keys are single tokens.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_key_values(const std::string& path);

// One configuration for the whole pipeline (model, diffusion, training,
// inference), round-trippable through the flat text format.
struct RunConfig {
    // model
    int d_model = 64;
    int d_embed = 64;
    int k_attn = 64;
    int h_hidden = 64;
    int max_len = 64;
    double lambda = 1.0;
    double dropout = 0.0;
    bool soft_level_lookup = false;
    std::string level_pool = "heads";  // heads | hidden
    // diffusion
    int timesteps = 1000;  // T
    std::string schedule = "linear";  // linear | cosine
    double beta_start = 1e-4;
    double beta_end = 0.02;
    // training
    int expansion = 30;  // N, training block count
    double loss_beta1 = 1.0;
    double loss_beta2 = 1.0;
    double loss_beta3 = 1.0;
    double lr = 1e-3;
    double warmup_ratio = 0.1;
    double grad_clip = 1.5;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int epochs = 150;
    int batch = 8;
    std::uint64_t seed = 42;
    int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
    bool log_timing = false;   // adds wall-clock seconds to metrics records
    std::string surplus = "cheapest";  // cheapest | pad_repeat
    // inference
    int denoise_blocks = 30;  // D
    int sample_steps = 10;    // sigma
    double phi = 4.0;
    std::string phi_mode = "maxima";  // maxima | at_index
    std::string reconstruct_mid = "expectation";  // expectation | argmax (intermediate steps)

    static RunConfig from_key_values(const std::map<std::string, std::string>& kv);
    static RunConfig from_file(const std::string& path);
    // Exhaustive echo in a stable key order.
    std::string echo() const;

    ModelConfig model_config(int vocab_size, int relation_count) const;
    ScheduleKind schedule_kind() const;
    LossWeights loss_weights() const;
    SurplusPolicy surplus_policy() const;
    PhiScoreMode phi_score_mode() const;
    ReconstructMode reconstruct_mid_mode() const;
    void validate() const;
};

}  // namespace diffrte
