#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffrte/config.hpp"
#include "diffrte/data.hpp"
#include "diffrte/diffusion.hpp"
#include "diffrte/network.hpp"

namespace diffrte {

struct InferOptions {
    std::uint64_t seed = 42;
    int threads = 1;
    int batch = 8;
    bool strict_length = false;  // error instead of truncating long sentences
    PhiScoreMode phi_mode = PhiScoreMode::head_maxima;
    // Collapse mode for intermediate steps; the final step always uses argmax.
    ReconstructMode mid_mode = ReconstructMode::expectation;
};

struct SentencePrediction {
    std::size_t sentence_id = 0;
    TripleSet triples;
    int kept_blocks = 0;
    int discarded_blocks = 0;
};

// Reverse diffusion for one sentence: D Gaussian blocks refined through the
// sigma-step plan, confidence-filtered, then decoded and deduplicated.
SentencePrediction infer_sentence(const Model& model, const std::vector<int>& token_ids,
                                  const NoiseSchedule& schedule, const SamplingPlan& plan,
                                  Rng& rng, PhiScoreMode phi_mode = PhiScoreMode::head_maxima,
                                  ReconstructMode mid_mode = ReconstructMode::expectation);

struct TimingReport {
    std::size_t sentences = 0;
    double batch1_ms_per_sentence = 0.0;
    double batched_ms_per_sentence = 0.0;
    int batch = 8;
    double total_ms = 0.0;

    std::string serialize() const;
};

struct CorpusInference {
    std::vector<SentencePrediction> predictions;
    TimingReport timing;
};

// Per-sentence RNG streams derived from the seed keep results identical
// under any worker count.
CorpusInference infer_corpus(const Model& model, const Corpus& corpus,
                             const NoiseSchedule& schedule, const SamplingPlan& plan,
                             const InferOptions& options);

// Line-delimited prediction records.
void write_predictions(const std::vector<SentencePrediction>& preds, const std::string& path);
std::vector<SentencePrediction> load_predictions(const std::string& path);

// Aligns a prediction file with a gold corpus (missing ids become empty sets).
std::vector<TripleSet> predictions_to_triples(const std::vector<SentencePrediction>& preds,
                                              std::size_t corpus_size);

struct AblationCell {
    int denoise_blocks = 0;  // D
    int sample_steps = 0;    // sigma
    double f1 = 0.0;
    double ms_per_sentence = 0.0;
};

// F1 / latency sweep over D and sigma grids; rows ordered by (sigma, D).
std::vector<AblationCell> ablate(const Model& model, const Corpus& corpus,
                                 const NoiseSchedule& schedule, const std::vector<int>& d_grid,
                                 const std::vector<int>& sigma_grid, double phi,
                                 const InferOptions& options);

std::string ablation_csv(const std::vector<AblationCell>& cells);

// Truncates (or rejects, in strict mode) sentences longer than the model's
// max_len before inference.
std::vector<int> clamp_sentence(const std::vector<int>& ids, int max_len, bool strict,
                                std::size_t sentence_id);

}  // namespace diffrte
