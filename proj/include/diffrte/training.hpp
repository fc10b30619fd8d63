#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffrte/assignment.hpp"
#include "diffrte/config.hpp"
#include "diffrte/data.hpp"
#include "diffrte/diffusion.hpp"
#include "diffrte/network.hpp"

namespace diffrte {

// Eq.-style weighted negative log-likelihood of the assigned targets, built
// on the live graph so it is differentiable.
ad::Var assignment_loss(const ForwardResult& probs, const std::vector<DiscreteBlock>& gt,
                        const AssignmentMap& xi, const LossWeights& betas);

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
public:
    AdamW(const std::vector<ad::Var>& params, double beta1, double beta2, double weight_decay,
          double eps = 1e-8);

    // Applies one update from the accumulated gradients; returns the global
    // gradient norm before clipping.
    double step(double lr, double clip);

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    double beta1_, beta2_, weight_decay_, eps_;
    long t_ = 0;
};

// Warm-up then linear decay to zero. `step` is 0-based.
double lr_at_step(double base_lr, long step, long total_steps, double warmup_ratio);

struct StepMetrics {
    long step = 0;
    int epoch = 0;
    double loss = 0.0;
    double edge_nll = 0.0;
    double level_nll = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
    bool aborted = false;  // non-finite loss, update skipped
};

struct TrainResult {
    Model model;
    std::vector<StepMetrics> metrics;
    std::uint64_t steps = 0;
    std::array<std::uint64_t, 4> rng_state{};
};

// One optimizer step over a batch of sentence indices: noise the expanded
// blocks at a random timestep, run the network, assign targets, backpropagate
// the weighted NLL, clip and update.
StepMetrics train_step(Model& model, AdamW& optimizer, const Corpus& corpus,
                       const std::vector<std::size_t>& batch_indices,
                       const NoiseSchedule& schedule, const RunConfig& config, Rng& rng,
                       long step_index, long total_steps);

using CheckpointHook = std::function<void(const Model&, int epoch, long step,
                                          const std::array<std::uint64_t, 4>& rng_state)>;
using MetricsHook = std::function<void(const StepMetrics&)>;

// Full training loop: shuffled epochs, periodic checkpoint hook, per-step
// metrics hook. Deterministic for a fixed config.seed.
TrainResult train(const Corpus& corpus, const RunConfig& config,
                  const MetricsHook& on_metrics = nullptr,
                  const CheckpointHook& on_checkpoint = nullptr);

// Line-delimited metrics record in a stable field order.
std::string metrics_to_json(const StepMetrics& m, bool log_timing);

}  // namespace diffrte
