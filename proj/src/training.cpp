#include "diffrte/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

namespace diffrte {

namespace {

constexpr double kProbFloor = 1e-12;

struct TargetIndices {
    std::vector<std::size_t> up, down, left, right, level;
};

TargetIndices targets_from_assignment(const std::vector<DiscreteBlock>& gt,
                                      const AssignmentMap& xi) {
    TargetIndices t;
    const std::size_t n = xi.xi.size();
    t.up.resize(n);
    t.down.resize(n);
    t.left.resize(n);
    t.right.resize(n);
    t.level.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const DiscreteBlock& g = gt[xi.xi[i]];
        t.up[i] = static_cast<std::size_t>(g.up);
        t.down[i] = static_cast<std::size_t>(g.down);
        t.left[i] = static_cast<std::size_t>(g.left);
        t.right[i] = static_cast<std::size_t>(g.right);
        t.level[i] = static_cast<std::size_t>(g.level);
    }
    return t;
}

ad::Var nll_sum(const ad::Var& probs, std::vector<std::size_t> targets) {
    return ad::sum_all(ad::log_floor(ad::gather_entries(probs, std::move(targets)), kProbFloor));
}

}  // namespace

ad::Var assignment_loss(const ForwardResult& probs, const std::vector<DiscreteBlock>& gt,
                        const AssignmentMap& xi, const LossWeights& betas) {
    const TargetIndices t = targets_from_assignment(gt, xi);
    const ad::Var edge_ud = ad::add(nll_sum(probs.up, t.up), nll_sum(probs.down, t.down));
    const ad::Var edge_lr = ad::add(nll_sum(probs.left, t.left), nll_sum(probs.right, t.right));
    const ad::Var level = nll_sum(probs.level, t.level);
    const ad::Var weighted = ad::add(
        ad::add(ad::scale(edge_ud, betas.beta1), ad::scale(edge_lr, betas.beta2)),
        ad::scale(level, betas.beta3));
    return ad::scale(weighted, -1.0);
}

AdamW::AdamW(const std::vector<ad::Var>& params, double beta1, double beta2, double weight_decay,
             double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ad::Var& p : params_) {
        m_.emplace_back(p.value().shape());
        v_.emplace_back(p.value().shape());
    }
}

double AdamW::step(double lr, double clip) {
    double sq_norm = 0.0;
    for (const ad::Var& p : params_) {
        if (p.grad().size() != p.value().size()) continue;
        for (double g : p.grad().data()) sq_norm += g * g;
    }
    const double norm = std::sqrt(sq_norm);
    const double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ad::Var& p = params_[i];
        const bool has_grad = p.grad().size() == p.value().size();
        double* pv = p.mutable_value().data().data();
        double* mv = m_[i].data().data();
        double* vv = v_[i].data().data();
        const double* gv = has_grad ? p.grad().data().data() : nullptr;
        for (std::size_t j = 0; j < p.value().size(); ++j) {
            const double g = gv ? gv[j] * scale : 0.0;
            mv[j] = beta1_ * mv[j] + (1.0 - beta1_) * g;
            vv[j] = beta2_ * vv[j] + (1.0 - beta2_) * g * g;
            const double mhat = mv[j] / bc1;
            const double vhat = vv[j] / bc2;
            pv[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * pv[j]);
        }
    }
    return norm;
}

double lr_at_step(double base_lr, long step, long total_steps, double warmup_ratio) {
    if (total_steps <= 0) return base_lr;
    const long warmup = static_cast<long>(warmup_ratio * static_cast<double>(total_steps));
    if (warmup > 0 && step < warmup) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const long remaining = total_steps - warmup;
    if (remaining <= 0) return base_lr;
    return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(remaining);
}

StepMetrics train_step(Model& model, AdamW& optimizer, const Corpus& corpus,
                       const std::vector<std::size_t>& batch_indices,
                       const NoiseSchedule& schedule, const RunConfig& config, Rng& rng,
                       long step_index, long total_steps) {
    StepMetrics out;
    out.step = step_index;
    model.zero_grad();
    const LossWeights betas = config.loss_weights();
    const SurplusPolicy policy = config.surplus_policy();
    double loss_total = 0.0, edge_total = 0.0, level_total = 0.0;
    std::size_t trained = 0;
    DropoutCtx dropout{config.dropout, &rng};

    for (const std::size_t s : batch_indices) {
        const TripleSet& gold = corpus.gold[s];
        if (gold.empty()) continue;  // nothing to assign
        const auto& ids = corpus.token_ids[s];
        const ScaleSpec scale{config.lambda, static_cast<int>(ids.size()),
                              corpus.relation_count()};
        const std::vector<Block> gt_blocks = encode_blocks(gold, scale);
        std::vector<DiscreteBlock> gt_discrete;
        gt_discrete.reserve(gt_blocks.size());
        for (const Block& b : gt_blocks) gt_discrete.push_back(descale_to_indices(b, scale));

        const ExpandedBlocks expanded =
            expand_blocks(gt_blocks, static_cast<std::size_t>(config.expansion), rng);
        const int t = rng.uniform_int(1, schedule.T);
        const std::vector<Block> noised = forward_noise(expanded.z0, t, schedule, rng);

        const ForwardResult probs = forward(model, ids, noised, t, dropout);
        const CostMatrix cost = build_cost(probs.values(), gt_discrete, betas);
        const AssignmentMap xi = optimal_assign(cost, policy);
        const ad::Var loss = assignment_loss(probs, gt_discrete, xi, betas);
        const double loss_value = loss.value().item();
        if (!std::isfinite(loss_value)) {
            out.aborted = true;
            std::cerr << "warning: non-finite loss at step " << step_index << " (sentence " << s
                      << "), update skipped\n";
            break;
        }
        ad::backward(loss);
        loss_total += loss_value;

        // Unweighted per-head NLL at the assigned targets for the log.
        const TargetIndices targets = targets_from_assignment(gt_discrete, xi);
        const BlockProbabilities vals = probs.values();
        auto nll_at = [](const Tensor& p, const std::vector<std::size_t>& idx) {
            double acc = 0.0;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                acc += -std::log(std::max(p.at(i, idx[i]), kProbFloor));
            }
            return acc;
        };
        edge_total += nll_at(vals.up, targets.up) + nll_at(vals.down, targets.down) +
                      nll_at(vals.left, targets.left) + nll_at(vals.right, targets.right);
        level_total += nll_at(vals.level, targets.level);
        ++trained;
    }

    if (out.aborted || trained == 0) {
        model.zero_grad();
        out.lr = lr_at_step(config.lr, step_index, total_steps, config.warmup_ratio);
        return out;
    }

    // Mean gradient over the batch.
    const double inv = 1.0 / static_cast<double>(trained);
    for (ad::Var& p : model.params()) {
        if (p.grad().size() != p.value().size()) continue;
        for (double& v : p.mutable_grad().data()) v *= inv;
    }
    out.lr = lr_at_step(config.lr, step_index, total_steps, config.warmup_ratio);
    out.grad_norm = optimizer.step(out.lr, config.grad_clip);
    out.loss = loss_total * inv;
    out.edge_nll = edge_total * inv;
    out.level_nll = level_total * inv;
    return out;
}

TrainResult train(const Corpus& corpus, const RunConfig& config, const MetricsHook& on_metrics,
                  const CheckpointHook& on_checkpoint) {
    if (corpus.size() == 0) throw ValidationError("train: empty corpus");
    const std::size_t max_m = corpus.max_triples();
    if (max_m > static_cast<std::size_t>(config.expansion)) {
        throw ValidationError("train: expansion N (" + std::to_string(config.expansion) +
                              ") below max triples per sentence (" + std::to_string(max_m) + ")");
    }
    Rng rng(config.seed);
    const ModelConfig mc = config.model_config(static_cast<int>(corpus.vocab.size()),
                                               std::max(corpus.relation_count(), 1));
    TrainResult result{Model::init(mc, rng), {}, 0, {}};
    const NoiseSchedule schedule =
        build_schedule(config.timesteps, config.schedule_kind(), config.beta_start, config.beta_end);
    AdamW optimizer(result.model.params(), config.adam_beta1, config.adam_beta2,
                    config.weight_decay);

    const std::size_t n = corpus.size();
    const long steps_per_epoch =
        static_cast<long>((n + static_cast<std::size_t>(config.batch) - 1) /
                          static_cast<std::size_t>(config.batch));
    const long total_steps = steps_per_epoch * config.epochs;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    long step = 0;
    const auto start = std::chrono::steady_clock::now();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
        }
        for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(config.batch)) {
            const std::size_t hi = std::min(n, at + static_cast<std::size_t>(config.batch));
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                                 order.begin() + static_cast<std::ptrdiff_t>(hi));
            StepMetrics m =
                train_step(result.model, optimizer, corpus, batch, schedule, config, rng, step,
                           total_steps);
            m.epoch = epoch;
            m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                            .count();
            if (on_metrics) on_metrics(m);
            result.metrics.push_back(m);
            ++step;
        }
        if (on_checkpoint && config.checkpoint_every > 0 &&
            (epoch + 1) % config.checkpoint_every == 0 && epoch + 1 < config.epochs) {
            on_checkpoint(result.model, epoch, step, rng.state());
        }
    }
    result.steps = static_cast<std::uint64_t>(step);
    result.rng_state = rng.state();
    if (on_checkpoint) on_checkpoint(result.model, config.epochs - 1, step, rng.state());
    return result;
}

std::string metrics_to_json(const StepMetrics& m, bool log_timing) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"step\":" << m.step << ",\"epoch\":" << m.epoch << ",\"loss\":" << m.loss
       << ",\"edge_nll\":" << m.edge_nll << ",\"level_nll\":" << m.level_nll
       << ",\"grad_norm\":" << m.grad_norm << ",\"lr\":" << m.lr;
    if (log_timing) os << ",\"seconds\":" << m.seconds;
    if (m.aborted) os << ",\"aborted\":true";
    os << "}";
    return os.str();
}

}  // namespace diffrte
