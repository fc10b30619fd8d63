#include "diffrte/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace diffrte {

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > T) throw ValidationError("alpha_bar_at: t out of [0, T]");
    return alpha_bar[static_cast<std::size_t>(t) - 1];
}

void NoiseSchedule::validate() const {
    if (T < 1) throw ValidationError("NoiseSchedule: T must be >= 1");
    if (static_cast<int>(beta.size()) != T || static_cast<int>(alpha.size()) != T ||
        static_cast<int>(alpha_bar.size()) != T) {
        throw ValidationError("NoiseSchedule: array lengths must equal T");
    }
    double prev = 1.0;
    for (int i = 0; i < T; ++i) {
        if (!(beta[i] > 0.0 && beta[i] < 1.0)) {
            throw ValidationError("NoiseSchedule: beta out of (0,1) at t=" + std::to_string(i + 1));
        }
        if (!(alpha_bar[i] > 0.0 && alpha_bar[i] < 1.0 && alpha_bar[i] < prev)) {
            throw ValidationError("NoiseSchedule: alpha_bar not strictly decreasing in (0,1)");
        }
        prev = alpha_bar[i];
    }
}

NoiseSchedule build_schedule(int T, ScheduleKind kind, double beta_start, double beta_end) {
    if (T < 1) throw ValidationError("build_schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    if (kind == ScheduleKind::linear) {
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
            throw ValidationError("build_schedule: need 0 < beta_start <= beta_end < 1");
        }
        for (int i = 0; i < T; ++i) {
            s.beta[i] = T == 1 ? beta_start
                               : beta_start + (beta_end - beta_start) * i / (T - 1);
        }
    } else {
        // Cosine alpha_bar with the usual 0.008 offset; betas derived from the
        // ratio of consecutive alpha_bars and clipped below 0.999.
        const double offset = 0.008;
        auto f = [&](double t) {
            const double v = std::cos((t / T + offset) / (1.0 + offset) * 3.141592653589793 / 2.0);
            return v * v;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int i = 0; i < T; ++i) {
            const double ab = f(static_cast<double>(i + 1)) / f0;
            double b = 1.0 - ab / prev;
            b = std::clamp(b, 1e-8, 0.999);
            s.beta[i] = b;
            prev = ab;
        }
    }
    double running = 1.0;
    for (int i = 0; i < T; ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        running *= s.alpha[i];
        s.alpha_bar[i] = running;
    }
    s.validate();
    return s;
}

SamplingPlan SamplingPlan::make(int T, int sigma, int denoise_blocks, double phi) {
    if (sigma < 1 || sigma > T) throw ValidationError("SamplingPlan: sigma must be in [1, T]");
    SamplingPlan p;
    p.sigma = sigma;
    p.denoise_blocks = denoise_blocks;
    p.phi = phi;
    const int step = T / sigma;
    p.tau.resize(sigma);
    for (int i = 0; i < sigma; ++i) p.tau[i] = T - (sigma - 1 - i) * step;
    p.validate(T);
    return p;
}

void SamplingPlan::validate(int T) const {
    if (static_cast<int>(tau.size()) != sigma || sigma < 1) {
        throw ValidationError("SamplingPlan: tau length must equal sigma");
    }
    if (tau.back() != T) throw ValidationError("SamplingPlan: tau must end at T");
    for (std::size_t i = 0; i < tau.size(); ++i) {
        if (tau[i] < 1 || tau[i] > T) throw ValidationError("SamplingPlan: tau out of range");
        if (i > 0 && tau[i] <= tau[i - 1]) {
            throw ValidationError("SamplingPlan: tau must be strictly increasing");
        }
    }
    if (denoise_blocks < 1) throw ValidationError("SamplingPlan: D must be >= 1");
    if (phi < 0.0 || phi > 5.0) throw ValidationError("SamplingPlan: phi must be in [0, 5]");
}

std::vector<Block> forward_noise(const std::vector<Block>& z0, int t,
                                 const NoiseSchedule& schedule, Rng& rng) {
    if (t < 1 || t > schedule.T) throw ValidationError("forward_noise: t out of [1, T]");
    const double ab = schedule.alpha_bar_at(t);
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    std::vector<Block> out(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) {
        auto c = z0[i].coords();
        std::array<double, 5> n{};
        for (double& v : n) v = rng.normal();
        std::array<double, 5> r{};
        for (int j = 0; j < 5; ++j) r[j] = signal * c[j] + noise * n[j];
        out[i] = Block::from_coords(r);
    }
    return out;
}

ExpandedBlocks expand_blocks(const std::vector<Block>& gt_blocks, std::size_t n, Rng& rng) {
    const std::size_t m = gt_blocks.size();
    if (n < m) {
        throw ValidationError("expand_blocks: N (" + std::to_string(n) +
                              ") must be >= ground-truth count (" + std::to_string(m) + ")");
    }
    ExpandedBlocks out;
    out.ground_truth_count = m;
    std::vector<Block> rows = gt_blocks;
    rows.resize(n);
    for (std::size_t i = m; i < n; ++i) {
        std::array<double, 5> c{};
        for (double& v : c) v = rng.normal();
        rows[i] = Block::from_coords(c);
    }
    // Fisher-Yates with a recorded permutation.
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(perm[i - 1], perm[j]);
    }
    out.z0.resize(n);
    out.permutation = perm;
    for (std::size_t i = 0; i < n; ++i) out.z0[i] = rows[perm[i]];
    return out;
}

std::vector<Block> ddim_step(const std::vector<Block>& z_cur, const std::vector<Block>& z0_hat,
                             int t_cur, int t_prev, const NoiseSchedule& schedule) {
    if (t_cur < 1 || t_cur > schedule.T) throw ValidationError("ddim_step: t_cur out of [1, T]");
    if (t_prev < 0 || t_prev >= t_cur) throw ValidationError("ddim_step: need 0 <= t_prev < t_cur");
    if (z_cur.size() != z0_hat.size()) throw ValidationError("ddim_step: block count mismatch");
    const double ab_cur = schedule.alpha_bar_at(t_cur);
    const double ab_prev = schedule.alpha_bar_at(t_prev);
    const double sig_prev = std::sqrt(ab_prev);
    const double noise_prev = std::sqrt(1.0 - ab_prev);
    const double sig_cur = std::sqrt(ab_cur);
    const double noise_cur = std::sqrt(1.0 - ab_cur);
    std::vector<Block> out(z_cur.size());
    for (std::size_t i = 0; i < z_cur.size(); ++i) {
        const auto zc = z_cur[i].coords();
        const auto zh = z0_hat[i].coords();
        std::array<double, 5> r{};
        for (int j = 0; j < 5; ++j) {
            const double eps = (zc[j] - sig_cur * zh[j]) / noise_cur;
            r[j] = sig_prev * zh[j] + noise_prev * eps;
        }
        out[i] = Block::from_coords(r);
    }
    return out;
}

namespace {

double collapse_row(std::span<const double> p, const ScaleSpec& scale, int extent,
                    ReconstructMode mode) {
    if (mode == ReconstructMode::argmax) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < p.size(); ++j) {
            if (p[j] > p[best]) best = j;
        }
        return scale.to_scaled(static_cast<int>(best), extent);
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        acc += p[j] * scale.to_scaled(static_cast<int>(j), extent);
    }
    return acc;
}

}  // namespace

std::vector<Block> reconstruct_z0(const BlockProbabilities& probs, const ScaleSpec& scale,
                                  ReconstructMode mode) {
    scale.validate();
    const std::size_t n = probs.block_count();
    const int L = scale.sentence_length;
    const int K = scale.relation_count;
    std::vector<Block> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        Block b;
        b.up = collapse_row(probs.up.row_span(i), scale, L, mode);
        b.down = collapse_row(probs.down.row_span(i), scale, L, mode);
        b.left = collapse_row(probs.left.row_span(i), scale, L, mode);
        b.right = collapse_row(probs.right.row_span(i), scale, L, mode);
        b.level = collapse_row(probs.level.row_span(i), scale, K, mode);
        out[i] = b;
    }
    return out;
}

namespace {

double row_max(std::span<const double> p) {
    double m = p.empty() ? 0.0 : p[0];
    for (double v : p) m = std::max(m, v);
    return m;
}

}  // namespace

std::vector<double> block_scores(const BlockProbabilities& probs, const ScaleSpec& scale,
                                 PhiScoreMode mode) {
    const std::size_t n = probs.block_count();
    std::vector<double> scores(n, 0.0);
    if (mode == PhiScoreMode::head_maxima) {
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = row_max(probs.up.row_span(i)) + row_max(probs.down.row_span(i)) +
                        row_max(probs.left.row_span(i)) + row_max(probs.right.row_span(i)) +
                        row_max(probs.level.row_span(i));
        }
        return scores;
    }
    const std::vector<Block> coords = reconstruct_z0(probs, scale, ReconstructMode::argmax);
    for (std::size_t i = 0; i < n; ++i) {
        const DiscreteBlock d = descale_to_indices(coords[i], scale);
        scores[i] = probs.up.at(i, d.up) + probs.down.at(i, d.down) +
                    probs.left.at(i, d.left) + probs.right.at(i, d.right) +
                    probs.level.at(i, d.level);
    }
    return scores;
}

std::vector<bool> filter_blocks(const BlockProbabilities& probs, double phi,
                                const ScaleSpec& scale, PhiScoreMode mode) {
    const std::vector<double> scores = block_scores(probs, scale, mode);
    std::vector<bool> keep(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) keep[i] = scores[i] >= phi;
    return keep;
}

}  // namespace diffrte
