#include "diffrte/network.hpp"

#include <algorithm>
#include <cmath>

namespace diffrte {

using ad::Var;

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ValidationError("ModelConfig: vocab must hold PAD and UNK");
    if (relation_count < 1) throw ValidationError("ModelConfig: relation_count must be >= 1");
    if (max_len < 1) throw ValidationError("ModelConfig: max_len must be >= 1");
    if (d_model < 2 || d_model % 2 != 0) {
        throw ValidationError("ModelConfig: d_model must be even and >= 2");
    }
    if (d_embed < 1 || k_attn < 1 || h_hidden < 1) {
        throw ValidationError("ModelConfig: widths must be positive");
    }
    if (d_model % 2 != 0) throw ValidationError("ModelConfig: d_model must be even");
    if (!(lambda > 0.0)) throw ValidationError("ModelConfig: lambda must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("ModelConfig: dropout in [0,1)");
}

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Tensor t({rows, cols});
    for (double& v : t.data()) v = stddev * rng.normal();
    return t;
}

Var init_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    // fan-in scaled normals keep tanh pre-activations near the linear regime
    return Var::param(random_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), rng));
}

Var init_embedding(std::size_t rows, std::size_t cols, Rng& rng) {
    return Var::param(random_matrix(rows, cols, 0.1, rng));
}

Var init_bias(std::size_t cols) { return Var::param(Tensor({1, cols})); }

BranchParams init_branch(const ModelConfig& c, Rng& rng) {
    BranchParams b;
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto k = static_cast<std::size_t>(c.k_attn);
    b.w_b = init_matrix(d, d, rng);
    b.w_e = init_matrix(k, d, rng);
    b.w_h = init_matrix(k, d, rng);
    b.w_s = init_matrix(1, k, rng);
    b.time_w = init_matrix(d, d, rng);
    b.time_b = init_bias(d);
    return b;
}

BiaffineParams init_biaffine(const ModelConfig& c, Rng& rng) {
    BiaffineParams p;
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto h = static_cast<std::size_t>(c.h_hidden);
    p.u1 = Var::param(random_matrix(d, h * d, 1.0 / static_cast<double>(c.d_model), rng));
    p.u2 = init_matrix(2 * d, h, rng);
    p.b = init_bias(h);
    p.mlp_w1 = init_matrix(h, h, rng);
    p.mlp_b1 = init_bias(h);
    p.mlp_w2 = init_matrix(h, 1, rng);
    p.mlp_b2 = init_bias(1);
    return p;
}

LevelHeadParams init_level_head(const ModelConfig& c, Rng& rng) {
    LevelHeadParams p;
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto h = static_cast<std::size_t>(c.h_hidden);
    const auto kw = c.level_key_width();
    const auto K = static_cast<std::size_t>(c.relation_count);
    p.w_q = init_matrix(d, h, rng);
    p.w_k = init_matrix(kw, h, rng);
    p.w_v = init_matrix(kw, h, rng);
    p.mlp_w1 = init_matrix(h, h, rng);
    p.mlp_b1 = init_bias(h);
    p.mlp_w2 = init_matrix(h, K, rng);
    p.mlp_b2 = init_bias(K);
    return p;
}

}  // namespace

Model Model::init(const ModelConfig& config, Rng& rng) {
    config.validate();
    Model m;
    m.config = config;
    const auto de = static_cast<std::size_t>(config.d_embed);
    const auto dh = static_cast<std::size_t>(config.d_model) / 2;
    m.tok_emb = init_embedding(static_cast<std::size_t>(config.vocab_size), de, rng);
    m.pos_emb = init_embedding(static_cast<std::size_t>(config.max_len), de, rng);
    m.rnn.w_x_fwd = init_matrix(de, dh, rng);
    m.rnn.w_h_fwd = init_matrix(dh, dh, rng);
    m.rnn.b_fwd = init_bias(dh);
    m.rnn.w_x_bwd = init_matrix(de, dh, rng);
    m.rnn.w_h_bwd = init_matrix(dh, dh, rng);
    m.rnn.b_bwd = init_bias(dh);
    m.rel_emb = init_embedding(static_cast<std::size_t>(config.relation_count),
                               static_cast<std::size_t>(config.d_model), rng);
    m.edge_branch = init_branch(config, rng);
    m.level_branch = init_branch(config, rng);
    for (auto& bf : m.biaffine) bf = init_biaffine(config, rng);
    m.level_head = init_level_head(config, rng);
    return m;
}

std::vector<std::pair<std::string, Var>> Model::named_params() const {
    std::vector<std::pair<std::string, Var>> out;
    out.emplace_back("tok_emb", tok_emb);
    out.emplace_back("pos_emb", pos_emb);
    out.emplace_back("rnn.w_x_fwd", rnn.w_x_fwd);
    out.emplace_back("rnn.w_h_fwd", rnn.w_h_fwd);
    out.emplace_back("rnn.b_fwd", rnn.b_fwd);
    out.emplace_back("rnn.w_x_bwd", rnn.w_x_bwd);
    out.emplace_back("rnn.w_h_bwd", rnn.w_h_bwd);
    out.emplace_back("rnn.b_bwd", rnn.b_bwd);
    out.emplace_back("rel_emb", rel_emb);
    const char* branch_names[2] = {"coattn_edge", "coattn_level"};
    const BranchParams* branches[2] = {&edge_branch, &level_branch};
    for (int i = 0; i < 2; ++i) {
        const std::string p = branch_names[i];
        out.emplace_back(p + ".w_b", branches[i]->w_b);
        out.emplace_back(p + ".w_e", branches[i]->w_e);
        out.emplace_back(p + ".w_h", branches[i]->w_h);
        out.emplace_back(p + ".w_s", branches[i]->w_s);
        out.emplace_back(p + ".time_w", branches[i]->time_w);
        out.emplace_back(p + ".time_b", branches[i]->time_b);
    }
    const char* edge_names[4] = {"biaffine_up", "biaffine_down", "biaffine_left", "biaffine_right"};
    for (int i = 0; i < 4; ++i) {
        const std::string p = edge_names[i];
        out.emplace_back(p + ".u1", biaffine[i].u1);
        out.emplace_back(p + ".u2", biaffine[i].u2);
        out.emplace_back(p + ".b", biaffine[i].b);
        out.emplace_back(p + ".mlp_w1", biaffine[i].mlp_w1);
        out.emplace_back(p + ".mlp_b1", biaffine[i].mlp_b1);
        out.emplace_back(p + ".mlp_w2", biaffine[i].mlp_w2);
        out.emplace_back(p + ".mlp_b2", biaffine[i].mlp_b2);
    }
    out.emplace_back("level_head.w_q", level_head.w_q);
    out.emplace_back("level_head.w_k", level_head.w_k);
    out.emplace_back("level_head.w_v", level_head.w_v);
    out.emplace_back("level_head.mlp_w1", level_head.mlp_w1);
    out.emplace_back("level_head.mlp_b1", level_head.mlp_b1);
    out.emplace_back("level_head.mlp_w2", level_head.mlp_w2);
    out.emplace_back("level_head.mlp_b2", level_head.mlp_b2);
    return out;
}

std::vector<Var> Model::params() const {
    std::vector<Var> out;
    for (auto& [name, v] : named_params()) out.push_back(v);
    return out;
}

void Model::zero_grad() const {
    for (auto& [name, v] : named_params()) const_cast<Var&>(v).zero_grad();
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, v] : named_params()) n += v.value().size();
    return n;
}

Var encode_sentence(const Model& model, const std::vector<int>& token_ids,
                    const DropoutCtx& dropout) {
    const std::size_t len = token_ids.size();
    if (len == 0) throw ValidationError("encode_sentence: empty sentence");
    if (len > static_cast<std::size_t>(model.config.max_len)) {
        throw ValidationError("encode_sentence: sentence longer than max_len");
    }
    std::vector<std::size_t> tok_idx(len), pos_idx(len);
    for (std::size_t i = 0; i < len; ++i) {
        const int id = token_ids[i];
        if (id < 0 || id >= model.config.vocab_size) {
            throw ValidationError("encode_sentence: token id out of vocabulary");
        }
        tok_idx[i] = static_cast<std::size_t>(id);
        pos_idx[i] = i;
    }
    Var x = ad::add(ad::gather_rows(model.tok_emb, tok_idx),
                    ad::gather_rows(model.pos_emb, pos_idx));

    // Precompute the input projections once, then run both directions.
    const Var fwd_in = ad::matmul(x, model.rnn.w_x_fwd);
    const Var bwd_in = ad::matmul(x, model.rnn.w_x_bwd);
    const std::size_t dh = fwd_in.cols();
    std::vector<Var> fwd(len), bwd(len);
    Var h = Var::constant(Tensor({1, dh}));
    for (std::size_t t = 0; t < len; ++t) {
        Var pre = ad::add(ad::row(fwd_in, t), ad::matmul(h, model.rnn.w_h_fwd));
        h = ad::tanh(ad::add_rowvec(pre, model.rnn.b_fwd));
        fwd[t] = h;
    }
    h = Var::constant(Tensor({1, dh}));
    for (std::size_t t = len; t > 0; --t) {
        Var pre = ad::add(ad::row(bwd_in, t - 1), ad::matmul(h, model.rnn.w_h_bwd));
        h = ad::tanh(ad::add_rowvec(pre, model.rnn.b_bwd));
        bwd[t - 1] = h;
    }
    std::vector<Var> rows(len);
    for (std::size_t t = 0; t < len; ++t) rows[t] = ad::concat_cols(fwd[t], bwd[t]);
    Var out = ad::vstack(rows);
    if (dropout.rate > 0.0 && dropout.rng != nullptr) {
        out = ad::dropout(out, dropout.rate, *dropout.rng);
    }
    return out;
}

Var edge_repr(const Var& sentence_repr, const std::vector<Block>& noised, const ScaleSpec& scale) {
    if (noised.empty()) throw ValidationError("edge_repr: no blocks");
    std::vector<Var> rows;
    rows.reserve(noised.size());
    for (const Block& b : noised) {
        const DiscreteBlock d = descale_to_indices(b, scale);
        const int h_lo = std::min(d.up, d.down), h_hi = std::max(d.up, d.down);
        const int t_lo = std::min(d.left, d.right), t_hi = std::max(d.left, d.right);
        std::vector<std::size_t> span;
        for (int i = h_lo; i <= h_hi; ++i) span.push_back(static_cast<std::size_t>(i));
        for (int i = t_lo; i <= t_hi; ++i) {
            if (i < h_lo || i > h_hi) span.push_back(static_cast<std::size_t>(i));
        }
        std::sort(span.begin(), span.end());
        rows.push_back(ad::mean_rows(sentence_repr, std::move(span)));
    }
    return ad::vstack(rows);
}

Var level_repr(const Model& model, const std::vector<Block>& noised, const ScaleSpec& scale) {
    if (noised.empty()) throw ValidationError("level_repr: no blocks");
    const int K = scale.relation_count;
    if (!model.config.soft_level_lookup) {
        std::vector<std::size_t> idx;
        idx.reserve(noised.size());
        for (const Block& b : noised) {
            idx.push_back(static_cast<std::size_t>(scale.to_index(b.level, K)));
        }
        return ad::gather_rows(model.rel_emb, idx);
    }
    // Soft lookup: linear interpolation between the two nearest relation rows.
    std::vector<Var> rows;
    rows.reserve(noised.size());
    for (const Block& b : noised) {
        const double pos = std::clamp((b.level + scale.lambda) / (2.0 * scale.lambda) * (K - 1),
                                      0.0, static_cast<double>(K - 1));
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, static_cast<std::size_t>(K - 1));
        const double w = pos - static_cast<double>(lo);
        rows.push_back(ad::add(ad::scale(ad::row(model.rel_emb, lo), 1.0 - w),
                               ad::scale(ad::row(model.rel_emb, hi), w)));
    }
    return ad::vstack(rows);
}

Tensor timestep_features(int timestep, std::size_t width) {
    if (width % 2 != 0) throw ValidationError("timestep_features: width must be even");
    Tensor t({1, width});
    const double base = 1e4;
    for (std::size_t i = 0; i < width / 2; ++i) {
        const double freq =
            std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(width));
        t[2 * i] = std::sin(timestep * freq);
        t[2 * i + 1] = std::cos(timestep * freq);
    }
    return t;
}

Var co_attention(const Var& sentence_repr, const Var& block_repr, const BranchParams& branch,
                 int timestep) {
    // Affinity between every token and every block.
    const Var affinity =
        ad::tanh(ad::matmul(ad::matmul(sentence_repr, branch.w_b), ad::transpose(block_repr)));
    // Hidden state mixing block features with affinity-projected sentence features.
    const Var block_t = ad::transpose(block_repr);      // d x N
    const Var sent_t = ad::transpose(sentence_repr);    // d x L
    const Var hidden = ad::tanh(ad::add(ad::matmul(branch.w_e, block_t),
                                        ad::matmul(ad::matmul(branch.w_h, sent_t), affinity)));
    const Var attn = ad::softmax_rows(ad::matmul(branch.w_s, hidden));  // 1 x N
    const Var timestep_row = ad::add_rowvec(
        ad::matmul(Var::constant(timestep_features(timestep, branch.time_w.rows())),
                   branch.time_w),
        branch.time_b);
    // Mean-one attention weights (N * softmax): uniform attention passes each
    // block through unchanged. Raw softmax weights shrink every block's own
    // features by ~1/N, which starves the heads of block identity and
    // collapses all blocks onto one prediction.
    const Var weights = ad::scale(ad::transpose(attn), static_cast<double>(block_repr.rows()));
    const Var scaled = ad::scale_rows(block_repr, weights);
    return ad::add_rowvec(scaled, timestep_row);
}

namespace {

// Per-edge biaffine scores for all blocks, stacked as (N*L) x h. The u1
// buffer reads equally as (d, h*d) or (d*h, d); contracting token features
// first costs d*h*L*(d+N) instead of d*h*N*(d+L), cheaper whenever L < N.
Var biaffine_hidden(const BiaffineParams& p, const Var& sentence_repr, const Var& fused,
                    std::size_t d) {
    const std::size_t n = fused.rows();
    const std::size_t h = p.b.cols();
    const std::size_t len = sentence_repr.rows();
    const Var u1_view = ad::reshape(p.u1, d * h, d);
    const Var token_mix = ad::reshape(ad::matmul(u1_view, ad::transpose(sentence_repr)),
                                      d, h * len);
    const Var bilinear = ad::matmul(fused, token_mix);               // N x (h*L)
    Var stacked = ad::split_rows_transpose(bilinear, h, len);        // (N*L) x h
    std::vector<std::size_t> top_idx(d), bot_idx(d);
    for (std::size_t i = 0; i < d; ++i) {
        top_idx[i] = i;
        bot_idx[i] = d + i;
    }
    const Var term_sent = ad::matmul(sentence_repr, ad::gather_rows(p.u2, top_idx));  // L x h
    const Var term_block = ad::matmul(fused, ad::gather_rows(p.u2, bot_idx));         // N x h
    stacked = ad::add_tiled_rows(stacked, term_sent, n);
    stacked = ad::add_block_rows(stacked, term_block, len);
    return ad::add_rowvec(stacked, p.b);
}

Var mlp_scores(const BiaffineParams& p, const Var& hidden, std::size_t n, std::size_t len) {
    const Var h1 = ad::tanh(ad::add_rowvec(ad::matmul(hidden, p.mlp_w1), p.mlp_b1));
    const Var s = ad::add_rowvec(ad::matmul(h1, p.mlp_w2), p.mlp_b2);  // (N*L) x 1
    return ad::softmax_rows(ad::reshape(s, n, len));
}

}  // namespace

EdgeScores biaffine_edges(const Model& model, const Var& sentence_repr, const Var& fused_edges) {
    const std::size_t d = static_cast<std::size_t>(model.config.d_model);
    const std::size_t n = fused_edges.rows();
    const std::size_t len = sentence_repr.rows();
    EdgeScores out;
    for (int e = 0; e < 4; ++e) {
        out.hidden[e] = biaffine_hidden(model.biaffine[e], sentence_repr, fused_edges, d);
        out.probs[e] = mlp_scores(model.biaffine[e], out.hidden[e], n, len);
    }
    return out;
}

namespace {

// Collapses each (N*L) x h edge tensor to (N*L) x 1 by max over h, then
// concatenates the four columns; the alternative pooling for the level head.
Var pool_over_hidden(const std::array<Var, 4>& hidden) {
    std::vector<Var> cols;
    cols.reserve(4);
    for (const Var& hv : hidden) {
        const std::size_t rows = hv.rows(), width = hv.cols();
        // max over columns via repeated pairwise maximum on column slices
        Var acc;
        for (std::size_t c = 0; c < width; ++c) {
            Var column = ad::gather_entries(hv, std::vector<std::size_t>(rows, c));  // rows x 1
            acc = c == 0 ? column : ad::maximum(acc, column);
        }
        cols.push_back(acc);
    }
    Var out = ad::concat_cols(cols[0], cols[1]);
    out = ad::concat_cols(out, cols[2]);
    return ad::concat_cols(out, cols[3]);
}

}  // namespace

Var level_scores(const Model& model, const EdgeScores& edges, const Var& fused_levels,
                 std::size_t block_count, std::size_t sentence_len) {
    const LevelHeadParams& p = model.level_head;
    Var pooled;
    if (model.config.level_pool == LevelPoolAxis::over_heads) {
        pooled = ad::maximum(ad::maximum(edges.hidden[0], edges.hidden[1]),
                             ad::maximum(edges.hidden[2], edges.hidden[3]));
    } else {
        pooled = pool_over_hidden(edges.hidden);
    }
    const Var keys_all = ad::matmul(pooled, p.w_k);    // (N*L) x h
    const Var values_all = ad::matmul(pooled, p.w_v);  // (N*L) x h
    const Var queries = ad::matmul(fused_levels, p.w_q);  // N x h
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(p.w_q.cols()));
    std::vector<Var> attended;
    attended.reserve(block_count);
    for (std::size_t i = 0; i < block_count; ++i) {
        std::vector<std::size_t> range(sentence_len);
        for (std::size_t l = 0; l < sentence_len; ++l) range[l] = i * sentence_len + l;
        const Var k_i = ad::gather_rows(keys_all, range);
        const Var v_i = ad::gather_rows(values_all, range);
        const Var q_i = ad::row(queries, i);
        const Var scores =
            ad::scale(ad::transpose(ad::matmul(k_i, ad::transpose(q_i))), scale_factor);  // 1 x L
        const Var attn = ad::softmax_rows(scores);
        attended.push_back(ad::matmul(attn, v_i));  // 1 x h
    }
    const Var att = ad::vstack(attended);  // N x h
    const Var h1 = ad::tanh(ad::add_rowvec(ad::matmul(att, p.mlp_w1), p.mlp_b1));
    const Var logits = ad::add_rowvec(ad::matmul(h1, p.mlp_w2), p.mlp_b2);  // N x K
    return ad::softmax_rows(logits);
}

BlockProbabilities ForwardResult::values() const {
    BlockProbabilities p;
    p.up = up.value();
    p.down = down.value();
    p.left = left.value();
    p.right = right.value();
    p.level = level.value();
    return p;
}

ForwardResult forward(const Model& model, const std::vector<int>& token_ids,
                      const std::vector<Block>& noised, int timestep, const DropoutCtx& dropout,
                      std::size_t pad_to) {
    const std::size_t len = token_ids.size();
    const ScaleSpec scale{model.config.lambda, static_cast<int>(len), model.config.relation_count};
    const Var sentence = encode_sentence(model, token_ids, dropout);
    const Var edges = edge_repr(sentence, noised, scale);
    const Var levels = level_repr(model, noised, scale);
    const Var fused_edges = co_attention(sentence, edges, model.edge_branch, timestep);
    const Var fused_levels = co_attention(sentence, levels, model.level_branch, timestep);
    EdgeScores edge_sc = biaffine_edges(model, sentence, fused_edges);
    const Var p_level = level_scores(model, edge_sc, fused_levels, noised.size(), len);
    ForwardResult r;
    if (pad_to != 0 && pad_to < len) throw ValidationError("forward: pad_to below sentence length");
    const std::size_t target = pad_to == 0 ? len : pad_to;
    r.up = ad::pad_cols(edge_sc.probs[0], target);
    r.down = ad::pad_cols(edge_sc.probs[1], target);
    r.left = ad::pad_cols(edge_sc.probs[2], target);
    r.right = ad::pad_cols(edge_sc.probs[3], target);
    r.level = p_level;
    return r;
}

}  // namespace diffrte
