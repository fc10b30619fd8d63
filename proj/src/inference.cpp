#include "diffrte/inference.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace diffrte {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

SentencePrediction infer_sentence(const Model& model, const std::vector<int>& token_ids,
                                  const NoiseSchedule& schedule, const SamplingPlan& plan,
                                  Rng& rng, PhiScoreMode phi_mode, ReconstructMode mid_mode) {
    const std::size_t d_blocks = static_cast<std::size_t>(plan.denoise_blocks);
    const ScaleSpec scale{model.config.lambda, static_cast<int>(token_ids.size()),
                          model.config.relation_count};
    std::vector<Block> z(d_blocks);
    for (Block& b : z) {
        std::array<double, 5> c{};
        for (double& v : c) v = rng.normal();
        b = Block::from_coords(c);
    }
    BlockProbabilities final_probs;
    for (int idx = plan.sigma - 1; idx >= 0; --idx) {
        const int t_cur = plan.tau[static_cast<std::size_t>(idx)];
        const int t_prev = idx > 0 ? plan.tau[static_cast<std::size_t>(idx) - 1] : 0;
        const ForwardResult out = forward(model, token_ids, z, t_cur);
        const BlockProbabilities probs = out.values();
        // The last step always snaps to the argmax indices.
        const ReconstructMode mode = idx == 0 ? ReconstructMode::argmax : mid_mode;
        const std::vector<Block> z0_hat = reconstruct_z0(probs, scale, mode);
        z = ddim_step(z, z0_hat, t_cur, t_prev, schedule);
        if (idx == 0) final_probs = probs;
    }
    const std::vector<bool> keep = filter_blocks(final_probs, plan.phi, scale, phi_mode);
    std::vector<Block> kept;
    kept.reserve(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (keep[i]) kept.push_back(z[i]);
    }
    SentencePrediction pred;
    pred.kept_blocks = static_cast<int>(kept.size());
    pred.discarded_blocks = static_cast<int>(z.size() - kept.size());
    pred.triples = pbes_decode(kept, scale);
    return pred;
}

std::vector<int> clamp_sentence(const std::vector<int>& ids, int max_len, bool strict,
                                std::size_t sentence_id) {
    if (ids.size() <= static_cast<std::size_t>(max_len)) return ids;
    if (strict) {
        throw ValidationError("sentence " + std::to_string(sentence_id) + " has " +
                              std::to_string(ids.size()) + " tokens, above max_len " +
                              std::to_string(max_len));
    }
    std::cerr << "warning: sentence " << sentence_id << " truncated to " << max_len
              << " tokens\n";
    return std::vector<int>(ids.begin(), ids.begin() + max_len);
}

namespace {

// Index-sharded parallel for; results must be written by index.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min<int>(threads, static_cast<int>(count));
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

double run_pass(const Model& model, const Corpus& corpus, const NoiseSchedule& schedule,
                const SamplingPlan& plan, const InferOptions& options,
                std::vector<SentencePrediction>& out) {
    const std::size_t n = corpus.size();
    out.assign(n, {});
    const auto start = std::chrono::steady_clock::now();
    parallel_for(n, options.threads, [&](std::size_t i) {
        Rng rng = Rng::derive(options.seed, i);
        const std::vector<int> ids =
            clamp_sentence(corpus.token_ids[i], model.config.max_len, options.strict_length, i);
        out[i] = infer_sentence(model, ids, schedule, plan, rng, options.phi_mode,
                                options.mid_mode);
        out[i].sentence_id = i;
    });
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

}  // namespace

std::string TimingReport::serialize() const {
    ordered_json doc;
    doc["sentences"] = sentences;
    doc["batch_1_ms_per_sentence"] = batch1_ms_per_sentence;
    doc["batch"] = batch;
    doc["batched_ms_per_sentence"] = batched_ms_per_sentence;
    doc["total_ms"] = total_ms;
    return doc.dump(2) + "\n";
}

CorpusInference infer_corpus(const Model& model, const Corpus& corpus,
                             const NoiseSchedule& schedule, const SamplingPlan& plan,
                             const InferOptions& options) {
    CorpusInference result;
    result.timing.sentences = corpus.size();
    result.timing.batch = options.batch;
    if (corpus.size() == 0) return result;

    // Timed pass one sentence at a time, then (if different) in batches; the
    // per-sentence RNG streams make both passes produce identical triples.
    std::vector<SentencePrediction> pass;
    InferOptions single = options;
    single.threads = 1;
    const double ms_single = run_pass(model, corpus, schedule, plan, single, pass);
    result.timing.batch1_ms_per_sentence = ms_single / static_cast<double>(corpus.size());
    result.predictions = std::move(pass);
    if (options.batch != 1) {
        std::vector<SentencePrediction> batched;
        const double ms_batched = run_pass(model, corpus, schedule, plan, options, batched);
        result.timing.batched_ms_per_sentence = ms_batched / static_cast<double>(corpus.size());
        result.timing.total_ms = ms_single + ms_batched;
    } else {
        result.timing.batched_ms_per_sentence = result.timing.batch1_ms_per_sentence;
        result.timing.total_ms = ms_single;
    }
    return result;
}

void write_predictions(const std::vector<SentencePrediction>& preds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open predictions file for writing: " + path);
    for (const SentencePrediction& p : preds) {
        ordered_json rec;
        rec["sentence_id"] = p.sentence_id;
        ordered_json triples = ordered_json::array();
        for (const Triple& t : p.triples.items()) {
            triples.push_back({t.head.start, t.head.end, t.relation, t.tail.start, t.tail.end});
        }
        rec["triples"] = std::move(triples);
        rec["kept_blocks"] = p.kept_blocks;
        rec["discarded_blocks"] = p.discarded_blocks;
        out << rec.dump() << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

std::vector<SentencePrediction> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions file: " + path);
    std::vector<SentencePrediction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        SentencePrediction p;
        p.sentence_id = rec.at("sentence_id").get<std::size_t>();
        for (const auto& arr : rec.at("triples")) {
            if (!arr.is_array() || arr.size() != 5) {
                throw DataError(path + " line " + std::to_string(line_no) +
                                ": triples entries must be 5-element arrays");
            }
            Triple t;
            t.head = Span{arr[0].get<int>(), arr[1].get<int>()};
            t.relation = arr[2].get<int>();
            t.tail = Span{arr[3].get<int>(), arr[4].get<int>()};
            p.triples.insert(t);
        }
        p.kept_blocks = rec.value("kept_blocks", 0);
        p.discarded_blocks = rec.value("discarded_blocks", 0);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<TripleSet> predictions_to_triples(const std::vector<SentencePrediction>& preds,
                                              std::size_t corpus_size) {
    std::vector<TripleSet> out(corpus_size);
    for (const SentencePrediction& p : preds) {
        if (p.sentence_id >= corpus_size) {
            throw ValidationError("prediction sentence_id " + std::to_string(p.sentence_id) +
                                  " outside corpus of " + std::to_string(corpus_size));
        }
        out[p.sentence_id] = p.triples;
    }
    return out;
}

std::vector<AblationCell> ablate(const Model& model, const Corpus& corpus,
                                 const NoiseSchedule& schedule, const std::vector<int>& d_grid,
                                 const std::vector<int>& sigma_grid, double phi,
                                 const InferOptions& options) {
    std::vector<AblationCell> cells;
    for (const int sigma : sigma_grid) {
        for (const int d : d_grid) {
            const SamplingPlan plan = SamplingPlan::make(schedule.T, sigma, d, phi);
            std::vector<SentencePrediction> preds;
            const double ms = run_pass(model, corpus, schedule, plan, options, preds);
            const EvalReport report = evaluate(predictions_to_triples(preds, corpus.size()),
                                               corpus, MatchMode::exact);
            AblationCell cell;
            cell.denoise_blocks = d;
            cell.sample_steps = sigma;
            cell.f1 = report.overall.f1();
            cell.ms_per_sentence = ms / static_cast<double>(corpus.size());
            cells.push_back(cell);
        }
    }
    return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
    std::ostringstream os;
    os << "D,sigma,f1,ms_per_sentence\n";
    os.precision(10);
    for (const AblationCell& c : cells) {
        os << c.denoise_blocks << "," << c.sample_steps << "," << c.f1 << ","
           << c.ms_per_sentence << "\n";
    }
    return os.str();
}

}  // namespace diffrte
