#include <doctest.h>

#include <cstdio>

#include "diffrte/inference.hpp"
#include "diffrte/training.hpp"

using namespace diffrte;

namespace {

Corpus micro_corpus(std::size_t sentences, std::uint64_t seed) {
    SynthSpec spec;
    spec.sentences = sentences;
    spec.vocab_words = 10;
    spec.relation_count = 2;
    spec.len_min = 4;
    spec.len_max = 8;
    spec.heavy_weight = 0.0;
    Rng rng(seed);
    return synth_corpus(spec, rng);
}

Model untrained_model(const Corpus& corpus) {
    RunConfig config;
    config.d_model = 8;
    config.d_embed = 8;
    config.k_attn = 8;
    config.h_hidden = 8;
    config.max_len = 16;
    Rng rng(1);
    return Model::init(
        config.model_config(static_cast<int>(corpus.vocab.size()), corpus.relation_count()), rng);
}

}  // namespace

TEST_CASE("impossible phi filters out every block") {
    const Corpus corpus = micro_corpus(2, 4);
    const Model model = untrained_model(corpus);
    const NoiseSchedule schedule = build_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
    const SamplingPlan plan = SamplingPlan::make(50, 5, 8, 5.0);  // maxima sum < 5 for soft heads
    Rng rng(7);
    const SentencePrediction pred =
        infer_sentence(model, corpus.token_ids[0], schedule, plan, rng);
    CHECK(pred.triples.empty());
    CHECK(pred.kept_blocks == 0);
    CHECK(pred.discarded_blocks == 8);
}

TEST_CASE("phi zero keeps everything and dedup collapses identical triples") {
    const Corpus corpus = micro_corpus(2, 4);
    const Model model = untrained_model(corpus);
    const NoiseSchedule schedule = build_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
    const SamplingPlan plan = SamplingPlan::make(50, 5, 12, 0.0);
    Rng rng(7);
    const SentencePrediction pred =
        infer_sentence(model, corpus.token_ids[0], schedule, plan, rng);
    CHECK(pred.kept_blocks == 12);
    CHECK(pred.discarded_blocks == 0);
    // set semantics: no more triples than blocks, no duplicates by construction
    CHECK(pred.triples.size() <= 12);
}

TEST_CASE("inference is deterministic given the seed and never mutates parameters") {
    const Corpus corpus = micro_corpus(3, 6);
    const Model model = untrained_model(corpus);
    const NoiseSchedule schedule = build_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
    const SamplingPlan plan = SamplingPlan::make(50, 5, 6, 0.0);
    const std::vector<Tensor> before = [&]() {
        std::vector<Tensor> t;
        for (auto& [n, v] : model.named_params()) t.push_back(v.value());
        return t;
    }();
    InferOptions options;
    options.seed = 99;
    options.batch = 2;
    const CorpusInference a = infer_corpus(model, corpus, schedule, plan, options);
    const CorpusInference b = infer_corpus(model, corpus, schedule, plan, options);
    REQUIRE(a.predictions.size() == b.predictions.size());
    for (std::size_t i = 0; i < a.predictions.size(); ++i) {
        CHECK(a.predictions[i].triples == b.predictions[i].triples);
        CHECK(a.predictions[i].kept_blocks == b.predictions[i].kept_blocks);
    }
    std::size_t i = 0;
    for (auto& [n, v] : model.named_params()) {
        CHECK(v.value() == before[i]);
        ++i;
    }
}

TEST_CASE("results are identical under different worker counts") {
    const Corpus corpus = micro_corpus(4, 8);
    const Model model = untrained_model(corpus);
    const NoiseSchedule schedule = build_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
    const SamplingPlan plan = SamplingPlan::make(50, 3, 5, 0.0);
    InferOptions one;
    one.seed = 5;
    one.threads = 1;
    InferOptions four = one;
    four.threads = 4;
    const CorpusInference a = infer_corpus(model, corpus, schedule, plan, one);
    const CorpusInference b = infer_corpus(model, corpus, schedule, plan, four);
    for (std::size_t i = 0; i < a.predictions.size(); ++i) {
        CHECK(a.predictions[i].triples == b.predictions[i].triples);
    }
}

TEST_CASE("empty corpus produces empty predictions and zero time") {
    Corpus corpus;
    corpus.vocab = {"<pad>", "<unk>"};
    corpus.relations = {"R0"};
    const Model model = [] {
        RunConfig config;
        config.d_model = 8;
        config.d_embed = 8;
        config.k_attn = 8;
        config.h_hidden = 8;
        Rng rng(1);
        return Model::init(config.model_config(2, 1), rng);
    }();
    const NoiseSchedule schedule = build_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
    const SamplingPlan plan = SamplingPlan::make(50, 5, 6, 4.0);
    const CorpusInference out = infer_corpus(model, corpus, schedule, plan, {});
    CHECK(out.predictions.empty());
    CHECK(out.timing.total_ms == 0.0);
}

TEST_CASE("predicted triples always satisfy the span and relation invariants") {
    const Corpus corpus = micro_corpus(3, 10);
    const Model model = untrained_model(corpus);
    const NoiseSchedule schedule = build_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
    const SamplingPlan plan = SamplingPlan::make(50, 4, 10, 0.0);
    InferOptions options;
    options.seed = 3;
    const CorpusInference out = infer_corpus(model, corpus, schedule, plan, options);
    for (std::size_t s = 0; s < out.predictions.size(); ++s) {
        const int L = static_cast<int>(corpus.tokens[s].size());
        for (const Triple& t : out.predictions[s].triples.items()) {
            CHECK(t.head.start >= 0);
            CHECK(t.head.start <= t.head.end);
            CHECK(t.head.end < L);
            CHECK(t.tail.start >= 0);
            CHECK(t.tail.start <= t.tail.end);
            CHECK(t.tail.end < L);
            CHECK(t.relation >= 0);
            CHECK(t.relation < corpus.relation_count());
        }
    }
}

TEST_CASE("raising phi never adds triples") {
    const Corpus corpus = micro_corpus(2, 12);
    const Model model = untrained_model(corpus);
    const NoiseSchedule schedule = build_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
    InferOptions options;
    options.seed = 21;
    TripleSet prev_union;
    bool first = true;
    for (const double phi : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
        const SamplingPlan plan = SamplingPlan::make(50, 4, 8, phi);
        Rng rng = Rng::derive(options.seed, 0);
        const SentencePrediction p =
            infer_sentence(model, corpus.token_ids[0], schedule, plan, rng);
        if (!first) {
            for (const Triple& t : p.triples.items()) CHECK(prev_union.contains(t));
        }
        prev_union = p.triples;
        first = false;
    }
}

TEST_CASE("prediction files round-trip") {
    std::vector<SentencePrediction> preds(2);
    preds[0].sentence_id = 0;
    preds[0].triples.insert(Triple{Span{1, 2}, 0, Span{4, 4}});
    preds[0].kept_blocks = 3;
    preds[0].discarded_blocks = 27;
    preds[1].sentence_id = 1;
    preds[1].kept_blocks = 0;
    preds[1].discarded_blocks = 30;
    const std::string path = "test_predictions_roundtrip.jsonl";
    write_predictions(preds, path);
    const auto loaded = load_predictions(path);
    std::remove(path.c_str());
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].triples == preds[0].triples);
    CHECK(loaded[0].kept_blocks == 3);
    CHECK(loaded[1].triples.empty());
    const auto aligned = predictions_to_triples(loaded, 2);
    CHECK(aligned[0] == preds[0].triples);
}

TEST_CASE("sentence clamping truncates or rejects") {
    const std::vector<int> ids(20, 2);
    const auto clamped = clamp_sentence(ids, 8, false, 0);
    CHECK(clamped.size() == 8);
    CHECK_THROWS_AS(clamp_sentence(ids, 8, true, 0), ValidationError);
    CHECK(clamp_sentence(ids, 20, true, 0).size() == 20);
}
