#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffrte/blocks.hpp"
#include "diffrte/tensor.hpp"

namespace diffrte {

// Reserved vocabulary slots.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

struct Corpus {
    std::vector<std::vector<std::string>> tokens;   // surface forms
    std::vector<std::vector<int>> token_ids;        // aligned with tokens
    std::vector<TripleSet> gold;
    std::vector<std::string> vocab;                 // id = index; [0]=<pad>, [1]=<unk>
    std::vector<std::string> relations;             // id = index
    std::unordered_map<std::string, int> token_to_id;
    std::unordered_map<std::string, int> relation_to_id;
    std::size_t skipped_sentences = 0;  // entity not locatable in text

    std::size_t size() const { return tokens.size(); }
    int relation_count() const { return static_cast<int>(relations.size()); }
    std::size_t max_triples() const;
    void validate() const;
};

// Fixed token/relation inventories (from a checkpoint) applied while loading;
// unknown tokens map to <unk>, unknown relation names are a data error.
struct Inventories {
    std::vector<std::string> vocab;
    std::vector<std::string> relations;
};

// Each line: {"text": "...", "triple_list": [[head_text, relation, tail_text], ...]}.
// Whitespace tokenization; entities located as the first occurrence of their
// token subsequence. Sentences with unlocatable entities are skipped and counted.
Corpus load_jsonl(const std::string& path, const std::optional<Inventories>& fixed = std::nullopt,
                  const std::optional<std::string>& relations_path = std::nullopt);

void write_jsonl(const Corpus& corpus, const std::string& path);

// One relation name per line; id = line number.
std::vector<std::string> load_relations_file(const std::string& path);

struct SynthSpec {
    std::size_t sentences = 64;
    int vocab_words = 50;       // surface vocabulary (excludes <pad>/<unk>)
    int relation_count = 4;     // K
    int len_min = 8;
    int len_max = 20;
    double normal_weight = 0.35;
    double seo_weight = 0.25;
    double epo_weight = 0.2;
    double soo_weight = 0.1;
    double heavy_weight = 0.1;  // sentences with 6-8 triples
    double single_token_rate = 0.4;

    void validate() const;
};

// Random sentences with planted triples covering the overlap patterns;
// gold spans are canonicalized to first occurrence so a JSONL round trip
// reproduces the corpus exactly.
Corpus synth_corpus(const SynthSpec& spec, Rng& rng);

enum class MatchMode { exact, last_word };

struct SplitScore {
    long correct = 0;
    long predicted = 0;
    long gold_count = 0;

    double precision() const { return predicted > 0 ? static_cast<double>(correct) / predicted : 0.0; }
    double recall() const { return gold_count > 0 ? static_cast<double>(correct) / gold_count : 0.0; }
    double f1() const {
        const double p = precision(), r = recall();
        return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
};

struct EvalReport {
    SplitScore overall;
    std::map<std::string, SplitScore> by_pattern;  // Normal / SEO / EPO / SOO
    std::map<std::string, SplitScore> by_q;        // Q=1 .. Q=4, Q>=5

    // Stable-key-order structured text, suitable for diffing.
    std::string serialize() const;
};

// Per-sentence overlap tags; a sentence can carry several at once.
struct PatternTags {
    bool seo = false;
    bool epo = false;
    bool soo = false;
    int q = 0;

    bool normal() const { return !seo && !epo && !soo; }
    std::string q_bucket() const;
};

// SOO uses span overlap by default; strict equality behind the flag.
PatternTags classify_patterns(const TripleSet& triples, bool soo_strict_equality = false);
std::vector<PatternTags> pattern_split(const Corpus& corpus, bool soo_strict_equality = false);

EvalReport evaluate(const std::vector<TripleSet>& predictions, const Corpus& gold, MatchMode mode,
                    bool soo_strict_equality = false);

}  // namespace diffrte
