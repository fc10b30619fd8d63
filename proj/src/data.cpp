#include "diffrte/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace diffrte {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::size_t Corpus::max_triples() const {
    std::size_t m = 0;
    for (const TripleSet& t : gold) m = std::max(m, t.size());
    return m;
}

void Corpus::validate() const {
    if (tokens.size() != gold.size() || tokens.size() != token_ids.size()) {
        throw ValidationError("Corpus: parallel arrays out of sync");
    }
    const int K = relation_count();
    for (std::size_t s = 0; s < gold.size(); ++s) {
        const int L = static_cast<int>(tokens[s].size());
        for (const Triple& t : gold[s].items()) {
            if (t.relation < 0 || t.relation >= K) {
                throw ValidationError("Corpus: relation id out of inventory at sentence " +
                                      std::to_string(s));
            }
            if (t.head.start < 0 || t.head.end >= L || t.tail.start < 0 || t.tail.end >= L ||
                t.head.start > t.head.end || t.tail.start > t.tail.end) {
                throw ValidationError("Corpus: span out of range at sentence " + std::to_string(s));
            }
        }
    }
}

namespace {

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

// First occurrence of `needle` as a token subsequence, or nullopt.
std::optional<Span> locate(const std::vector<std::string>& tokens,
                           const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > tokens.size()) return std::nullopt;
    for (std::size_t i = 0; i + needle.size() <= tokens.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (tokens[i + j] != needle[j]) {
                ok = false;
                break;
            }
        }
        if (ok) {
            return Span{static_cast<int>(i), static_cast<int>(i + needle.size() - 1)};
        }
    }
    return std::nullopt;
}

void init_reserved_vocab(Corpus& c) {
    c.vocab = {"<pad>", "<unk>"};
    c.token_to_id = {{"<pad>", kPadId}, {"<unk>", kUnkId}};
}

int intern_token(Corpus& c, const std::string& tok, bool grow) {
    auto it = c.token_to_id.find(tok);
    if (it != c.token_to_id.end()) return it->second;
    if (!grow) return kUnkId;
    const int id = static_cast<int>(c.vocab.size());
    c.vocab.push_back(tok);
    c.token_to_id.emplace(tok, id);
    return id;
}

int intern_relation(Corpus& c, const std::string& name, bool grow, std::size_t line_no) {
    auto it = c.relation_to_id.find(name);
    if (it != c.relation_to_id.end()) return it->second;
    if (!grow) {
        throw DataError("line " + std::to_string(line_no) + ": relation '" + name +
                        "' not in inventory");
    }
    const int id = static_cast<int>(c.relations.size());
    c.relations.push_back(name);
    c.relation_to_id.emplace(name, id);
    return id;
}

}  // namespace

std::vector<std::string> load_relations_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open relations file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    while (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

Corpus load_jsonl(const std::string& path, const std::optional<Inventories>& fixed,
                  const std::optional<std::string>& relations_path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file: " + path);

    Corpus c;
    bool grow_vocab = true;
    bool grow_relations = true;
    if (fixed) {
        c.vocab = fixed->vocab;
        for (std::size_t i = 0; i < c.vocab.size(); ++i) {
            c.token_to_id.emplace(c.vocab[i], static_cast<int>(i));
        }
        c.relations = fixed->relations;
        for (std::size_t i = 0; i < c.relations.size(); ++i) {
            c.relation_to_id.emplace(c.relations[i], static_cast<int>(i));
        }
        grow_vocab = false;
        grow_relations = false;
    } else {
        init_reserved_vocab(c);
        if (relations_path) {
            c.relations = load_relations_file(*relations_path);
            for (std::size_t i = 0; i < c.relations.size(); ++i) {
                c.relation_to_id.emplace(c.relations[i], static_cast<int>(i));
            }
            grow_relations = false;
        }
    }

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
        if (!rec.is_object() || !rec.contains("text") || !rec.contains("triple_list")) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": expected object with text and triple_list");
        }
        const std::vector<std::string> toks = split_whitespace(rec["text"].get<std::string>());
        if (toks.empty()) {
            throw DataError(path + " line " + std::to_string(line_no) + ": empty text");
        }
        TripleSet triples;
        bool locatable = true;
        for (const auto& item : rec["triple_list"]) {
            if (!item.is_array() || item.size() != 3) {
                throw DataError(path + " line " + std::to_string(line_no) +
                                ": triple_list entries must be [head, relation, tail]");
            }
            const auto head_tokens = split_whitespace(item[0].get<std::string>());
            const auto tail_tokens = split_whitespace(item[2].get<std::string>());
            const auto head_span = locate(toks, head_tokens);
            const auto tail_span = locate(toks, tail_tokens);
            if (!head_span || !tail_span) {
                locatable = false;
                break;
            }
            Triple t;
            t.head = *head_span;
            t.tail = *tail_span;
            t.relation = intern_relation(c, item[1].get<std::string>(), grow_relations, line_no);
            triples.insert(t);
        }
        if (!locatable) {
            ++c.skipped_sentences;
            std::cerr << "warning: " << path << " line " << line_no
                      << ": entity not found in text, sentence skipped\n";
            continue;
        }
        std::vector<int> ids(toks.size());
        for (std::size_t i = 0; i < toks.size(); ++i) ids[i] = intern_token(c, toks[i], grow_vocab);
        c.tokens.push_back(toks);
        c.token_ids.push_back(std::move(ids));
        c.gold.push_back(std::move(triples));
    }
    c.validate();
    return c;
}

void write_jsonl(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open output file: " + path);
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        ordered_json rec;
        std::string text;
        for (std::size_t i = 0; i < corpus.tokens[s].size(); ++i) {
            if (i) text += ' ';
            text += corpus.tokens[s][i];
        }
        rec["text"] = text;
        ordered_json list = ordered_json::array();
        for (const Triple& t : corpus.gold[s].items()) {
            std::string head, tail;
            for (int i = t.head.start; i <= t.head.end; ++i) {
                if (i > t.head.start) head += ' ';
                head += corpus.tokens[s][static_cast<std::size_t>(i)];
            }
            for (int i = t.tail.start; i <= t.tail.end; ++i) {
                if (i > t.tail.start) tail += ' ';
                tail += corpus.tokens[s][static_cast<std::size_t>(i)];
            }
            list.push_back({head, corpus.relations[static_cast<std::size_t>(t.relation)], tail});
        }
        rec["triple_list"] = std::move(list);
        out << rec.dump() << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

void SynthSpec::validate() const {
    if (sentences == 0) throw ValidationError("SynthSpec: need at least one sentence");
    if (vocab_words < 4) throw ValidationError("SynthSpec: vocab_words must be >= 4");
    if (relation_count < 1) throw ValidationError("SynthSpec: relation_count must be >= 1");
    if (len_min < 2 || len_max < len_min) throw ValidationError("SynthSpec: bad length range");
    const double total =
        normal_weight + seo_weight + epo_weight + soo_weight + heavy_weight;
    if (!(total > 0)) throw ValidationError("SynthSpec: pattern weights must sum to > 0");
    if (single_token_rate < 0 || single_token_rate > 1) {
        throw ValidationError("SynthSpec: single_token_rate in [0,1]");
    }
}

namespace {

Span pick_span(int len, double single_token_rate, Rng& rng) {
    const int max_width = std::min(2, len);
    const int width = (max_width == 1 || rng.uniform() < single_token_rate) ? 1 : 2;
    const int start = rng.uniform_int(0, len - width);
    return Span{start, start + width - 1};
}

// Gold spans always point at the first occurrence of their token content,
// matching what load_jsonl reconstructs.
Span canonicalize(const std::vector<std::string>& tokens, Span s) {
    std::vector<std::string> needle(tokens.begin() + s.start, tokens.begin() + s.end + 1);
    const auto found = locate(tokens, needle);
    return found ? *found : s;
}

}  // namespace

Corpus synth_corpus(const SynthSpec& spec, Rng& rng) {
    spec.validate();
    Corpus c;
    init_reserved_vocab(c);
    for (int i = 0; i < spec.vocab_words; ++i) {
        intern_token(c, "w" + std::to_string(i), true);
    }
    for (int k = 0; k < spec.relation_count; ++k) {
        const std::string name = "R" + std::to_string(k);
        c.relations.push_back(name);
        c.relation_to_id.emplace(name, k);
    }
    const int K = spec.relation_count;
    const double weights[5] = {spec.normal_weight, spec.seo_weight, spec.epo_weight,
                               spec.soo_weight, spec.heavy_weight};
    double total_w = 0;
    for (double w : weights) total_w += w;

    for (std::size_t s = 0; s < spec.sentences; ++s) {
        const int len = rng.uniform_int(spec.len_min, spec.len_max);
        std::vector<std::string> toks(static_cast<std::size_t>(len));
        std::vector<int> ids(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) {
            const int w = rng.uniform_int(0, spec.vocab_words - 1);
            toks[static_cast<std::size_t>(i)] = "w" + std::to_string(w);
            ids[static_cast<std::size_t>(i)] = w + 2;  // after <pad>/<unk>
        }
        auto entity = [&]() { return canonicalize(toks, pick_span(len, spec.single_token_rate, rng)); };

        double roll = rng.uniform() * total_w;
        int pattern = 0;
        for (; pattern < 4; ++pattern) {
            if (roll < weights[pattern]) break;
            roll -= weights[pattern];
        }
        TripleSet triples;
        switch (pattern) {
            case 0: {  // independent triples
                const int q = rng.uniform_int(1, 4);
                for (int i = 0; i < q; ++i) {
                    triples.insert(Triple{entity(), rng.uniform_int(0, K - 1), entity()});
                }
                break;
            }
            case 1: {  // shared head entity
                const Span a = entity();
                triples.insert(Triple{a, rng.uniform_int(0, K - 1), entity()});
                triples.insert(Triple{a, rng.uniform_int(0, K - 1), entity()});
                break;
            }
            case 2: {  // same entity pair, several relations
                const Span a = entity(), b = entity();
                const int r1 = rng.uniform_int(0, K - 1);
                const int r2 = K > 1 ? (r1 + 1 + rng.uniform_int(0, K - 2)) % K : r1;
                triples.insert(Triple{a, r1, b});
                triples.insert(Triple{a, r2, b});
                break;
            }
            case 3: {  // head and tail coincide
                const Span a = entity();
                triples.insert(Triple{a, rng.uniform_int(0, K - 1), a});
                if (rng.uniform() < 0.5) {
                    triples.insert(Triple{entity(), rng.uniform_int(0, K - 1), entity()});
                }
                break;
            }
            default: {  // heavy: 6-8 planted triples
                const int q = rng.uniform_int(6, 8);
                for (int i = 0; i < q; ++i) {
                    triples.insert(Triple{entity(), rng.uniform_int(0, K - 1), entity()});
                }
                break;
            }
        }
        c.tokens.push_back(std::move(toks));
        c.token_ids.push_back(std::move(ids));
        c.gold.push_back(std::move(triples));
    }
    c.validate();
    return c;
}

std::string PatternTags::q_bucket() const {
    if (q >= 5) return "Q>=5";
    return "Q=" + std::to_string(q);
}

namespace {

bool spans_overlap(const Span& a, const Span& b) {
    return a.start <= b.end && b.start <= a.end;
}

}  // namespace

PatternTags classify_patterns(const TripleSet& triples, bool soo_strict_equality) {
    PatternTags tags;
    const auto& items = triples.items();
    tags.q = static_cast<int>(items.size());
    for (const Triple& t : items) {
        if (soo_strict_equality ? t.head == t.tail : spans_overlap(t.head, t.tail)) {
            tags.soo = true;
        }
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        for (std::size_t j = i + 1; j < items.size(); ++j) {
            const Triple& a = items[i];
            const Triple& b = items[j];
            const bool same_pair = (a.head == b.head && a.tail == b.tail) ||
                                   (a.head == b.tail && a.tail == b.head);
            if (same_pair) {
                tags.epo = true;
                continue;
            }
            const bool shares_one = a.head == b.head || a.head == b.tail || a.tail == b.head ||
                                    a.tail == b.tail;
            if (shares_one) tags.seo = true;
        }
    }
    return tags;
}

std::vector<PatternTags> pattern_split(const Corpus& corpus, bool soo_strict_equality) {
    std::vector<PatternTags> out;
    out.reserve(corpus.size());
    for (const TripleSet& t : corpus.gold) out.push_back(classify_patterns(t, soo_strict_equality));
    return out;
}

namespace {

long count_correct(const TripleSet& pred, const TripleSet& gold, MatchMode mode) {
    if (mode == MatchMode::exact) {
        long n = 0;
        for (const Triple& t : pred.items()) {
            if (gold.contains(t)) ++n;
        }
        return n;
    }
    // last_word: compare (head.end, relation, tail.end) as sets
    auto project = [](const TripleSet& ts) {
        std::vector<std::array<int, 3>> keys;
        for (const Triple& t : ts.items()) keys.push_back({t.head.end, t.relation, t.tail.end});
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        return keys;
    };
    const auto p = project(pred);
    const auto g = project(gold);
    long n = 0;
    for (const auto& k : p) {
        if (std::binary_search(g.begin(), g.end(), k)) ++n;
    }
    return n;
}

long projected_size(const TripleSet& ts, MatchMode mode) {
    if (mode == MatchMode::exact) return static_cast<long>(ts.size());
    std::vector<std::array<int, 3>> keys;
    for (const Triple& t : ts.items()) keys.push_back({t.head.end, t.relation, t.tail.end});
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return static_cast<long>(keys.size());
}

void add_counts(SplitScore& s, long correct, long predicted, long gold_count) {
    s.correct += correct;
    s.predicted += predicted;
    s.gold_count += gold_count;
}

}  // namespace

EvalReport evaluate(const std::vector<TripleSet>& predictions, const Corpus& gold, MatchMode mode,
                    bool soo_strict_equality) {
    if (predictions.size() != gold.size()) {
        throw ValidationError("evaluate: prediction/gold sentence counts differ (" +
                              std::to_string(predictions.size()) + " vs " +
                              std::to_string(gold.size()) + ")");
    }
    EvalReport report;
    for (const char* name : {"Normal", "SEO", "EPO", "SOO"}) report.by_pattern[name];
    for (const char* name : {"Q=0", "Q=1", "Q=2", "Q=3", "Q=4", "Q>=5"}) report.by_q[name];
    const auto tags = pattern_split(gold, soo_strict_equality);
    for (std::size_t s = 0; s < gold.size(); ++s) {
        const long correct = count_correct(predictions[s], gold.gold[s], mode);
        const long predicted = projected_size(predictions[s], mode);
        const long gold_n = projected_size(gold.gold[s], mode);
        add_counts(report.overall, correct, predicted, gold_n);
        const PatternTags& t = tags[s];
        if (t.normal()) add_counts(report.by_pattern["Normal"], correct, predicted, gold_n);
        if (t.seo) add_counts(report.by_pattern["SEO"], correct, predicted, gold_n);
        if (t.epo) add_counts(report.by_pattern["EPO"], correct, predicted, gold_n);
        if (t.soo) add_counts(report.by_pattern["SOO"], correct, predicted, gold_n);
        add_counts(report.by_q[t.q_bucket()], correct, predicted, gold_n);
    }
    return report;
}

std::string EvalReport::serialize() const {
    ordered_json doc;
    auto emit = [](const SplitScore& s) {
        ordered_json j;
        j["precision"] = s.precision();
        j["recall"] = s.recall();
        j["f1"] = s.f1();
        j["correct"] = s.correct;
        j["predicted"] = s.predicted;
        j["gold"] = s.gold_count;
        return j;
    };
    doc["overall"] = emit(overall);
    if (!by_pattern.empty()) {
        ordered_json patterns;
        for (const auto& [name, score] : by_pattern) patterns[name] = emit(score);
        doc["by_pattern"] = std::move(patterns);
    }
    if (!by_q.empty()) {
        ordered_json qs;
        for (const auto& [name, score] : by_q) qs[name] = emit(score);
        doc["by_q"] = std::move(qs);
    }
    return doc.dump(2) + "\n";
}

}  // namespace diffrte
