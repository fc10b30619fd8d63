#include "diffrte/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace diffrte {

TripleSet::TripleSet(std::vector<Triple> triples) {
    std::sort(triples.begin(), triples.end());
    triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
    items_ = std::move(triples);
}

void TripleSet::insert(const Triple& t) {
    auto it = std::lower_bound(items_.begin(), items_.end(), t);
    if (it == items_.end() || *it != t) items_.insert(it, t);
}

bool TripleSet::contains(const Triple& t) const {
    return std::binary_search(items_.begin(), items_.end(), t);
}

void ScaleSpec::validate() const {
    if (!(lambda > 0.0)) throw ValidationError("ScaleSpec: lambda must be positive");
    if (sentence_length < 1) throw ValidationError("ScaleSpec: sentence_length must be >= 1");
    if (relation_count < 1) throw ValidationError("ScaleSpec: relation_count must be >= 1");
}

double ScaleSpec::to_scaled(int index, int extent) const {
    const int divisor = std::max(extent - 1, 1);
    return (static_cast<double>(index) / divisor) * 2.0 * lambda - lambda;
}

int ScaleSpec::to_index(double coord, int extent) const {
    const double pos = (coord + lambda) / (2.0 * lambda) * (extent - 1);
    // std::round rounds halves away from zero, the declared tie rule.
    const double r = std::round(pos);
    const double clamped = std::clamp(r, 0.0, static_cast<double>(extent - 1));
    return static_cast<int>(clamped);
}

std::vector<Block> encode_blocks(const TripleSet& triples, const ScaleSpec& scale) {
    scale.validate();
    const int L = scale.sentence_length;
    const int K = scale.relation_count;
    std::vector<Block> out;
    out.reserve(triples.size());
    for (const Triple& t : triples.items()) {
        const bool span_ok = t.head.start >= 0 && t.head.start <= t.head.end &&
                             t.head.end < L && t.tail.start >= 0 &&
                             t.tail.start <= t.tail.end && t.tail.end < L;
        const bool rel_ok = t.relation >= 0 && t.relation < K;
        if (!span_ok || !rel_ok) {
            throw ValidationError(
                "encode_blocks: triple out of range (head [" + std::to_string(t.head.start) +
                "," + std::to_string(t.head.end) + "], relation " + std::to_string(t.relation) +
                ", tail [" + std::to_string(t.tail.start) + "," + std::to_string(t.tail.end) +
                "]) for L=" + std::to_string(L) + ", K=" + std::to_string(K));
        }
        Block b;
        b.up = scale.to_scaled(t.head.start, L);
        b.down = scale.to_scaled(t.head.end, L);
        b.left = scale.to_scaled(t.tail.start, L);
        b.right = scale.to_scaled(t.tail.end, L);
        b.level = scale.to_scaled(t.relation, K);
        out.push_back(b);
    }
    return out;
}

DiscreteBlock descale_to_indices(const Block& block, const ScaleSpec& scale) {
    scale.validate();
    DiscreteBlock d;
    d.up = scale.to_index(block.up, scale.sentence_length);
    d.down = scale.to_index(block.down, scale.sentence_length);
    d.left = scale.to_index(block.left, scale.sentence_length);
    d.right = scale.to_index(block.right, scale.sentence_length);
    d.level = scale.to_index(block.level, scale.relation_count);
    return d;
}

TripleSet pbes_decode(const std::vector<Block>& blocks, const ScaleSpec& scale) {
    TripleSet out;
    for (const Block& b : blocks) {
        const DiscreteBlock d = descale_to_indices(b, scale);
        Triple t;
        t.head = Span{std::min(d.up, d.down), std::max(d.up, d.down)};
        t.tail = Span{std::min(d.left, d.right), std::max(d.left, d.right)};
        t.relation = d.level;
        out.insert(t);
    }
    return out;
}

}  // namespace diffrte
