#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <vector>

#include "diffrte/errors.hpp"

namespace diffrte {

// Inclusive token span, 0-based.
struct Span {
    int start = 0;
    int end = 0;

    auto operator<=>(const Span&) const = default;
};

struct Triple {
    Span head;
    int relation = 0;
    Span tail;

    auto operator<=>(const Triple&) const = default;
};

// Sorted, duplicate-free set of triples for one sentence.
class TripleSet {
public:
    TripleSet() = default;
    explicit TripleSet(std::vector<Triple> triples);

    void insert(const Triple& t);
    const std::vector<Triple>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    bool contains(const Triple& t) const;

    bool operator==(const TripleSet&) const = default;

private:
    std::vector<Triple> items_;
};

// Five continuous coordinates in the scaled diffusion space.
struct Block {
    double up = 0.0;
    double down = 0.0;
    double left = 0.0;
    double right = 0.0;
    double level = 0.0;

    std::array<double, 5> coords() const { return {up, down, left, right, level}; }
    static Block from_coords(const std::array<double, 5>& c) {
        return Block{c[0], c[1], c[2], c[3], c[4]};
    }
};

// Affine map between index space and the centered diffusion range [-lambda, lambda].
struct ScaleSpec {
    double lambda = 1.0;
    int sentence_length = 1;  // L
    int relation_count = 1;   // K

    void validate() const;
    // index -> scaled coordinate; extent is L for edges, K for the level.
    double to_scaled(int index, int extent) const;
    // scaled coordinate -> clamped integer index (round half away from zero).
    int to_index(double coord, int extent) const;
};

struct DiscreteBlock {
    int up = 0;
    int down = 0;
    int left = 0;
    int right = 0;
    int level = 0;
};

// One block per triple: up/down from the head span, left/right from the tail
// span, level from the relation, all pushed through the affine scaling.
std::vector<Block> encode_blocks(const TripleSet& triples, const ScaleSpec& scale);

DiscreteBlock descale_to_indices(const Block& block, const ScaleSpec& scale);

// Parallel boundary emission: each block's vertical edges bound the head
// entity, horizontal edges the tail entity, and its depth selects the
// relation. Edge order is repaired (min/max) and the result is a set.
TripleSet pbes_decode(const std::vector<Block>& blocks, const ScaleSpec& scale);

}  // namespace diffrte
