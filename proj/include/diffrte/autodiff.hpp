#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "diffrte/tensor.hpp"

namespace diffrte::ad {

// Reverse-mode accumulation over a recorded graph. Nodes are owned by
// shared_ptr from their consumers, so a step's graph is released as soon as
// the loss handle goes out of scope; parameter leaves survive because the
// model keeps a handle to them.
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    // Distributes this node's grad into its parents' grads.
    std::function<void(Node&)> backprop;

    void ensure_grad();
    void accumulate(const Tensor& g);
};

// Value-semantic handle to a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var constant(Tensor value);
    static Var param(Tensor value);  // leaf with requires_grad

    bool valid() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad();

    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Fixed op set (matmul, elementwise, tanh, softmax, log, pooling,
// concatenation, lookup/gather, recurrent step is composed from these).
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& v);  // v is 1 x cols, broadcast down rows
Var scale(const Var& a, double c);
Var tanh(const Var& a);
Var softmax_rows(const Var& a);
// log(max(x, floor)); entries at or below the floor get zero gradient.
Var log_floor(const Var& a, double floor_value);
Var maximum(const Var& a, const Var& b);  // elementwise
Var row(const Var& a, std::size_t i);     // (1 x cols)
Var gather_rows(const Var& a, std::vector<std::size_t> idx);
Var mean_rows(const Var& a, std::vector<std::size_t> idx);  // (1 x cols)
Var concat_cols(const Var& a, const Var& b);
Var vstack(std::span<const Var> rows);
Var pad_cols(const Var& a, std::size_t total_cols);  // zero columns on the right
Var scale_rows(const Var& a, const Var& s);          // s is (rows x 1)
Var reshape_row(const Var& a, std::size_t i, std::size_t r, std::size_t c);
Var reshape(const Var& a, std::size_t r, std::size_t c);  // same element count
// Each row of `a` holds an (inner_rows x inner_cols) matrix; emits them
// transposed and stacked: (N, r*c) -> (N*c, r).
Var split_rows_transpose(const Var& a, std::size_t inner_rows, std::size_t inner_cols);
// a has repeats * tile.rows() rows; adds tile cyclically: row (n*T + l) += tile[l].
Var add_tiled_rows(const Var& a, const Var& tile, std::size_t repeats);
// a has rows.rows() * block_len rows; row (n*B + l) += rows[n].
Var add_block_rows(const Var& a, const Var& rows, std::size_t block_len);
Var gather_entries(const Var& a, std::vector<std::size_t> col_per_row);  // (rows x 1)
Var sum_all(const Var& a);  // (1 x 1)
// Inverted dropout; identity when rate == 0. Mask drawn from rng.
Var dropout(const Var& a, double rate, Rng& rng);

// Seeds the scalar loss with grad 1 and runs reverse accumulation.
void backward(const Var& loss);

// Runs backward and returns a copy of each parameter's gradient (zero tensors
// for parameters the loss does not reach).
std::vector<Tensor> grad(const Var& loss, std::span<const Var> params);

}  // namespace diffrte::ad
