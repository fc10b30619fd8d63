#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "diffrte/errors.hpp"

namespace diffrte {

// Dense row-major array of doubles. Rank 0 (scalar), 1 or 2 in practice.
// Values are plain data; autodiff wraps Tensor in ad::Var.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor full(std::size_t rows, std::size_t cols, double value);
    static Tensor identity(std::size_t n);
    static Tensor row_vector(std::vector<double> values);
    static Tensor column_vector(std::vector<double> values);
    static Tensor scalar(double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors; rank-1 tensors behave as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<double> row_span(std::size_t r);
    std::span<const double> row_span(std::size_t r) const;

    double item() const;

    bool all_finite() const;
    // Throws NumericError when a non-finite value is present.
    void require_finite(const char* what) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Plain-tensor math shared by the autodiff ops and the tests.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// out += a * b^T and out += a^T * b without materializing the transpose;
// backward-pass kernels for matmul.
void matmul_nt_accum(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_tn_accum(const Tensor& a, const Tensor& b, Tensor& out);
// Numerically stabilized softmax along `axis` (0 = down columns, 1 = along rows).
Tensor softmax(const Tensor& x, int axis);

// Deterministic random source. xoshiro256++ core, Box-Muller normals with no
// cached spare so the full state is the four words below. Identical seeds give
// identical sequences on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    // Independent stream derived from (seed, stream); used for per-sentence work.
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);    // [lo, hi)
    double normal();                         // standard normal
    std::size_t uniform_index(std::size_t n);  // [0, n)
    int uniform_int(int lo, int hi);           // inclusive bounds

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

private:
    std::array<std::uint64_t, 4> s_{};
};

}  // namespace diffrte
