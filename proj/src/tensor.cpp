#include "diffrte/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace diffrte {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_product(shape_)) {
        throw ValidationError("tensor data length does not match shape product");
    }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
    Tensor t({rows, cols});
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::column_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n, 1}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

std::size_t Tensor::rows() const {
    if (shape_.empty()) return 1;
    return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 1;
    return shape_.size() == 1 ? shape_[0] : shape_[shape_.size() - 1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

std::span<double> Tensor::row_span(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
}
std::span<const double> Tensor::row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
}

double Tensor::item() const {
    if (size() != 1) throw ValidationError("item() requires a single-element tensor");
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const char* what) const {
    if (!all_finite()) {
        throw NumericError(std::string("non-finite values in ") + what);
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), k2 = b.rows(), m = b.cols();
    if (k != k2) {
        throw ValidationError("matmul shape mismatch: " + std::to_string(n) + "x" +
                              std::to_string(k) + " * " + std::to_string(k2) + "x" +
                              std::to_string(m));
    }
    Tensor c({n, m});
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.data().data();
    // Four output rows per pass so each row of b is reused from cache.
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        double* c0 = cd + i * m;
        double* c1 = c0 + m;
        double* c2 = c1 + m;
        double* c3 = c2 + m;
        const double* a0 = ad + i * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        for (std::size_t p = 0; p < k; ++p) {
            const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            const double* bp = bd + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                const double bj = bp[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < n; ++i) {
        double* ci = cd + i * m;
        const double* ai = ad + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = bd + p * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    const std::size_t n = a.rows(), m = a.cols();
    Tensor t({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

void matmul_nt_accum(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
    if (b.cols() != m || out.rows() != n || out.cols() != k) {
        throw ValidationError("matmul_nt_accum: shape mismatch");
    }
    // One local transpose keeps the inner loops contiguous and wide.
    const Tensor bt = transpose(b);
    const double* ad = a.data().data();
    const double* btd = bt.data().data();
    double* od = out.data().data();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const double* a0 = ad + i * m;
        const double* a1 = a0 + m;
        const double* a2 = a1 + m;
        const double* a3 = a2 + m;
        double* o0 = od + i * k;
        double* o1 = o0 + k;
        double* o2 = o1 + k;
        double* o3 = o2 + k;
        for (std::size_t j = 0; j < m; ++j) {
            const double v0 = a0[j], v1 = a1[j], v2 = a2[j], v3 = a3[j];
            const double* btj = btd + j * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double bv = btj[p];
                o0[p] += v0 * bv;
                o1[p] += v1 * bv;
                o2[p] += v2 * bv;
                o3[p] += v3 * bv;
            }
        }
    }
    for (; i < n; ++i) {
        const double* ai = ad + i * m;
        double* oi = od + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double v = ai[j];
            const double* btj = btd + j * k;
            for (std::size_t p = 0; p < k; ++p) oi[p] += v * btj[p];
        }
    }
}

void matmul_tn_accum(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != n || out.rows() != k || out.cols() != m) {
        throw ValidationError("matmul_tn_accum: shape mismatch");
    }
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    // rank-1 accumulation, four source rows per sweep of out
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const double* a0 = ad + i * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        const double* b0 = bd + i * m;
        const double* b1 = b0 + m;
        const double* b2 = b1 + m;
        const double* b3 = b2 + m;
        for (std::size_t p = 0; p < k; ++p) {
            const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            double* op = od + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                op[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
            }
        }
    }
    for (; i < n; ++i) {
        const double* ai = ad + i * k;
        const double* bi = bd + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double v = ai[p];
            double* op = od + p * m;
            for (std::size_t j = 0; j < m; ++j) op[j] += v * bi[j];
        }
    }
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis != 0 && axis != 1) throw ValidationError("softmax axis must be 0 or 1");
    if (axis == 0) return transpose(softmax(transpose(x), 1));
    const std::size_t n = x.rows(), m = x.cols();
    if (m == 0) throw ValidationError("softmax over empty axis");
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row_span(i);
        double mx = xi[0];
        for (double v : xi) mx = std::max(mx, v);
        double sum = 0.0;
        auto oi = out.row_span(i);
        for (std::size_t j = 0; j < m; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        for (std::size_t j = 0; j < m; ++j) oi[j] /= sum;
    }
    return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t sm = seed;
    const std::uint64_t mixed = splitmix64(sm) ^ (0xA0761D6478BD642FULL * (stream + 1));
    return Rng(mixed);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    // 53-bit mantissa construction, in [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Box-Muller, cosine branch only: state stays exactly the xoshiro words.
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw ValidationError("uniform_index: n must be positive");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::size_t>(v % n);
}

int Rng::uniform_int(int lo, int hi) {
    if (hi < lo) throw ValidationError("uniform_int: empty range");
    const std::size_t span = static_cast<std::size_t>(hi - lo) + 1;
    return lo + static_cast<int>(uniform_index(span));
}

}  // namespace diffrte
