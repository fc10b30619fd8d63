#include "diffrte/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace diffrte::ad {

void Node::ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
}

void Node::accumulate(const Tensor& g) {
    ensure_grad();
    double* dst = grad.data().data();
    const double* src = g.data().data();
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
}

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        throw ValidationError(std::string(op) + ": shape mismatch");
    }
}

}  // namespace

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::param(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor(node_->value.shape());
}

Var matmul(const Var& a, const Var& b) {
    Tensor out = diffrte::matmul(a.value(), b.value());
    auto an = a.node();
    auto bn = b.node();
    return Var(make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        // dA += dC * B^T, dB += A^T * dC, accumulated in place
        if (an->requires_grad) {
            an->ensure_grad();
            diffrte::matmul_nt_accum(n.grad, bn->value, an->grad);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            diffrte::matmul_tn_accum(an->value, n.grad, bn->grad);
        }
    }));
}

Var transpose(const Var& a) {
    auto an = a.node();
    return Var(make_node(diffrte::transpose(a.value()), {an},
                         [an](Node& n) { an->accumulate(diffrte::transpose(n.grad)); }));
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    const double* bd = b.value().data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) od[i] += bd[i];
    auto an = a.node();
    auto bn = b.node();
    return Var(make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->accumulate(n.grad);
        if (bn->requires_grad) bn->accumulate(n.grad);
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    const double* bd = b.value().data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) od[i] -= bd[i];
    auto an = a.node();
    auto bn = b.node();
    return Var(make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->accumulate(n.grad);
        if (bn->requires_grad) {
            Tensor neg = n.grad;
            for (double& v : neg.data()) v = -v;
            bn->accumulate(neg);
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    const double* bd = b.value().data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) od[i] *= bd[i];
    auto an = a.node();
    auto bn = b.node();
    return Var(make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) {
            Tensor g = n.grad;
            const double* other = bn->value.data().data();
            double* gd = g.data().data();
            for (std::size_t i = 0; i < g.size(); ++i) gd[i] *= other[i];
            an->accumulate(g);
        }
        if (bn->requires_grad) {
            Tensor g = n.grad;
            const double* other = an->value.data().data();
            double* gd = g.data().data();
            for (std::size_t i = 0; i < g.size(); ++i) gd[i] *= other[i];
            bn->accumulate(g);
        }
    }));
}

Var add_rowvec(const Var& a, const Var& v) {
    const std::size_t rows = a.rows(), cols = a.cols();
    if (v.rows() != 1 || v.cols() != cols) {
        throw ValidationError("add_rowvec: vector must be 1 x cols");
    }
    Tensor out = a.value();
    const double* vd = v.value().data().data();
    for (std::size_t i = 0; i < rows; ++i) {
        double* oi = out.data().data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) oi[j] += vd[j];
    }
    auto an = a.node();
    auto vn = v.node();
    return Var(make_node(std::move(out), {an, vn}, [an, vn, rows, cols](Node& n) {
        if (an->requires_grad) an->accumulate(n.grad);
        if (vn->requires_grad) {
            Tensor g({1, cols});
            for (std::size_t i = 0; i < rows; ++i) {
                const double* gi = n.grad.data().data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) g[j] += gi[j];
            }
            vn->accumulate(g);
        }
    }));
}

Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= c;
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, c](Node& n) {
        Tensor g = n.grad;
        for (double& v : g.data()) v *= c;
        an->accumulate(g);
    }));
}

Var tanh(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::tanh(v);
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an](Node& n) {
        Tensor g = n.grad;
        const double* y = n.value.data().data();
        double* gd = g.data().data();
        for (std::size_t i = 0; i < g.size(); ++i) gd[i] *= 1.0 - y[i] * y[i];
        an->accumulate(g);
    }));
}

Var softmax_rows(const Var& a) {
    Tensor out = diffrte::softmax(a.value(), 1);
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an](Node& n) {
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        Tensor g({rows, cols});
        for (std::size_t i = 0; i < rows; ++i) {
            const double* y = n.value.data().data() + i * cols;
            const double* dy = n.grad.data().data() + i * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
            double* gi = g.data().data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gi[j] = y[j] * (dy[j] - dot);
        }
        an->accumulate(g);
    }));
}

Var log_floor(const Var& a, double floor_value) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::log(std::max(v, floor_value));
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, floor_value](Node& n) {
        Tensor g = n.grad;
        const double* x = an->value.data().data();
        double* gd = g.data().data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            gd[i] = x[i] > floor_value ? gd[i] / x[i] : 0.0;
        }
        an->accumulate(g);
    }));
}

Var maximum(const Var& a, const Var& b) {
    check_same_shape(a, b, "maximum");
    Tensor out = a.value();
    const double* bd = b.value().data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) od[i] = std::max(od[i], bd[i]);
    auto an = a.node();
    auto bn = b.node();
    // Ties route the gradient to the first operand.
    return Var(make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        const double* av = an->value.data().data();
        const double* bv = bn->value.data().data();
        if (an->requires_grad) {
            Tensor g = n.grad;
            double* gd = g.data().data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (av[i] < bv[i]) gd[i] = 0.0;
            }
            an->accumulate(g);
        }
        if (bn->requires_grad) {
            Tensor g = n.grad;
            double* gd = g.data().data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (av[i] >= bv[i]) gd[i] = 0.0;
            }
            bn->accumulate(g);
        }
    }));
}

Var row(const Var& a, std::size_t i) { return gather_rows(a, {i}); }

Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
    const std::size_t cols = a.cols();
    Tensor out({idx.size(), cols});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= a.rows()) throw ValidationError("gather_rows: index out of range");
        auto src = a.value().row_span(idx[r]);
        std::copy(src.begin(), src.end(), out.row_span(r).begin());
    }
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, idx = std::move(idx), cols](Node& n) {
        an->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const double* g = n.grad.data().data() + r * cols;
            double* dst = an->grad.data().data() + idx[r] * cols;
            for (std::size_t j = 0; j < cols; ++j) dst[j] += g[j];
        }
    }));
}

Var mean_rows(const Var& a, std::vector<std::size_t> idx) {
    if (idx.empty()) throw ValidationError("mean_rows: empty index set");
    const std::size_t cols = a.cols();
    Tensor out({1, cols});
    for (std::size_t r : idx) {
        if (r >= a.rows()) throw ValidationError("mean_rows: index out of range");
        auto src = a.value().row_span(r);
        for (std::size_t j = 0; j < cols; ++j) out[j] += src[j];
    }
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (double& v : out.data()) v *= inv;
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, idx = std::move(idx), cols, inv](Node& n) {
        an->ensure_grad();
        for (std::size_t r : idx) {
            double* dst = an->grad.data().data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) dst[j] += n.grad[j] * inv;
        }
    }));
}

Var concat_cols(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) throw ValidationError("concat_cols: row count mismatch");
    const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
    Tensor out({rows, ca + cb});
    for (std::size_t i = 0; i < rows; ++i) {
        auto dst = out.row_span(i);
        auto sa = a.value().row_span(i);
        auto sb = b.value().row_span(i);
        std::copy(sa.begin(), sa.end(), dst.begin());
        std::copy(sb.begin(), sb.end(), dst.begin() + static_cast<std::ptrdiff_t>(ca));
    }
    auto an = a.node();
    auto bn = b.node();
    return Var(make_node(std::move(out), {an, bn}, [an, bn, rows, ca, cb](Node& n) {
        if (an->requires_grad) {
            Tensor g({rows, ca});
            for (std::size_t i = 0; i < rows; ++i) {
                const double* src = n.grad.data().data() + i * (ca + cb);
                std::copy(src, src + ca, g.row_span(i).begin());
            }
            an->accumulate(g);
        }
        if (bn->requires_grad) {
            Tensor g({rows, cb});
            for (std::size_t i = 0; i < rows; ++i) {
                const double* src = n.grad.data().data() + i * (ca + cb) + ca;
                std::copy(src, src + cb, g.row_span(i).begin());
            }
            bn->accumulate(g);
        }
    }));
}

Var vstack(std::span<const Var> rows) {
    if (rows.empty()) throw ValidationError("vstack: no rows");
    const std::size_t cols = rows[0].cols();
    std::size_t total = 0;
    for (const Var& r : rows) {
        if (r.cols() != cols) throw ValidationError("vstack: column count mismatch");
        total += r.rows();
    }
    Tensor out({total, cols});
    std::vector<NodePtr> parents;
    parents.reserve(rows.size());
    std::size_t at = 0;
    for (const Var& r : rows) {
        const auto& v = r.value();
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
        at += v.size();
        parents.push_back(r.node());
    }
    return Var(make_node(std::move(out), std::move(parents), [](Node& n) {
        std::size_t at = 0;
        for (const auto& p : n.parents) {
            const std::size_t len = p->value.size();
            if (p->requires_grad) {
                Tensor g(p->value.shape());
                std::copy(n.grad.data().begin() + static_cast<std::ptrdiff_t>(at),
                          n.grad.data().begin() + static_cast<std::ptrdiff_t>(at + len),
                          g.data().begin());
                p->accumulate(g);
            }
            at += len;
        }
    }));
}

Var pad_cols(const Var& a, std::size_t total_cols) {
    const std::size_t rows = a.rows(), cols = a.cols();
    if (total_cols < cols) throw ValidationError("pad_cols: target narrower than input");
    if (total_cols == cols) return a;
    Tensor out({rows, total_cols});
    for (std::size_t i = 0; i < rows; ++i) {
        auto src = a.value().row_span(i);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, rows, cols, total_cols](Node& n) {
        Tensor g({rows, cols});
        for (std::size_t i = 0; i < rows; ++i) {
            const double* src = n.grad.data().data() + i * total_cols;
            std::copy(src, src + cols, g.row_span(i).begin());
        }
        an->accumulate(g);
    }));
}

Var scale_rows(const Var& a, const Var& s) {
    const std::size_t rows = a.rows(), cols = a.cols();
    if (s.rows() != rows || s.cols() != 1) {
        throw ValidationError("scale_rows: scaler must be rows x 1");
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < rows; ++i) {
        const double w = s.value()[i];
        double* oi = out.data().data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) oi[j] *= w;
    }
    auto an = a.node();
    auto sn = s.node();
    return Var(make_node(std::move(out), {an, sn}, [an, sn, rows, cols](Node& n) {
        if (an->requires_grad) {
            Tensor g = n.grad;
            for (std::size_t i = 0; i < rows; ++i) {
                const double w = sn->value[i];
                double* gi = g.data().data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) gi[j] *= w;
            }
            an->accumulate(g);
        }
        if (sn->requires_grad) {
            Tensor g({rows, 1});
            for (std::size_t i = 0; i < rows; ++i) {
                const double* gi = n.grad.data().data() + i * cols;
                const double* ai = an->value.data().data() + i * cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += gi[j] * ai[j];
                g[i] = dot;
            }
            sn->accumulate(g);
        }
    }));
}

Var reshape_row(const Var& a, std::size_t i, std::size_t r, std::size_t c) {
    if (i >= a.rows()) throw ValidationError("reshape_row: row out of range");
    if (r * c != a.cols()) throw ValidationError("reshape_row: size mismatch");
    auto src = a.value().row_span(i);
    Tensor out({r, c}, std::vector<double>(src.begin(), src.end()));
    auto an = a.node();
    const std::size_t cols = a.cols();
    return Var(make_node(std::move(out), {an}, [an, i, cols](Node& n) {
        an->ensure_grad();
        double* dst = an->grad.data().data() + i * cols;
        const double* g = n.grad.data().data();
        for (std::size_t j = 0; j < cols; ++j) dst[j] += g[j];
    }));
}

Var reshape(const Var& a, std::size_t r, std::size_t c) {
    if (r * c != a.value().size()) throw ValidationError("reshape: element count mismatch");
    Tensor out({r, c}, std::vector<double>(a.value().data().begin(), a.value().data().end()));
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an](Node& n) {
        Tensor g(an->value.shape(),
                 std::vector<double>(n.grad.data().begin(), n.grad.data().end()));
        an->accumulate(g);
    }));
}

Var split_rows_transpose(const Var& a, std::size_t inner_rows, std::size_t inner_cols) {
    const std::size_t n = a.rows();
    if (inner_rows * inner_cols != a.cols()) {
        throw ValidationError("split_rows_transpose: inner dims do not cover the row width");
    }
    Tensor out({n * inner_cols, inner_rows});
    const double* src = a.value().data().data();
    double* dst = out.data().data();
    for (std::size_t b = 0; b < n; ++b) {
        const double* s = src + b * inner_rows * inner_cols;
        double* d = dst + b * inner_cols * inner_rows;
        for (std::size_t r = 0; r < inner_rows; ++r)
            for (std::size_t c = 0; c < inner_cols; ++c) d[c * inner_rows + r] = s[r * inner_cols + c];
    }
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, n, inner_rows, inner_cols](Node& node) {
        Tensor g({n, inner_rows * inner_cols});
        const double* gs = node.grad.data().data();
        double* gd = g.data().data();
        for (std::size_t b = 0; b < n; ++b) {
            const double* s = gs + b * inner_cols * inner_rows;
            double* d = gd + b * inner_rows * inner_cols;
            for (std::size_t c = 0; c < inner_cols; ++c)
                for (std::size_t r = 0; r < inner_rows; ++r) d[r * inner_cols + c] = s[c * inner_rows + r];
        }
        an->accumulate(g);
    }));
}

Var add_tiled_rows(const Var& a, const Var& tile, std::size_t repeats) {
    const std::size_t tile_rows = tile.rows(), cols = a.cols();
    if (tile.cols() != cols || repeats * tile_rows != a.rows()) {
        throw ValidationError("add_tiled_rows: shape mismatch");
    }
    Tensor out = a.value();
    const double* td = tile.value().data().data();
    for (std::size_t n = 0; n < repeats; ++n) {
        double* block = out.data().data() + n * tile_rows * cols;
        for (std::size_t i = 0; i < tile_rows * cols; ++i) block[i] += td[i];
    }
    auto an = a.node();
    auto tn = tile.node();
    return Var(make_node(std::move(out), {an, tn}, [an, tn, repeats, tile_rows, cols](Node& n) {
        if (an->requires_grad) an->accumulate(n.grad);
        if (tn->requires_grad) {
            Tensor g({tile_rows, cols});
            double* gd = g.data().data();
            const double* src = n.grad.data().data();
            for (std::size_t b = 0; b < repeats; ++b) {
                const double* block = src + b * tile_rows * cols;
                for (std::size_t i = 0; i < tile_rows * cols; ++i) gd[i] += block[i];
            }
            tn->accumulate(g);
        }
    }));
}

Var add_block_rows(const Var& a, const Var& rows, std::size_t block_len) {
    const std::size_t n = rows.rows(), cols = a.cols();
    if (rows.cols() != cols || n * block_len != a.rows()) {
        throw ValidationError("add_block_rows: shape mismatch");
    }
    Tensor out = a.value();
    for (std::size_t b = 0; b < n; ++b) {
        const double* r = rows.value().data().data() + b * cols;
        double* block = out.data().data() + b * block_len * cols;
        for (std::size_t l = 0; l < block_len; ++l)
            for (std::size_t j = 0; j < cols; ++j) block[l * cols + j] += r[j];
    }
    auto an = a.node();
    auto rn = rows.node();
    return Var(make_node(std::move(out), {an, rn}, [an, rn, n, block_len, cols](Node& node) {
        if (an->requires_grad) an->accumulate(node.grad);
        if (rn->requires_grad) {
            Tensor g({n, cols});
            const double* src = node.grad.data().data();
            double* gd = g.data().data();
            for (std::size_t b = 0; b < n; ++b) {
                const double* block = src + b * block_len * cols;
                for (std::size_t l = 0; l < block_len; ++l)
                    for (std::size_t j = 0; j < cols; ++j) gd[b * cols + j] += block[l * cols + j];
            }
            rn->accumulate(g);
        }
    }));
}

Var gather_entries(const Var& a, std::vector<std::size_t> col_per_row) {
    const std::size_t rows = a.rows(), cols = a.cols();
    if (col_per_row.size() != rows) throw ValidationError("gather_entries: need one column per row");
    Tensor out({rows, 1});
    for (std::size_t i = 0; i < rows; ++i) {
        if (col_per_row[i] >= cols) throw ValidationError("gather_entries: column out of range");
        out[i] = a.value().at(i, col_per_row[i]);
    }
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, idx = std::move(col_per_row), cols](Node& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            an->grad.data()[i * cols + idx[i]] += n.grad[i];
        }
    }));
}

Var sum_all(const Var& a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    auto an = a.node();
    return Var(make_node(Tensor::scalar(total), {an}, [an](Node& n) {
        Tensor g(an->value.shape());
        const double s = n.grad[0];
        for (double& v : g.data()) v = s;
        an->accumulate(g);
    }));
}

Var dropout(const Var& a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw ValidationError("dropout: rate must be below 1");
    Tensor mask(a.value().shape());
    const double keep = 1.0 - rate;
    for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    Tensor out = a.value();
    double* od = out.data().data();
    const double* md = mask.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) od[i] *= md[i];
    auto an = a.node();
    return Var(make_node(std::move(out), {an}, [an, mask = std::move(mask)](Node& n) {
        Tensor g = n.grad;
        const double* md = mask.data().data();
        double* gd = g.data().data();
        for (std::size_t i = 0; i < g.size(); ++i) gd[i] *= md[i];
        an->accumulate(g);
    }));
}

void backward(const Var& loss) {
    if (!loss.valid()) throw ValidationError("backward: empty loss");
    if (loss.value().size() != 1) throw ValidationError("backward: loss must be scalar");
    if (!loss.requires_grad()) return;

    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() == n->value.size()) n->backprop(*n);
    }
}

std::vector<Tensor> grad(const Var& loss, std::span<const Var> params) {
    for (const Var& p : params) p.node()->grad = Tensor(p.value().shape());
    backward(loss);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Var& p : params) {
        if (p.grad().size() != p.value().size()) {
            out.push_back(Tensor(p.value().shape()));
        } else {
            out.push_back(p.grad());
        }
    }
    return out;
}

}  // namespace diffrte::ad
