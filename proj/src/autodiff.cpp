#include "dmsp/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dmsp/error.hpp"

namespace dmsp::ad {

int ParamStore::add_affine(std::string name, int out, int in) {
    Block b;
    b.name = std::move(name);
    b.kind = BlockKind::affine;
    b.out = out;
    b.in = in;
    b.offset = data_.size();
    b.size = static_cast<std::size_t>(out) * static_cast<std::size_t>(in) + static_cast<std::size_t>(out);
    data_.resize(b.offset + b.size, 0.0);
    blocks_.push_back(std::move(b));
    return static_cast<int>(blocks_.size()) - 1;
}

int ParamStore::add_vector(std::string name, int length) {
    Block b;
    b.name = std::move(name);
    b.kind = BlockKind::vector;
    b.out = length;
    b.offset = data_.size();
    b.size = static_cast<std::size_t>(length);
    data_.resize(b.offset + b.size, 0.0);
    blocks_.push_back(std::move(b));
    return static_cast<int>(blocks_.size()) - 1;
}

int ParamStore::block_id(const std::string& name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        if (blocks_[i].name == name) return static_cast<int>(i);
    return -1;
}

void Tape::reset() {
    nodes_.clear();
    val_.clear();
    grad_.clear();
    pool_.clear();
}

int Tape::push(Op op, int len, int a, int b, int aux, int count) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.aux = aux;
    n.count = count;
    n.off = val_.size();
    n.len = len;
    val_.resize(n.off + static_cast<std::size_t>(len), 0.0);
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(std::span<const double> v) {
    const int id = push(Op::leaf, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), slot(nodes_.back()));
    return id;
}

int Tape::leaf1(double v) { return leaf(std::span<const double>(&v, 1)); }

int Tape::param_vector(int block_id) {
    const auto vals = params_->values(block_id);
    const int id = push(Op::param, static_cast<int>(vals.size()), -1, -1, block_id);
    std::copy(vals.begin(), vals.end(), slot(nodes_.back()));
    return id;
}

int Tape::affine(int x, int block_id) {
    const auto& blk = params_->block(block_id);
    const auto& xn = nodes_[static_cast<std::size_t>(x)];
    if (xn.len != blk.in) throw usage_error("dimension error", "affine input width mismatch");
    const int id = push(Op::affine, blk.out, x, -1, block_id);
    const double* w = params_->data().data() + blk.offset;
    const double* bias = w + static_cast<std::size_t>(blk.out) * static_cast<std::size_t>(blk.in);
    const double* xv = val_.data() + nodes_[static_cast<std::size_t>(x)].off;
    double* out = slot(nodes_.back());
    for (int r = 0; r < blk.out; ++r) {
        double acc = bias[r];
        const double* row = w + static_cast<std::size_t>(r) * static_cast<std::size_t>(blk.in);
        for (int c = 0; c < blk.in; ++c) acc += row[c] * xv[c];
        out[r] = acc;
    }
    return id;
}

int Tape::tanh(int x) {
    const int len = nodes_[static_cast<std::size_t>(x)].len;
    const int id = push(Op::tanh_, len, x);
    const double* xv = val_.data() + nodes_[static_cast<std::size_t>(x)].off;
    double* out = slot(nodes_.back());
    for (int i = 0; i < len; ++i) out[i] = std::tanh(xv[i]);
    return id;
}

int Tape::concat(int x, int y) {
    const auto& xn = nodes_[static_cast<std::size_t>(x)];
    const auto& yn = nodes_[static_cast<std::size_t>(y)];
    const int id = push(Op::concat, xn.len + yn.len, x, y);
    double* out = slot(nodes_.back());
    std::copy_n(val_.data() + nodes_[static_cast<std::size_t>(x)].off,
                nodes_[static_cast<std::size_t>(x)].len, out);
    std::copy_n(val_.data() + nodes_[static_cast<std::size_t>(y)].off,
                nodes_[static_cast<std::size_t>(y)].len,
                out + nodes_[static_cast<std::size_t>(x)].len);
    return id;
}

int Tape::mean(std::span<const int> xs) {
    if (xs.empty()) throw usage_error("dimension error", "mean of nothing");
    const int len = nodes_[static_cast<std::size_t>(xs[0])].len;
    for (int x : xs)
        if (nodes_[static_cast<std::size_t>(x)].len != len)
            throw usage_error("dimension error", "mean over mixed widths");
    const int pool_off = static_cast<int>(pool_.size());
    pool_.insert(pool_.end(), xs.begin(), xs.end());
    const int id = push(Op::mean, len, -1, -1, pool_off, static_cast<int>(xs.size()));
    double* out = slot(nodes_.back());
    for (int x : xs) {
        const double* xv = val_.data() + nodes_[static_cast<std::size_t>(x)].off;
        for (int i = 0; i < len; ++i) out[i] += xv[i];
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (int i = 0; i < len; ++i) out[i] *= inv;
    return id;
}

int Tape::stack(std::span<const int> scalars) {
    for (int x : scalars)
        if (nodes_[static_cast<std::size_t>(x)].len != 1)
            throw usage_error("dimension error", "stack expects scalars");
    const int pool_off = static_cast<int>(pool_.size());
    pool_.insert(pool_.end(), scalars.begin(), scalars.end());
    const int id = push(Op::stack, static_cast<int>(scalars.size()), -1, -1, pool_off,
                        static_cast<int>(scalars.size()));
    double* out = slot(nodes_.back());
    for (std::size_t i = 0; i < scalars.size(); ++i)
        out[i] = val_[nodes_[static_cast<std::size_t>(scalars[i])].off];
    return id;
}

int Tape::select(int x, std::span<const int> indices) {
    const auto& xn = nodes_[static_cast<std::size_t>(x)];
    for (int i : indices)
        if (i < 0 || i >= xn.len) throw usage_error("dimension error", "select index out of range");
    const int pool_off = static_cast<int>(pool_.size());
    pool_.insert(pool_.end(), indices.begin(), indices.end());
    const int id = push(Op::select, static_cast<int>(indices.size()), x, -1, pool_off,
                        static_cast<int>(indices.size()));
    const double* xv = val_.data() + nodes_[static_cast<std::size_t>(x)].off;
    double* out = slot(nodes_.back());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = xv[indices[i]];
    return id;
}

int Tape::softmax(int x) {
    const int len = nodes_[static_cast<std::size_t>(x)].len;
    const int id = push(Op::softmax, len, x);
    const double* xv = val_.data() + nodes_[static_cast<std::size_t>(x)].off;
    double* out = slot(nodes_.back());
    double mx = xv[0];
    for (int i = 1; i < len; ++i) mx = std::max(mx, xv[i]);
    double sum = 0.0;
    for (int i = 0; i < len; ++i) {
        out[i] = std::exp(xv[i] - mx);
        sum += out[i];
    }
    for (int i = 0; i < len; ++i) out[i] /= sum;
    return id;
}

int Tape::dot(int x, int y) {
    const auto& xn = nodes_[static_cast<std::size_t>(x)];
    const auto& yn = nodes_[static_cast<std::size_t>(y)];
    if (xn.len != yn.len) throw usage_error("dimension error", "dot length mismatch");
    const int id = push(Op::dot, 1, x, y);
    const double* xv = val_.data() + nodes_[static_cast<std::size_t>(x)].off;
    const double* yv = val_.data() + nodes_[static_cast<std::size_t>(y)].off;
    double acc = 0.0;
    for (int i = 0; i < nodes_[static_cast<std::size_t>(x)].len; ++i) acc += xv[i] * yv[i];
    *slot(nodes_.back()) = acc;
    return id;
}

int Tape::pick(int x, int index) {
    const auto& xn = nodes_[static_cast<std::size_t>(x)];
    if (index < 0 || index >= xn.len) throw usage_error("dimension error", "pick out of range");
    const int id = push(Op::pick, 1, x, -1, index);
    *slot(nodes_.back()) = val_[nodes_[static_cast<std::size_t>(x)].off + static_cast<std::size_t>(index)];
    return id;
}

int Tape::sub(int x, int y) {
    const int id = push(Op::sub, 1, x, y);
    *slot(nodes_.back()) = val_[nodes_[static_cast<std::size_t>(x)].off] -
                           val_[nodes_[static_cast<std::size_t>(y)].off];
    return id;
}

int Tape::mul(int x, int y) {
    const int id = push(Op::mul, 1, x, y);
    *slot(nodes_.back()) = val_[nodes_[static_cast<std::size_t>(x)].off] *
                           val_[nodes_[static_cast<std::size_t>(y)].off];
    return id;
}

int Tape::square(int x) {
    const int id = push(Op::square, 1, x);
    const double v = val_[nodes_[static_cast<std::size_t>(x)].off];
    *slot(nodes_.back()) = v * v;
    return id;
}

void Tape::backward(int root, std::span<double> param_grad) {
    if (param_grad.size() != params_->size())
        throw usage_error("dimension error", "gradient buffer size mismatch");
    if (nodes_[static_cast<std::size_t>(root)].len != 1)
        throw usage_error("dimension error", "backward root must be scalar");

    grad_.assign(val_.size(), 0.0);
    grad_[nodes_[static_cast<std::size_t>(root)].off] = 1.0;

    for (int idx = root; idx >= 0; --idx) {
        const Node& n = nodes_[static_cast<std::size_t>(idx)];
        const double* g = grad_.data() + n.off;
        bool any = false;
        for (int i = 0; i < n.len; ++i)
            if (g[i] != 0.0) { any = true; break; }
        if (!any) continue;

        switch (n.op) {
            case Op::leaf:
                break;
            case Op::param: {
                double* pg = param_grad.data() + params_->block(n.aux).offset;
                for (int i = 0; i < n.len; ++i) pg[i] += g[i];
                break;
            }
            case Op::affine: {
                const auto& blk = params_->block(n.aux);
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                const double* w = params_->data().data() + blk.offset;
                const double* xv = val_.data() + xn.off;
                double* gx = grad_.data() + xn.off;
                double* gw = param_grad.data() + blk.offset;
                double* gb = gw + static_cast<std::size_t>(blk.out) * static_cast<std::size_t>(blk.in);
                for (int r = 0; r < blk.out; ++r) {
                    const double gr = g[r];
                    if (gr == 0.0) continue;
                    const double* row = w + static_cast<std::size_t>(r) * static_cast<std::size_t>(blk.in);
                    double* gwrow = gw + static_cast<std::size_t>(r) * static_cast<std::size_t>(blk.in);
                    for (int c = 0; c < blk.in; ++c) {
                        gx[c] += row[c] * gr;
                        gwrow[c] += xv[c] * gr;
                    }
                    gb[r] += gr;
                }
                break;
            }
            case Op::tanh_: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                const double* y = val_.data() + n.off;
                double* gx = grad_.data() + xn.off;
                for (int i = 0; i < n.len; ++i) gx[i] += (1.0 - y[i] * y[i]) * g[i];
                break;
            }
            case Op::concat: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                const Node& yn = nodes_[static_cast<std::size_t>(n.b)];
                double* gx = grad_.data() + xn.off;
                double* gy = grad_.data() + yn.off;
                for (int i = 0; i < xn.len; ++i) gx[i] += g[i];
                for (int i = 0; i < yn.len; ++i) gy[i] += g[xn.len + i];
                break;
            }
            case Op::mean: {
                const double inv = 1.0 / static_cast<double>(n.count);
                for (int j = 0; j < n.count; ++j) {
                    const Node& xn = nodes_[static_cast<std::size_t>(
                        pool_[static_cast<std::size_t>(n.aux + j)])];
                    double* gx = grad_.data() + xn.off;
                    for (int i = 0; i < n.len; ++i) gx[i] += g[i] * inv;
                }
                break;
            }
            case Op::stack: {
                for (int j = 0; j < n.count; ++j) {
                    const Node& xn = nodes_[static_cast<std::size_t>(
                        pool_[static_cast<std::size_t>(n.aux + j)])];
                    grad_[xn.off] += g[j];
                }
                break;
            }
            case Op::select: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                double* gx = grad_.data() + xn.off;
                for (int j = 0; j < n.count; ++j)
                    gx[pool_[static_cast<std::size_t>(n.aux + j)]] += g[j];
                break;
            }
            case Op::softmax: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                const double* s = val_.data() + n.off;
                double* gx = grad_.data() + xn.off;
                double gs = 0.0;
                for (int i = 0; i < n.len; ++i) gs += g[i] * s[i];
                for (int i = 0; i < n.len; ++i) gx[i] += s[i] * (g[i] - gs);
                break;
            }
            case Op::dot: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                const Node& yn = nodes_[static_cast<std::size_t>(n.b)];
                const double* xv = val_.data() + xn.off;
                const double* yv = val_.data() + yn.off;
                double* gx = grad_.data() + xn.off;
                double* gy = grad_.data() + yn.off;
                for (int i = 0; i < xn.len; ++i) {
                    gx[i] += yv[i] * g[0];
                    gy[i] += xv[i] * g[0];
                }
                break;
            }
            case Op::pick: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                grad_[xn.off + static_cast<std::size_t>(n.aux)] += g[0];
                break;
            }
            case Op::sub: {
                grad_[nodes_[static_cast<std::size_t>(n.a)].off] += g[0];
                grad_[nodes_[static_cast<std::size_t>(n.b)].off] -= g[0];
                break;
            }
            case Op::mul: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                const Node& yn = nodes_[static_cast<std::size_t>(n.b)];
                grad_[xn.off] += val_[yn.off] * g[0];
                grad_[yn.off] += val_[xn.off] * g[0];
                break;
            }
            case Op::square: {
                const Node& xn = nodes_[static_cast<std::size_t>(n.a)];
                grad_[xn.off] += 2.0 * val_[xn.off] * g[0];
                break;
            }
        }
    }
}

}  // namespace dmsp::ad
