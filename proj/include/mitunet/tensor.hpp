#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mitunet/common.hpp"
#include "mitunet/rng.hpp"

namespace mitunet {

// Thread-local autograd switch. With grad mode off, ops neither record
// parents nor keep backward closures, so intermediates are freed eagerly.
struct GradMode {
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(const std::vector<T>&)> backprop;  // consumes this node's grad

    void accum_grad(const T* g, long n) {
        if (grad.empty()) grad.assign(value.size(), T(0));
        for (long i = 0; i < n; ++i) grad[size_t(i)] += g[i];
    }
};

// Value-semantic handle to a node in the implicit compute DAG.
template <class T>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<Node<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value.assign(size_t(numel(t.impl_->shape)), v);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check(long(data.size()) == numel(shape),
              "Tensor::from: data length " + std::to_string(data.size()) +
                  " does not match shape " + shape_str(shape));
        Tensor t;
        t.impl_ = std::make_shared<Node<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value = std::move(data);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, T lo = T(-1), T hi = T(1),
                               bool requires_grad = false) {
        Tensor t = zeros(shape, requires_grad);
        for (auto& v : t.data()) v = T(rng.uniform(double(lo), double(hi)));
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    long dim(int i) const { return impl_->shape[size_t(i)]; }
    int rank() const { return int(impl_->shape.size()); }
    long size() const { return long(impl_->value.size()); }

    std::vector<T>& data() { return impl_->value; }
    const std::vector<T>& data() const { return impl_->value; }
    std::vector<T>& grad() { return impl_->grad; }
    const std::vector<T>& grad() const { return impl_->grad; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }

    void zero_grad() { impl_->grad.clear(); }

    T item() const {
        check(size() == 1, "item(): tensor is not scalar, shape " + shape_str(shape()));
        return impl_->value[0];
    }

    std::shared_ptr<Node<T>> node() const { return impl_; }

    // Same values, detached from the graph.
    Tensor detach() const {
        Tensor t;
        t.impl_ = std::make_shared<Node<T>>();
        t.impl_->shape = impl_->shape;
        t.impl_->value = impl_->value;
        return t;
    }

  private:
    std::shared_ptr<Node<T>> impl_;
};

namespace detail {

// Builds a non-leaf node. Parent links and the backward closure are dropped
// when grad mode is off or no input needs gradients.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const std::vector<T>&)> backprop) {
    Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(value));
    bool any_grad = false;
    for (auto& in : inputs) any_grad = any_grad || in.requires_grad();
    if (GradMode::enabled() && any_grad) {
        auto n = out.node();
        n->requires_grad = true;
        n->op = op;
        for (auto& in : inputs) n->parents.push_back(in.node());
        n->backprop = std::move(backprop);
    }
    return out;
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Gradients accumulate additively into
// every reachable leaf with requires_grad; call zero_grad between steps.
template <class T>
inline void backward(const Tensor<T>& root) {
    check(root.size() == 1, "backward: root must be scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    // topo is post-order: parents before children; walk it backwards.
    T one = T(1);
    root.node()->accum_grad(&one, 1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(n->grad);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class F, class DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, DF df) {
    const auto& xd = x.data();
    std::vector<T> y(xd.size());
    for (size_t i = 0; i < xd.size(); ++i) y[i] = f(xd[i]);
    auto xn = x.node();
    std::vector<T> ycopy = y;
    return make_result<T>(
        name, x.shape(), std::move(y), {x},
        [xn, ycopy = std::move(ycopy), df](const std::vector<T>& gout) {
            std::vector<T> gx(gout.size());
            for (size_t i = 0; i < gout.size(); ++i)
                gx[i] = gout[i] * df(xn->value[i], ycopy[i]);
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        "sigmoid", x,
        [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}

// tanh-approximation GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    return detail::unary_op(
        "gelu", x,
        [](T v) {
            double xv = double(v);
            double u = kC * (xv + kA * xv * xv * xv);
            return T(0.5 * xv * (1.0 + std::tanh(u)));
        },
        [](T v, T) {
            double xv = double(v);
            double u = kC * (xv + kA * xv * xv * xv);
            double t = std::tanh(u);
            double du = kC * (1.0 + 3.0 * kA * xv * xv);
            return T(0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du);
        });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary_op(
        "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary_op(
        "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::unary_op(
        "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary_op(
        "scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary_op(
        "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

// x^p with constant exponent. p == 0 is the constant 1 (zero gradient).
template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
    return detail::unary_op(
        "pow_scalar", x,
        [p](T v) { return p == T(0) ? T(1) : T(std::pow(double(v), double(p))); },
        [p](T v, T) {
            return p == T(0) ? T(0) : T(double(p) * std::pow(double(v), double(p) - 1.0));
        });
}

// ---------------------------------------------------------------------------
// Broadcasting binary ops (numpy-style, right-aligned; extents match or are 1)
// ---------------------------------------------------------------------------

namespace detail {

struct BroadcastPlan {
    Shape out;
    std::vector<long> stride_a, stride_b;  // per out-axis element strides, 0 when broadcast
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* who) {
    size_t rank = std::max(a.size(), b.size());
    BroadcastPlan p;
    p.out.resize(rank);
    p.stride_a.resize(rank);
    p.stride_b.resize(rank);
    // element strides of a and b in their own layouts
    std::vector<long> sa(a.size()), sb(b.size());
    long acc = 1;
    for (size_t i = a.size(); i-- > 0;) sa[i] = acc, acc *= a[i];
    acc = 1;
    for (size_t i = b.size(); i-- > 0;) sb[i] = acc, acc *= b[i];
    for (size_t i = 0; i < rank; ++i) {
        long da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        long db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            fail(std::string(who) + ": incompatible shapes " + shape_str(a) + " vs " +
                 shape_str(b) + " at axis " + std::to_string(i));
        p.out[i] = std::max(da, db);
        p.stride_a[i] = (da == 1 && p.out[i] != 1) ? 0 : (i < rank - a.size() ? 0 : sa[i - (rank - a.size())]);
        p.stride_b[i] = (db == 1 && p.out[i] != 1) ? 0 : (i < rank - b.size() ? 0 : sb[i - (rank - b.size())]);
    }
    return p;
}

// Iterates the broadcast index space calling fn(out_index, a_offset, b_offset).
template <class Fn>
void broadcast_iter(const BroadcastPlan& p, Fn fn) {
    long n = numel(p.out);
    size_t rank = p.out.size();
    std::vector<long> idx(rank, 0);
    long offa = 0, offb = 0;
    for (long i = 0; i < n; ++i) {
        fn(i, offa, offb);
        for (size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < p.out[ax]) {
                offa += p.stride_a[ax];
                offb += p.stride_b[ax];
                break;
            }
            idx[ax] = 0;
            offa -= p.stride_a[ax] * (p.out[ax] - 1);
            offb -= p.stride_b[ax] * (p.out[ax] - 1);
        }
    }
}

template <class T>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, bool is_mul) {
    BroadcastPlan p = broadcast_plan(a.shape(), b.shape(), name);
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<T> y(size_t(numel(p.out)));
    if (is_mul)
        broadcast_iter(p, [&](long i, long oa, long ob) { y[size_t(i)] = ad[size_t(oa)] * bd[size_t(ob)]; });
    else
        broadcast_iter(p, [&](long i, long oa, long ob) { y[size_t(i)] = ad[size_t(oa)] + bd[size_t(ob)]; });
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>(
        name, p.out, std::move(y), {a, b},
        [an, bn, p, is_mul](const std::vector<T>& gout) {
            if (an->requires_grad) {
                std::vector<T> ga(an->value.size(), T(0));
                if (is_mul)
                    broadcast_iter(p, [&](long i, long oa, long ob) {
                        ga[size_t(oa)] += gout[size_t(i)] * bn->value[size_t(ob)];
                    });
                else
                    broadcast_iter(p, [&](long i, long oa, long) { ga[size_t(oa)] += gout[size_t(i)]; });
                an->accum_grad(ga.data(), long(ga.size()));
            }
            if (bn->requires_grad) {
                std::vector<T> gb(bn->value.size(), T(0));
                if (is_mul)
                    broadcast_iter(p, [&](long i, long oa, long ob) {
                        gb[size_t(ob)] += gout[size_t(i)] * an->value[size_t(oa)];
                    });
                else
                    broadcast_iter(p, [&](long i, long, long ob) { gb[size_t(ob)] += gout[size_t(i)]; });
                bn->accum_grad(gb.data(), long(gb.size()));
            }
        });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op("add", a, b, false);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op("mul", a, b, true);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    auto xn = x.node();
    return detail::make_result<T>(
        "sum", {1}, {acc}, {x}, [xn](const std::vector<T>& gout) {
            std::vector<T> g(xn->value.size(), gout[0]);
            xn->accum_grad(g.data(), long(g.size()));
        });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / T(x.size()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    // one extent may be -1 (inferred)
    long known = 1;
    int infer = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            check(infer == -1, "reshape: more than one inferred extent");
            infer = int(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) shape[size_t(infer)] = x.size() / known;
    check(numel(shape) == x.size(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto xn = x.node();
    return detail::make_result<T>(
        "reshape", std::move(shape), x.data(), {x},
        [xn](const std::vector<T>& gout) { xn->accum_grad(gout.data(), long(gout.size())); });
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
    check(perm.size() == size_t(x.rank()), "permute: rank mismatch");
    const Shape& xs = x.shape();
    size_t rank = xs.size();
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) out[i] = xs[size_t(perm[i])];
    std::vector<long> xstride(rank, 1);
    for (size_t i = rank - 1; i-- > 0;) xstride[i] = xstride[i + 1] * xs[i + 1];
    // out-axis strides in x layout
    std::vector<long> stride(rank);
    for (size_t i = 0; i < rank; ++i) stride[i] = xstride[size_t(perm[i])];

    auto scatter = [rank, out, stride](const std::vector<T>& src, std::vector<T>& dst, bool forward) {
        std::vector<long> idx(rank, 0);
        long off = 0;
        long n = numel(out);
        for (long i = 0; i < n; ++i) {
            if (forward)
                dst[size_t(i)] = src[size_t(off)];
            else
                dst[size_t(off)] += src[size_t(i)];
            for (size_t ax = rank; ax-- > 0;) {
                if (++idx[ax] < out[ax]) {
                    off += stride[ax];
                    break;
                }
                idx[ax] = 0;
                off -= stride[ax] * (out[ax] - 1);
            }
        }
    };

    std::vector<T> y(x.data().size());
    scatter(x.data(), y, true);
    auto xn = x.node();
    return detail::make_result<T>(
        "permute", out, std::move(y), {x},
        [xn, scatter](const std::vector<T>& gout) {
            std::vector<T> gx(xn->value.size(), T(0));
            scatter(gout, gx, false);
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    check(!parts.empty(), "concat: empty input list");
    const Shape& s0 = parts[0].shape();
    size_t rank = s0.size();
    check(axis >= 0 && size_t(axis) < rank, "concat: bad axis");
    Shape out = s0;
    out[size_t(axis)] = 0;
    for (auto& p : parts) {
        check(p.rank() == int(rank), "concat: rank mismatch");
        for (size_t i = 0; i < rank; ++i)
            if (int(i) != axis)
                check(p.shape()[i] == s0[i], "concat: extent mismatch at axis " + std::to_string(i));
        out[size_t(axis)] += p.shape()[size_t(axis)];
    }
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < rank; ++i) inner *= s0[i];

    std::vector<T> y(size_t(numel(out)));
    long axis_total = out[size_t(axis)];
    long off_axis = 0;
    for (auto& p : parts) {
        long ax = p.shape()[size_t(axis)];
        const auto& pd = p.data();
        for (long o = 0; o < outer; ++o)
            std::memcpy(&y[size_t((o * axis_total + off_axis) * inner)],
                        &pd[size_t(o * ax * inner)], size_t(ax * inner) * sizeof(T));
        off_axis += ax;
    }
    std::vector<std::shared_ptr<Node<T>>> nodes;
    std::vector<long> extents;
    for (auto& p : parts) {
        nodes.push_back(p.node());
        extents.push_back(p.shape()[size_t(axis)]);
    }
    return detail::make_result<T>(
        "concat", out, std::move(y), parts,
        [nodes, extents, outer, inner, axis_total](const std::vector<T>& gout) {
            long off = 0;
            for (size_t pi = 0; pi < nodes.size(); ++pi) {
                long ax = extents[pi];
                if (nodes[pi]->requires_grad) {
                    std::vector<T> g(size_t(outer * ax * inner));
                    for (long o = 0; o < outer; ++o)
                        std::memcpy(&g[size_t(o * ax * inner)],
                                    &gout[size_t((o * axis_total + off) * inner)],
                                    size_t(ax * inner) * sizeof(T));
                    nodes[pi]->accum_grad(g.data(), long(g.size()));
                }
                off += ax;
            }
        });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, long start, long len) {
    const Shape& xs = x.shape();
    check(axis >= 0 && size_t(axis) < xs.size(), "slice: bad axis");
    check(start >= 0 && len > 0 && start + len <= xs[size_t(axis)],
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of bounds for extent " + std::to_string(xs[size_t(axis)]));
    Shape out = xs;
    out[size_t(axis)] = len;
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xs[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < xs.size(); ++i) inner *= xs[i];
    long ax = xs[size_t(axis)];

    std::vector<T> y(size_t(outer * len * inner));
    const auto& xd = x.data();
    for (long o = 0; o < outer; ++o)
        std::memcpy(&y[size_t(o * len * inner)], &xd[size_t((o * ax + start) * inner)],
                    size_t(len * inner) * sizeof(T));
    auto xn = x.node();
    return detail::make_result<T>(
        "slice", out, std::move(y), {x},
        [xn, outer, inner, ax, start, len](const std::vector<T>& gout) {
            std::vector<T> gx(xn->value.size(), T(0));
            for (long o = 0; o < outer; ++o)
                std::memcpy(&gx[size_t((o * ax + start) * inner)], &gout[size_t(o * len * inner)],
                            size_t(len * inner) * sizeof(T));
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

// y[i] = x_flat[idx[i]]; gradient scatter-adds (duplicate indices allowed).
template <class T>
Tensor<T> index_select_flat(const Tensor<T>& x, const std::vector<long>& idx) {
    const auto& xd = x.data();
    std::vector<T> y(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < long(xd.size()), "index_select_flat: index out of range");
        y[i] = xd[size_t(idx[i])];
    }
    auto xn = x.node();
    return detail::make_result<T>(
        "index_select", {long(idx.size())}, std::move(y), {x},
        [xn, idx](const std::vector<T>& gout) {
            std::vector<T> gx(xn->value.size(), T(0));
            for (size_t i = 0; i < idx.size(); ++i) gx[size_t(idx[i])] += gout[i];
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

}  // namespace mitunet
