#pragma once

#include "mitunet/tensor.hpp"

namespace mitunet {

namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n], row-major, optional transposes. Single
// threaded; ikj ordering keeps the inner loop contiguous.
template <class T>
void gemm(bool trans_a, bool trans_b, long m, long n, long k, const T* a, const T* b, T* c,
          bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    if (!trans_a && !trans_b) {
        for (long i = 0; i < m; ++i)
            for (long p = 0; p < k; ++p) {
                T av = a[i * k + p];
                if (av == T(0)) continue;
                const T* brow = b + p * n;
                T* crow = c + i * n;
                for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    } else if (!trans_a && trans_b) {
        // B stored [n,k]
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j) {
                const T* arow = a + i * k;
                const T* brow = b + j * k;
                T acc = T(0);
                for (long p = 0; p < k; ++p) acc += arow[p] * brow[p];
                c[i * n + j] += acc;
            }
    } else if (trans_a && !trans_b) {
        // A stored [k,m]
        for (long p = 0; p < k; ++p) {
            const T* arow = a + p * m;
            const T* brow = b + p * n;
            for (long i = 0; i < m; ++i) {
                T av = arow[i];
                if (av == T(0)) continue;
                T* crow = c + i * n;
                for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j) {
                T acc = T(0);
                for (long p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
                c[i * n + j] += acc;
            }
    }
}

}  // namespace detail

// Batched matmul: a [..,m,k] x b [..,k,n] with identical leading extents,
// or b rank-2 shared across the batch.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() >= 2 && b.rank() >= 2, "matmul: inputs must have rank >= 2");
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    long m = as[as.size() - 2], k = as[as.size() - 1];
    long k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
    check(k == k2, "matmul: inner extents differ, " + shape_str(as) + " x " + shape_str(bs));
    bool shared_b = b.rank() == 2 && a.rank() > 2;
    if (!shared_b)
        check(std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2) &&
                  as.size() == bs.size(),
              "matmul: batch extents differ, " + shape_str(as) + " x " + shape_str(bs));
    long batch = 1;
    for (size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
    Shape out(as.begin(), as.end() - 2);
    out.push_back(m);
    out.push_back(n);

    std::vector<T> y(size_t(batch * m * n));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    for (long s = 0; s < batch; ++s)
        detail::gemm(false, false, m, n, k, ad + s * m * k, bd + (shared_b ? 0 : s * k * n),
                     y.data() + s * m * n, false);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(
        "matmul", std::move(out), std::move(y), {a, b},
        [an, bn, batch, m, n, k, shared_b](const std::vector<T>& gout) {
            if (an->requires_grad) {
                std::vector<T> ga(an->value.size(), T(0));
                for (long s = 0; s < batch; ++s)
                    detail::gemm(false, true, m, k, n, gout.data() + s * m * n,
                                 bn->value.data() + (shared_b ? 0 : s * k * n),
                                 ga.data() + s * m * k, true);
                an->accum_grad(ga.data(), long(ga.size()));
            }
            if (bn->requires_grad) {
                std::vector<T> gb(bn->value.size(), T(0));
                for (long s = 0; s < batch; ++s)
                    detail::gemm(true, false, k, n, m, an->value.data() + s * m * k,
                                 gout.data() + s * m * n, gb.data() + (shared_b ? 0 : s * k * n),
                                 true);
                bn->accum_grad(gb.data(), long(gb.size()));
            }
        });
}

// x [..,in] * w[out,in]^T + bias[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    check(w.rank() == 2, "linear: weight must be [out,in]");
    const Shape& xs = x.shape();
    long in = xs.back();
    long out_f = w.dim(0);
    check(in == w.dim(1), "linear: input feature extent " + std::to_string(in) +
                              " != weight in extent " + std::to_string(w.dim(1)));
    if (bias.defined())
        check(bias.size() == out_f, "linear: bias extent mismatch");
    long rows = x.size() / in;

    std::vector<T> y(size_t(rows * out_f));
    detail::gemm(false, true, rows, out_f, in, x.data().data(), w.data().data(), y.data(), false);
    if (bias.defined()) {
        const T* bd = bias.data().data();
        for (long r = 0; r < rows; ++r)
            for (long j = 0; j < out_f; ++j) y[size_t(r * out_f + j)] += bd[j];
    }
    Shape os = xs;
    os.back() = out_f;
    auto xn = x.node();
    auto wn = w.node();
    auto bnode = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor<T>> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result<T>(
        "linear", std::move(os), std::move(y), std::move(inputs),
        [xn, wn, bnode, rows, in, out_f](const std::vector<T>& gout) {
            if (xn->requires_grad) {
                std::vector<T> gx(size_t(rows * in));
                detail::gemm(false, false, rows, in, out_f, gout.data(), wn->value.data(),
                             gx.data(), false);
                xn->accum_grad(gx.data(), long(gx.size()));
            }
            if (wn->requires_grad) {
                std::vector<T> gw(size_t(out_f * in));
                detail::gemm(true, false, out_f, in, rows, gout.data(), xn->value.data(),
                             gw.data(), false);
                wn->accum_grad(gw.data(), long(gw.size()));
            }
            if (bnode && bnode->requires_grad) {
                std::vector<T> gb(size_t(out_f), T(0));
                for (long r = 0; r < rows; ++r)
                    for (long j = 0; j < out_f; ++j) gb[size_t(j)] += gout[size_t(r * out_f + j)];
                bnode->accum_grad(gb.data(), long(gb.size()));
            }
        });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
    return linear(x, w, Tensor<T>{});
}

namespace detail {

// Walks [outer, axis_extent, inner] lines of a tensor.
struct AxisLines {
    long outer, extent, inner;
};

inline AxisLines axis_lines(const Shape& s, int axis) {
    check(axis >= 0 && size_t(axis) < s.size(), "bad axis " + std::to_string(axis));
    AxisLines l{1, s[size_t(axis)], 1};
    for (int i = 0; i < axis; ++i) l.outer *= s[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < s.size(); ++i) l.inner *= s[i];
    return l;
}

}  // namespace detail

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    auto l = detail::axis_lines(x.shape(), axis);
    check(l.extent > 0, "softmax: empty axis");
    const auto& xd = x.data();
    std::vector<T> y(xd.size());
    for (long o = 0; o < l.outer; ++o)
        for (long in = 0; in < l.inner; ++in) {
            long base = o * l.extent * l.inner + in;
            T mx = xd[size_t(base)];
            for (long e = 1; e < l.extent; ++e)
                mx = std::max(mx, xd[size_t(base + e * l.inner)]);
            T denom = T(0);
            for (long e = 0; e < l.extent; ++e) {
                T v = std::exp(xd[size_t(base + e * l.inner)] - mx);
                y[size_t(base + e * l.inner)] = v;
                denom += v;
            }
            for (long e = 0; e < l.extent; ++e) y[size_t(base + e * l.inner)] /= denom;
        }
    auto xn = x.node();
    std::vector<T> ycopy = y;
    return detail::make_result<T>(
        "softmax", x.shape(), std::move(y), {x},
        [xn, l, ycopy = std::move(ycopy)](const std::vector<T>& gout) {
            std::vector<T> gx(gout.size());
            for (long o = 0; o < l.outer; ++o)
                for (long in = 0; in < l.inner; ++in) {
                    long base = o * l.extent * l.inner + in;
                    T dot = T(0);
                    for (long e = 0; e < l.extent; ++e)
                        dot += gout[size_t(base + e * l.inner)] * ycopy[size_t(base + e * l.inner)];
                    for (long e = 0; e < l.extent; ++e) {
                        size_t i = size_t(base + e * l.inner);
                        gx[i] = ycopy[i] * (gout[i] - dot);
                    }
                }
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
    auto l = detail::axis_lines(x.shape(), axis);
    check(l.extent > 0, "log_softmax: empty axis");
    const auto& xd = x.data();
    std::vector<T> y(xd.size());
    for (long o = 0; o < l.outer; ++o)
        for (long in = 0; in < l.inner; ++in) {
            long base = o * l.extent * l.inner + in;
            T mx = xd[size_t(base)];
            for (long e = 1; e < l.extent; ++e)
                mx = std::max(mx, xd[size_t(base + e * l.inner)]);
            T denom = T(0);
            for (long e = 0; e < l.extent; ++e)
                denom += std::exp(xd[size_t(base + e * l.inner)] - mx);
            T lse = mx + std::log(denom);
            for (long e = 0; e < l.extent; ++e)
                y[size_t(base + e * l.inner)] = xd[size_t(base + e * l.inner)] - lse;
        }
    auto xn = x.node();
    std::vector<T> ycopy = y;
    return detail::make_result<T>(
        "log_softmax", x.shape(), std::move(y), {x},
        [xn, l, ycopy = std::move(ycopy)](const std::vector<T>& gout) {
            std::vector<T> gx(gout.size());
            for (long o = 0; o < l.outer; ++o)
                for (long in = 0; in < l.inner; ++in) {
                    long base = o * l.extent * l.inner + in;
                    T gsum = T(0);
                    for (long e = 0; e < l.extent; ++e) gsum += gout[size_t(base + e * l.inner)];
                    for (long e = 0; e < l.extent; ++e) {
                        size_t i = size_t(base + e * l.inner);
                        gx[i] = gout[i] - std::exp(ycopy[i]) * gsum;
                    }
                }
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

// Last-axis layer norm with affine gain/offset of extent `normalized_extent`.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, long normalized_extent, const Tensor<T>& gain,
                     const Tensor<T>& offset, T eps) {
    check(eps > T(0), "layer_norm: eps must be positive");
    check(x.shape().back() == normalized_extent,
          "layer_norm: last extent " + std::to_string(x.shape().back()) +
              " != normalized extent " + std::to_string(normalized_extent));
    check(gain.size() == normalized_extent && offset.size() == normalized_extent,
          "layer_norm: gain/offset extent mismatch");
    long c = normalized_extent;
    long rows = x.size() / c;
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& od = offset.data();
    std::vector<T> y(xd.size());
    std::vector<T> xhat(xd.size());
    std::vector<T> inv_std(size_t(rows), T(0));
    for (long r = 0; r < rows; ++r) {
        const T* xr = &xd[size_t(r * c)];
        T mu = T(0);
        for (long j = 0; j < c; ++j) mu += xr[j];
        mu /= T(c);
        T var = T(0);
        for (long j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= T(c);
        T is = T(1) / std::sqrt(var + eps);
        inv_std[size_t(r)] = is;
        for (long j = 0; j < c; ++j) {
            T xh = (xr[j] - mu) * is;
            xhat[size_t(r * c + j)] = xh;
            y[size_t(r * c + j)] = xh * gd[size_t(j)] + od[size_t(j)];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto on = offset.node();
    return detail::make_result<T>(
        "layer_norm", x.shape(), std::move(y), {x, gain, offset},
        [xn, gn, on, rows, c, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const std::vector<T>& gout) {
            if (xn->requires_grad) {
                std::vector<T> gx(gout.size());
                for (long r = 0; r < rows; ++r) {
                    T mean_dy = T(0), mean_dyxh = T(0);
                    for (long j = 0; j < c; ++j) {
                        size_t i = size_t(r * c + j);
                        T dy = gout[i] * gn->value[size_t(j)];
                        mean_dy += dy;
                        mean_dyxh += dy * xhat[i];
                    }
                    mean_dy /= T(c);
                    mean_dyxh /= T(c);
                    for (long j = 0; j < c; ++j) {
                        size_t i = size_t(r * c + j);
                        T dy = gout[i] * gn->value[size_t(j)];
                        gx[i] = (dy - mean_dy - xhat[i] * mean_dyxh) * inv_std[size_t(r)];
                    }
                }
                xn->accum_grad(gx.data(), long(gx.size()));
            }
            if (gn->requires_grad) {
                std::vector<T> gg(size_t(c), T(0));
                for (long r = 0; r < rows; ++r)
                    for (long j = 0; j < c; ++j)
                        gg[size_t(j)] += gout[size_t(r * c + j)] * xhat[size_t(r * c + j)];
                gn->accum_grad(gg.data(), long(gg.size()));
            }
            if (on->requires_grad) {
                std::vector<T> gb(size_t(c), T(0));
                for (long r = 0; r < rows; ++r)
                    for (long j = 0; j < c; ++j) gb[size_t(j)] += gout[size_t(r * c + j)];
                on->accum_grad(gb.data(), long(gb.size()));
            }
        });
}

// softmax(q k^T / sqrt(d)) v over the last two axes of [N,h,L,d] inputs.
template <class T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v) {
    check(q.rank() == 4 && k.rank() == 4 && v.rank() == 4,
          "attention: expected [batch, heads, length, dim] inputs");
    check(q.dim(0) == k.dim(0) && q.dim(1) == k.dim(1) && q.dim(3) == k.dim(3),
          "attention: q/k batch, head or dim extents differ");
    check(k.dim(0) == v.dim(0) && k.dim(1) == v.dim(1) && k.dim(2) == v.dim(2),
          "attention: k/v extents differ");
    for (const Tensor<T>* t : {&q, &k, &v})
        for (T x : t->data())
            check(std::isfinite(double(x)), "attention: non-finite input value");
    long d = q.dim(3);
    Tensor<T> kt = permute(k, {0, 1, 3, 2});
    Tensor<T> scores = scale(matmul(q, kt), T(1.0 / std::sqrt(double(d))));
    Tensor<T> attn = softmax(scores, 3);
    return matmul(attn, v);
}

}  // namespace mitunet
