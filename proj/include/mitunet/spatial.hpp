#pragma once

#include "mitunet/linalg.hpp"

namespace mitunet {

namespace detail {

struct ConvDims {
    long n, c, h, w;        // input
    long oc, kh, kw;        // weight
    long sh, sw, ph, pw;    // stride / pad
    long groups;
    long oh, ow;
    long cg, og;            // channels per group in/out
};

inline ConvDims conv_dims(const Shape& xs, const Shape& ws, std::pair<int, int> stride,
                          std::pair<int, int> pad, int groups) {
    check(xs.size() == 4, "conv2d: input must be NCHW, got " + shape_str(xs));
    check(ws.size() == 4, "conv2d: weight must be OIHW, got " + shape_str(ws));
    check(groups >= 1, "conv2d: groups must be >= 1");
    ConvDims d;
    d.n = xs[0], d.c = xs[1], d.h = xs[2], d.w = xs[3];
    d.oc = ws[0], d.kh = ws[2], d.kw = ws[3];
    d.sh = stride.first, d.sw = stride.second;
    d.ph = pad.first, d.pw = pad.second;
    d.groups = groups;
    check(d.c % groups == 0, "conv2d: in-channel extent " + std::to_string(d.c) +
                                 " not divisible by groups " + std::to_string(groups));
    check(d.oc % groups == 0, "conv2d: out-channel extent " + std::to_string(d.oc) +
                                  " not divisible by groups " + std::to_string(groups));
    d.cg = d.c / groups;
    d.og = d.oc / groups;
    check(ws[1] == d.cg, "conv2d: weight in-channel extent " + std::to_string(ws[1]) +
                             " != C/groups = " + std::to_string(d.cg));
    check(d.sh > 0 && d.sw > 0, "conv2d: stride must be positive");
    d.oh = (d.h + 2 * d.ph - d.kh) / d.sh + 1;
    d.ow = (d.w + 2 * d.pw - d.kw) / d.sw + 1;
    check(d.oh > 0 && d.ow > 0, "conv2d: kernel " + std::to_string(d.kh) + "x" +
                                    std::to_string(d.kw) + " too large for padded input");
    return d;
}

// col: [cg*kh*kw, oh*ow] for one (sample, group).
template <class T>
void im2col(const T* x, const ConvDims& d, long g, std::vector<T>& col) {
    long chw = d.h * d.w;
    long spatial = d.oh * d.ow;
    for (long ci = 0; ci < d.cg; ++ci) {
        const T* xc = x + (g * d.cg + ci) * chw;
        for (long ky = 0; ky < d.kh; ++ky)
            for (long kx = 0; kx < d.kw; ++kx) {
                T* crow = &col[size_t(((ci * d.kh + ky) * d.kw + kx) * spatial)];
                for (long oy = 0; oy < d.oh; ++oy) {
                    long iy = oy * d.sh - d.ph + ky;
                    if (iy < 0 || iy >= d.h) {
                        std::fill(crow + oy * d.ow, crow + (oy + 1) * d.ow, T(0));
                        continue;
                    }
                    const T* xrow = xc + iy * d.w;
                    for (long ox = 0; ox < d.ow; ++ox) {
                        long ix = ox * d.sw - d.pw + kx;
                        crow[oy * d.ow + ox] = (ix >= 0 && ix < d.w) ? xrow[ix] : T(0);
                    }
                }
            }
    }
}

template <class T>
void col2im_accum(const std::vector<T>& col, const ConvDims& d, long g, T* gx) {
    long chw = d.h * d.w;
    long spatial = d.oh * d.ow;
    for (long ci = 0; ci < d.cg; ++ci) {
        T* xc = gx + (g * d.cg + ci) * chw;
        for (long ky = 0; ky < d.kh; ++ky)
            for (long kx = 0; kx < d.kw; ++kx) {
                const T* crow = &col[size_t(((ci * d.kh + ky) * d.kw + kx) * spatial)];
                for (long oy = 0; oy < d.oh; ++oy) {
                    long iy = oy * d.sh - d.ph + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    T* xrow = xc + iy * d.w;
                    for (long ox = 0; ox < d.ow; ++ox) {
                        long ix = ox * d.sw - d.pw + kx;
                        if (ix >= 0 && ix < d.w) xrow[ix] += crow[oy * d.ow + ox];
                    }
                }
            }
    }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::pair<int, int> stride = {1, 1}, std::pair<int, int> pad = {0, 0},
                 int groups = 1) {
    detail::ConvDims d = detail::conv_dims(x.shape(), w.shape(), stride, pad, groups);
    if (bias.defined())
        check(bias.size() == d.oc, "conv2d: bias extent " + std::to_string(bias.size()) +
                                       " != out channels " + std::to_string(d.oc));
    long spatial = d.oh * d.ow;
    long ckk = d.cg * d.kh * d.kw;
    std::vector<T> y(size_t(d.n * d.oc * spatial));
    std::vector<T> col(size_t(ckk * spatial));
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    for (long s = 0; s < d.n; ++s) {
        const T* xs = xd + s * d.c * d.h * d.w;
        T* ys = y.data() + s * d.oc * spatial;
        for (long g = 0; g < d.groups; ++g) {
            detail::im2col(xs, d, g, col);
            detail::gemm(false, false, d.og, spatial, ckk, wd + g * d.og * ckk, col.data(),
                         ys + g * d.og * spatial, false);
        }
    }
    if (bias.defined()) {
        const T* bd = bias.data().data();
        for (long s = 0; s < d.n; ++s)
            for (long oc = 0; oc < d.oc; ++oc) {
                T* row = y.data() + (s * d.oc + oc) * spatial;
                for (long i = 0; i < spatial; ++i) row[i] += bd[oc];
            }
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bnode = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor<T>> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result<T>(
        "conv2d", {d.n, d.oc, d.oh, d.ow}, std::move(y), std::move(inputs),
        [xn, wn, bnode, d, spatial, ckk](const std::vector<T>& gout) {
            std::vector<T> col(size_t(ckk * spatial));
            std::vector<T> gx;
            std::vector<T> gw;
            if (xn->requires_grad) gx.assign(xn->value.size(), T(0));
            if (wn->requires_grad) gw.assign(wn->value.size(), T(0));
            for (long s = 0; s < d.n; ++s) {
                const T* xs = xn->value.data() + s * d.c * d.h * d.w;
                const T* gys = gout.data() + s * d.oc * spatial;
                for (long g = 0; g < d.groups; ++g) {
                    if (wn->requires_grad) {
                        detail::im2col(xs, d, g, col);
                        detail::gemm(false, true, d.og, ckk, spatial, gys + g * d.og * spatial,
                                     col.data(), gw.data() + g * d.og * ckk, true);
                    }
                    if (xn->requires_grad) {
                        detail::gemm(true, false, ckk, spatial, d.og,
                                     wn->value.data() + g * d.og * ckk, gys + g * d.og * spatial,
                                     col.data(), false);
                        detail::col2im_accum(col, d, g, gx.data() + s * d.c * d.h * d.w);
                    }
                }
            }
            if (xn->requires_grad) xn->accum_grad(gx.data(), long(gx.size()));
            if (wn->requires_grad) wn->accum_grad(gw.data(), long(gw.size()));
            if (bnode && bnode->requires_grad) {
                std::vector<T> gb(size_t(d.oc), T(0));
                for (long s = 0; s < d.n; ++s)
                    for (long oc = 0; oc < d.oc; ++oc) {
                        const T* row = gout.data() + (s * d.oc + oc) * spatial;
                        for (long i = 0; i < spatial; ++i) gb[size_t(oc)] += row[i];
                    }
                bnode->accum_grad(gb.data(), long(gb.size()));
            }
        });
}

// Half-pixel (align-corners off) bilinear upsampling by an integer factor.
template <class T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale) {
    check(scale >= 2, "bilinear_upsample: scale must be >= 2");
    check(x.rank() == 4, "bilinear_upsample: input must be NCHW");
    long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    long oh = h * scale, ow = w * scale;

    struct Tap {
        long i0, i1;
        T w1;  // weight of i1; i0 gets 1-w1
    };
    auto taps = [](long out_extent, long in_extent, int s) {
        std::vector<Tap> t(size_t(out_extent), Tap{});
        for (long o = 0; o < out_extent; ++o) {
            double src = (double(o) + 0.5) / double(s) - 0.5;
            double fl = std::floor(src);
            long i0 = long(fl);
            double frac = src - fl;
            long i1 = i0 + 1;
            t[size_t(o)] = {std::clamp(i0, 0L, in_extent - 1), std::clamp(i1, 0L, in_extent - 1),
                            T(frac)};
        }
        return t;
    };
    auto ty = taps(oh, h, scale);
    auto tx = taps(ow, w, scale);

    const auto& xd = x.data();
    std::vector<T> y(size_t(n * c * oh * ow));
    for (long p = 0; p < n * c; ++p) {
        const T* xp = &xd[size_t(p * h * w)];
        T* yp = &y[size_t(p * oh * ow)];
        for (long oy = 0; oy < oh; ++oy)
            for (long ox = 0; ox < ow; ++ox) {
                const Tap& a = ty[size_t(oy)];
                const Tap& b = tx[size_t(ox)];
                T top = xp[a.i0 * w + b.i0] * (T(1) - b.w1) + xp[a.i0 * w + b.i1] * b.w1;
                T bot = xp[a.i1 * w + b.i0] * (T(1) - b.w1) + xp[a.i1 * w + b.i1] * b.w1;
                yp[oy * ow + ox] = top * (T(1) - a.w1) + bot * a.w1;
            }
    }
    auto xn = x.node();
    return detail::make_result<T>(
        "bilinear_upsample", {n, c, oh, ow}, std::move(y), {x},
        [xn, n, c, h, w, oh, ow, ty, tx](const std::vector<T>& gout) {
            std::vector<T> gx(xn->value.size(), T(0));
            for (long p = 0; p < n * c; ++p) {
                T* gp = &gx[size_t(p * h * w)];
                const T* go = &gout[size_t(p * oh * ow)];
                for (long oy = 0; oy < oh; ++oy)
                    for (long ox = 0; ox < ow; ++ox) {
                        const Tap& a = ty[size_t(oy)];
                        const Tap& b = tx[size_t(ox)];
                        T g = go[oy * ow + ox];
                        gp[a.i0 * w + b.i0] += g * (T(1) - a.w1) * (T(1) - b.w1);
                        gp[a.i0 * w + b.i1] += g * (T(1) - a.w1) * b.w1;
                        gp[a.i1 * w + b.i0] += g * a.w1 * (T(1) - b.w1);
                        gp[a.i1 * w + b.i1] += g * a.w1 * b.w1;
                    }
            }
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

// NCHW -> NC11 spatial mean.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    check(x.rank() == 4, "global_avg_pool: input must be NCHW");
    long n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const auto& xd = x.data();
    std::vector<T> y(size_t(n * c));
    for (long p = 0; p < n * c; ++p) {
        T acc = T(0);
        for (long i = 0; i < hw; ++i) acc += xd[size_t(p * hw + i)];
        y[size_t(p)] = acc / T(hw);
    }
    auto xn = x.node();
    return detail::make_result<T>(
        "global_avg_pool", {n, c, 1, 1}, std::move(y), {x},
        [xn, n, c, hw](const std::vector<T>& gout) {
            std::vector<T> gx(xn->value.size());
            for (long p = 0; p < n * c; ++p)
                for (long i = 0; i < hw; ++i) gx[size_t(p * hw + i)] = gout[size_t(p)] / T(hw);
            xn->accum_grad(gx.data(), long(gx.size()));
        });
}

// Per-channel batch norm over N*H*W. Training mode normalizes with batch
// statistics (biased variance) and updates the running buffers in place
// (running variance stored unbiased); eval mode treats the buffers as
// constants, so it is single-image safe.
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5)) {
    check(x.rank() == 4, "batch_norm2d: input must be NCHW");
    long n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    check(gain.size() == c && offset.size() == c && running_mean.size() == c &&
              running_var.size() == c,
          "batch_norm2d: per-channel parameter extent mismatch");
    long cnt = n * hw;
    const auto& xd = x.data();
    std::vector<T> mean_c(size_t(c), T(0));
    std::vector<T> inv_std(size_t(c), T(0));
    if (training) {
        for (long ci = 0; ci < c; ++ci) {
            T mu = T(0);
            for (long s = 0; s < n; ++s)
                for (long i = 0; i < hw; ++i) mu += xd[size_t((s * c + ci) * hw + i)];
            mu /= T(cnt);
            T var = T(0);
            for (long s = 0; s < n; ++s)
                for (long i = 0; i < hw; ++i) {
                    T dv = xd[size_t((s * c + ci) * hw + i)] - mu;
                    var += dv * dv;
                }
            var /= T(cnt);
            mean_c[size_t(ci)] = mu;
            inv_std[size_t(ci)] = T(1) / std::sqrt(var + eps);
            T unbiased = cnt > 1 ? var * T(cnt) / T(cnt - 1) : var;
            running_mean.data()[size_t(ci)] =
                (T(1) - momentum) * running_mean.data()[size_t(ci)] + momentum * mu;
            running_var.data()[size_t(ci)] =
                (T(1) - momentum) * running_var.data()[size_t(ci)] + momentum * unbiased;
        }
    } else {
        for (long ci = 0; ci < c; ++ci) {
            mean_c[size_t(ci)] = running_mean.data()[size_t(ci)];
            inv_std[size_t(ci)] = T(1) / std::sqrt(running_var.data()[size_t(ci)] + eps);
        }
    }
    std::vector<T> y(xd.size());
    std::vector<T> xhat(xd.size());
    const auto& gd = gain.data();
    const auto& od = offset.data();
    for (long s = 0; s < n; ++s)
        for (long ci = 0; ci < c; ++ci)
            for (long i = 0; i < hw; ++i) {
                size_t ix = size_t((s * c + ci) * hw + i);
                T xh = (xd[ix] - mean_c[size_t(ci)]) * inv_std[size_t(ci)];
                xhat[ix] = xh;
                y[ix] = xh * gd[size_t(ci)] + od[size_t(ci)];
            }
    auto xn = x.node();
    auto gn = gain.node();
    auto on = offset.node();
    return detail::make_result<T>(
        "batch_norm2d", x.shape(), std::move(y), {x, gain, offset},
        [xn, gn, on, n, c, hw, cnt, training, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const std::vector<T>& gout) {
            if (xn->requires_grad) {
                std::vector<T> gx(gout.size());
                for (long ci = 0; ci < c; ++ci) {
                    T g = gn->value[size_t(ci)];
                    if (training) {
                        T mean_dy = T(0), mean_dyxh = T(0);
                        for (long s = 0; s < n; ++s)
                            for (long i = 0; i < hw; ++i) {
                                size_t ix = size_t((s * c + ci) * hw + i);
                                mean_dy += gout[ix];
                                mean_dyxh += gout[ix] * xhat[ix];
                            }
                        mean_dy /= T(cnt);
                        mean_dyxh /= T(cnt);
                        for (long s = 0; s < n; ++s)
                            for (long i = 0; i < hw; ++i) {
                                size_t ix = size_t((s * c + ci) * hw + i);
                                gx[ix] = (gout[ix] - mean_dy - xhat[ix] * mean_dyxh) * g *
                                         inv_std[size_t(ci)];
                            }
                    } else {
                        for (long s = 0; s < n; ++s)
                            for (long i = 0; i < hw; ++i) {
                                size_t ix = size_t((s * c + ci) * hw + i);
                                gx[ix] = gout[ix] * g * inv_std[size_t(ci)];
                            }
                    }
                }
                xn->accum_grad(gx.data(), long(gx.size()));
            }
            if (gn->requires_grad) {
                std::vector<T> gg(size_t(c), T(0));
                for (long s = 0; s < n; ++s)
                    for (long ci = 0; ci < c; ++ci)
                        for (long i = 0; i < hw; ++i) {
                            size_t ix = size_t((s * c + ci) * hw + i);
                            gg[size_t(ci)] += gout[ix] * xhat[ix];
                        }
                gn->accum_grad(gg.data(), long(gg.size()));
            }
            if (on->requires_grad) {
                std::vector<T> gb(size_t(c), T(0));
                for (long s = 0; s < n; ++s)
                    for (long ci = 0; ci < c; ++ci)
                        for (long i = 0; i < hw; ++i)
                            gb[size_t(ci)] += gout[size_t((s * c + ci) * hw + i)];
                on->accum_grad(gb.data(), long(gb.size()));
            }
        });
}

}  // namespace mitunet
