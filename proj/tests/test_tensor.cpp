#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mitunet/gradcheck.hpp"

using namespace mitunet;

namespace {

// Direct nested-loop convolution, the independent oracle for conv2d.
std::vector<double> conv_oracle(const std::vector<double>& x, long n, long c, long h, long w,
                                const std::vector<double>& wt, long oc, long kh, long kw,
                                long sh, long sw, long ph, long pw, long groups,
                                long& oh, long& ow) {
    oh = (h + 2 * ph - kh) / sh + 1;
    ow = (w + 2 * pw - kw) / sw + 1;
    long cg = c / groups, og = oc / groups;
    std::vector<double> y(size_t(n * oc * oh * ow), 0.0);
    for (long s = 0; s < n; ++s)
        for (long o = 0; o < oc; ++o) {
            long g = o / og;
            for (long oy = 0; oy < oh; ++oy)
                for (long ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (long ci = 0; ci < cg; ++ci)
                        for (long ky = 0; ky < kh; ++ky)
                            for (long kx = 0; kx < kw; ++kx) {
                                long iy = oy * sh - ph + ky;
                                long ix = ox * sw - pw + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x[size_t(((s * c + g * cg + ci) * h + iy) * w + ix)] *
                                       wt[size_t(((o * cg + ci) * kh + ky) * kw + kx)];
                            }
                    y[size_t(((s * oc + o) * oh + oy) * ow + ox)] = acc;
                }
        }
    return y;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
    auto x = Tensor<double>::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = Tensor<double>::from({1, 1, 1, 1}, {1.0});
    auto y = conv2d(x, w, Tensor<double>{});
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y.data()[size_t(i)] == doctest::Approx(x.data()[size_t(i)]));
}

TEST_CASE("conv2d channel sum") {
    auto x = Tensor<double>::filled({1, 2, 2, 2}, 1.0);
    auto w = Tensor<double>::from({1, 2, 1, 1}, {1.0, 1.0});
    auto y = conv2d(x, w, Tensor<double>{});
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv2d matches direct nested-loop oracle") {
    Rng rng(11);
    auto x = Tensor<double>::rand_uniform({1, 3, 8, 8}, rng);
    auto w = Tensor<double>::rand_uniform({4, 3, 3, 3}, rng);
    auto y = conv2d(x, w, Tensor<double>{}, {2, 2}, {1, 1});
    long oh, ow;
    auto ref = conv_oracle(x.data(), 1, 3, 8, 8, w.data(), 4, 3, 3, 2, 2, 1, 1, 1, oh, ow);
    REQUIRE(y.shape() == Shape{1, 4, 4, 4});
    REQUIRE(oh == 4);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d grouped matches oracle") {
    Rng rng(12);
    auto x = Tensor<double>::rand_uniform({2, 4, 6, 6}, rng);
    auto w = Tensor<double>::rand_uniform({4, 1, 3, 3}, rng);
    auto y = conv2d(x, w, Tensor<double>{}, {1, 1}, {1, 1}, 4);
    long oh, ow;
    auto ref = conv_oracle(x.data(), 2, 4, 6, 6, w.data(), 4, 3, 3, 1, 1, 1, 1, 4, oh, ow);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d rejects shape mismatch with a diagnostic") {
    auto x = Tensor<double>::zeros({1, 3, 4, 4});
    auto w = Tensor<double>::zeros({2, 2, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor<double>{}),
                         doctest::Contains("weight in-channel extent"), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({2, 3, 3, 3}), Tensor<double>{}, {1, 1},
                           {0, 0}, 3),
                    std::invalid_argument);
}

TEST_CASE("attention with a single key broadcasts v") {
    Rng rng(3);
    auto q = Tensor<double>::rand_uniform({1, 2, 4, 8}, rng);
    auto k = Tensor<double>::rand_uniform({1, 2, 1, 8}, rng);
    auto v = Tensor<double>::rand_uniform({1, 2, 1, 8}, rng);
    auto y = scaled_dot_product_attention(q, k, v);
    for (long hd = 0; hd < 2; ++hd)
        for (long l = 0; l < 4; ++l)
            for (long d = 0; d < 8; ++d)
                CHECK(y.data()[size_t((hd * 4 + l) * 8 + d)] ==
                      doctest::Approx(v.data()[size_t(hd * 8 + d)]));
}

TEST_CASE("attention with zero queries averages v") {
    Rng rng(4);
    auto q = Tensor<double>::zeros({1, 1, 2, 4});
    auto k = Tensor<double>::rand_uniform({1, 1, 5, 4}, rng);
    auto v = Tensor<double>::rand_uniform({1, 1, 5, 4}, rng);
    auto y = scaled_dot_product_attention(q, k, v);
    for (long l = 0; l < 2; ++l)
        for (long d = 0; d < 4; ++d) {
            double m = 0;
            for (long j = 0; j < 5; ++j) m += v.data()[size_t(j * 4 + d)];
            m /= 5;
            CHECK(y.data()[size_t(l * 4 + d)] == doctest::Approx(m));
        }
}

TEST_CASE("attention matches explicit loop oracle and rows sum to 1") {
    Rng rng(5);
    auto q = Tensor<double>::rand_uniform({1, 2, 4, 8}, rng);
    auto k = Tensor<double>::rand_uniform({1, 2, 4, 8}, rng);
    auto v = Tensor<double>::rand_uniform({1, 2, 4, 8}, rng);
    auto y = scaled_dot_product_attention(q, k, v);
    double scale = 1.0 / std::sqrt(8.0);
    for (long hd = 0; hd < 2; ++hd)
        for (long l = 0; l < 4; ++l) {
            std::vector<double> wrow(4);
            double denom = 0;
            for (long m = 0; m < 4; ++m) {
                double s = 0;
                for (long d = 0; d < 8; ++d)
                    s += q.data()[size_t((hd * 4 + l) * 8 + d)] *
                         k.data()[size_t((hd * 4 + m) * 8 + d)];
                wrow[size_t(m)] = std::exp(s * scale);
                denom += wrow[size_t(m)];
            }
            double rowsum = 0;
            for (long m = 0; m < 4; ++m) rowsum += wrow[size_t(m)] / denom;
            CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));
            for (long d = 0; d < 8; ++d) {
                double ref = 0;
                for (long m = 0; m < 4; ++m)
                    ref += wrow[size_t(m)] / denom * v.data()[size_t((hd * 4 + m) * 8 + d)];
                CHECK(std::abs(y.data()[size_t((hd * 4 + l) * 8 + d)] - ref) <=
                      1e-6 * std::max(1.0, std::abs(ref)));
            }
        }
}

TEST_CASE("attention rejects non-finite input") {
    auto q = Tensor<double>::filled({1, 1, 1, 2}, std::numeric_limits<double>::quiet_NaN());
    auto k = Tensor<double>::zeros({1, 1, 1, 2});
    CHECK_THROWS_AS(scaled_dot_product_attention(q, k, k), std::invalid_argument);
}

TEST_CASE("layer_norm examples") {
    auto gain = Tensor<double>::filled({3}, 1.0);
    auto off = Tensor<double>::zeros({3});
    auto x = Tensor<double>::filled({2, 3}, 4.2);
    auto y = layer_norm(x, 3, gain, off, 1e-5);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.0));

    auto g2 = Tensor<double>::filled({2}, 1.0);
    auto o2 = Tensor<double>::zeros({2});
    auto x2 = Tensor<double>::from({1, 2}, {1.0, 3.0});
    auto y2 = layer_norm(x2, 2, g2, o2, 1e-12);
    CHECK(y2.data()[0] == doctest::Approx(-1.0));
    CHECK(y2.data()[1] == doctest::Approx(1.0));

    Rng rng(6);
    auto xr = Tensor<double>::rand_uniform({2, 5}, rng);
    auto g5 = Tensor<double>::rand_uniform({5}, rng);
    auto o5 = Tensor<double>::rand_uniform({5}, rng);
    double eps = 1e-5;
    auto yr = layer_norm(xr, 5, g5, o5, eps);
    for (long r = 0; r < 2; ++r) {
        double mu = 0, var = 0;
        for (long j = 0; j < 5; ++j) mu += xr.data()[size_t(r * 5 + j)];
        mu /= 5;
        for (long j = 0; j < 5; ++j) {
            double d = xr.data()[size_t(r * 5 + j)] - mu;
            var += d * d;
        }
        var /= 5;
        for (long j = 0; j < 5; ++j) {
            double ref = (xr.data()[size_t(r * 5 + j)] - mu) / std::sqrt(var + eps) *
                             g5.data()[size_t(j)] +
                         o5.data()[size_t(j)];
            CHECK(yr.data()[size_t(r * 5 + j)] == doctest::Approx(ref));
        }
    }
    CHECK_THROWS_AS(layer_norm(xr, 5, g5, o5, 0.0), std::invalid_argument);
}

TEST_CASE("bilinear upsample examples") {
    auto c = Tensor<double>::filled({1, 2, 3, 3}, 7.5);
    auto yc = bilinear_upsample(c, 2);
    CHECK(yc.shape() == Shape{1, 2, 6, 6});
    for (double v : yc.data()) CHECK(v == doctest::Approx(7.5));

    auto x = Tensor<double>::from({1, 1, 1, 2}, {0.0, 1.0});
    auto y = bilinear_upsample(x, 2);
    REQUIRE(y.shape() == Shape{1, 1, 2, 4});
    std::vector<double> want = {0.0, 0.25, 0.75, 1.0};
    for (long r = 0; r < 2; ++r)
        for (long i = 0; i < 4; ++i)
            CHECK(y.data()[size_t(r * 4 + i)] == doctest::Approx(want[size_t(i)]));

    // 1/32 feature upsampled x2 matches a 1/16 skip spatially
    auto f32 = Tensor<double>::zeros({1, 3, 2, 2});
    CHECK(bilinear_upsample(f32, 2).shape() == Shape{1, 3, 4, 4});
    CHECK_THROWS_AS(bilinear_upsample(x, 1), std::invalid_argument);
}

TEST_CASE("pointwise basics") {
    CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == doctest::Approx(0.5));
    auto g = global_avg_pool(Tensor<double>::filled({2, 3, 4, 4}, 2.25));
    CHECK(g.shape() == Shape{2, 3, 1, 1});
    for (double v : g.data()) CHECK(v == doctest::Approx(2.25));
    CHECK_THROWS_AS(softmax(Tensor<double>::zeros({2, 3}), 5), std::invalid_argument);
}

TEST_CASE("backward: sum gives all-ones gradient") {
    Rng rng(7);
    auto x = Tensor<double>::rand_uniform({3, 4}, rng, -1, 1, true);
    backward(sum(x));
    for (double v : x.grad()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("backward: sum of squares gives 2x") {
    Rng rng(8);
    auto x = Tensor<double>::rand_uniform({2, 5}, rng, -1, 1, true);
    backward(sum(mul(x, x)));
    for (size_t i = 0; i < x.data().size(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));
}

TEST_CASE("backward rejects non-scalar root") {
    auto x = Tensor<double>::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), std::invalid_argument);
}

TEST_CASE("backward: composite conv-relu-sum matches finite differences") {
    OpCase<double> composite{
        "conv_relu_sum",
        {{1, 2, 5, 5}, {3, 2, 3, 3}},
        [](std::vector<Tensor<double>>& ins, Rng&) {
            for (auto& t : ins)
                for (auto& v : t.data())
                    if (std::abs(v) < 0.05) v += 0.1;
        },
        [](std::vector<Tensor<double>>& in) {
            return relu(conv2d(in[0], in[1], Tensor<double>{}, {1, 1}, {1, 1}));
        }};
    auto rep = grad_check(composite, 1e-4, 21);
    CHECK(rep.pass);
}

TEST_CASE("gradient accumulation across fan-out") {
    Rng rng(9);
    auto x = Tensor<double>::rand_uniform({4}, rng, -1, 1, true);
    // two branches: relu path grads + quadratic path grads add up
    auto branch_a = sum(mul(x, x));
    auto branch_b = sum(scale(x, 3.0));
    backward(add(branch_a, branch_b));
    for (size_t i = 0; i < 4; ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i] + 3.0));
}

TEST_CASE("backward is deterministic across repeated evaluation") {
    Rng rng(10);
    auto x = Tensor<double>::rand_uniform({3, 3}, rng, -1, 1, true);
    auto w = Tensor<double>::rand_uniform({3, 3}, rng, -1, 1, true);
    std::vector<double> first;
    for (int rep = 0; rep < 2; ++rep) {
        x.zero_grad();
        w.zero_grad();
        backward(sum(mul(matmul(x, w), matmul(x, w))));
        if (rep == 0)
            first = x.grad();
        else
            CHECK(first == x.grad());
    }
}

TEST_CASE("grad_check spec examples") {
    CHECK(grad_check<double>("relu", {{2, 3}}, 1e-4, 7).pass);
    CHECK(grad_check<double>("conv2d", {}, 1e-3, 99).pass);
    CHECK(grad_check<double>("softmax", {{4}}, 1e-4, 123).pass);
    CHECK_THROWS_AS(grad_check<double>("no_such_op", {}, 1e-3, 1), std::invalid_argument);
}

TEST_CASE("gelu gradient matches finite differences") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        auto rep = grad_check<double>("gelu", {{3, 3}}, 1e-4, seed);
        CHECK(rep.pass);
    }
}

TEST_CASE("registered op sweep, 64-bit") {
    for (auto& op : registered_ops<double>())
        for (uint64_t seed : {41ull, 42ull, 43ull}) {
            auto rep = grad_check(op, 1e-5, seed);
            INFO(op.name, " seed ", seed, " max_rel_err ", rep.max_rel_err);
            CHECK(rep.pass);
        }
}

TEST_CASE("tensor invariants") {
    auto t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == numel(t.shape()));
    CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}
