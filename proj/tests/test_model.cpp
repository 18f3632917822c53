#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>

#include "mitunet/model.hpp"

using namespace mitunet;

namespace {

// Frozen per-preset totals, derived by hand from the layer formulas:
//   conv: out*(in/groups)*k*k (+out with bias), linear: out*in+out,
//   layer norm / batch norm: 2*channels.
constexpr long kNanoParams = 98774;
constexpr long kB0Params = 5572261;
constexpr long kB4Params = 64146181;

std::string tmp_path(const std::string& stem) {
    return std::string("/tmp/mitunet_test_") + stem;
}

}  // namespace

TEST_CASE("presets validate; unknown preset rejected") {
    for (const char* name : {"nano", "b0", "b1", "b2", "b3", "b4"})
        CHECK_NOTHROW(ModelConfig::preset(name));
    CHECK_THROWS_AS(ModelConfig::preset("b9"), std::invalid_argument);
}

TEST_CASE("config invariants are enforced") {
    ModelConfig cfg = ModelConfig::preset("nano");
    cfg.encoder.stages[0].patch_stride = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = ModelConfig::preset("nano");
    cfg.encoder.stages[2].embed_dim = 25;  // not divisible by 4 heads
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = ModelConfig::preset("nano");
    cfg.decoder.fusion_channels.push_back(8);
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = ModelConfig::preset("nano");
    cfg.decoder.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("parameter counts match frozen hand-derived totals") {
    NoGradGuard ng;
    MitUNet<float> nano(ModelConfig::preset("nano"), 1);
    CHECK(nano.parameter_count() == kNanoParams);
    MitUNet<float> b0(ModelConfig::preset("b0"), 1);
    CHECK(b0.parameter_count() == kB0Params);
    MitUNet<float> b4(ModelConfig::preset("b4"), 1);
    CHECK(b4.parameter_count() == kB4Params);
}

TEST_CASE("parameter and buffer names are unique and well-formed") {
    NoGradGuard ng;
    MitUNet<float> m(ModelConfig::preset("nano"), 1);
    std::set<std::string> seen;
    for (const auto& [name, t] : m.parameters()) {
        CHECK(seen.insert(name).second);
        CHECK(t.size() > 0);
        CHECK((name.rfind("encoder.", 0) == 0 || name.rfind("decoder.", 0) == 0));
    }
    for (const auto& [name, t] : m.buffers()) {
        CHECK(seen.insert(name).second);
        CHECK(name.find("running_") != std::string::npos);
    }
    CHECK(m.buffers().size() == 5 * 2 * 2);  // five decoder blocks, two bn, two buffers
}

TEST_CASE("shape ladder: encoder strides and full-resolution logits") {
    NoGradGuard ng;
    Rng rng(7);
    for (const char* name : {"nano", "b0"}) {
        MitUNet<float> m(ModelConfig::preset(name), 3);
        auto img = Tensor<float>::rand_uniform({1, 3, 64, 64}, rng, -1.f, 1.f);
        auto feats = m.encoder_forward(img);
        const auto& st = m.config().encoder.stages;
        for (int i = 0; i < 4; ++i) {
            long stride = 4L << i;
            CHECK(feats[size_t(i)].shape() ==
                  Shape{1, st[size_t(i)].embed_dim, 64 / stride, 64 / stride});
        }
        auto logits = m.forward(img, false);
        CHECK(logits.shape() == Shape{1, 2, 64, 64});
        for (float v : logits.data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("encoder rejects bad inputs with diagnostics") {
    NoGradGuard ng;
    MitUNet<float> m(ModelConfig::preset("nano"), 1);
    CHECK_THROWS_AS(m.encoder_forward(Tensor<float>::zeros({1, 1, 64, 64})),
                    std::invalid_argument);
    CHECK_THROWS_AS(m.encoder_forward(Tensor<float>::zeros({1, 3, 48, 64})),
                    std::invalid_argument);
}

TEST_CASE("attention with sr_ratio=1 matches a per-head loop oracle") {
    NoGradGuard ng;
    Rng rng(11);
    const long n = 1, hh = 2, ww = 2, c = 4, heads = 2, dh = c / heads;
    auto attn = EfficientAttention<double>::make(c, heads, 1, rng);
    auto tokens = Tensor<double>::rand_uniform({n, hh * ww, c}, rng, -1.0, 1.0);
    auto got = attn.forward(tokens, hh, ww);

    auto apply_linear = [&](const LinearLayer<double>& lyr, const std::vector<double>& x) {
        std::vector<double> y(size_t(c), 0.0);
        for (long o = 0; o < c; ++o) {
            double acc = lyr.b.data()[size_t(o)];
            for (long i = 0; i < c; ++i) acc += lyr.w.data()[size_t(o * c + i)] * x[size_t(i)];
            y[size_t(o)] = acc;
        }
        return y;
    };
    const long L = hh * ww;
    std::vector<std::vector<double>> q(L), k(L), v(L);
    for (long t = 0; t < L; ++t) {
        std::vector<double> x(size_t(c), 0.0);
        for (long i = 0; i < c; ++i) x[size_t(i)] = tokens.data()[size_t(t * c + i)];
        q[size_t(t)] = apply_linear(attn.q, x);
        k[size_t(t)] = apply_linear(attn.k, x);
        v[size_t(t)] = apply_linear(attn.v, x);
    }
    for (long t = 0; t < L; ++t) {
        std::vector<double> ctx(size_t(c), 0.0);
        for (long h = 0; h < heads; ++h) {
            std::vector<double> logits(size_t(L), 0.0);
            for (long s = 0; s < L; ++s) {
                double dot = 0;
                for (long d = 0; d < dh; ++d)
                    dot += q[size_t(t)][size_t(h * dh + d)] * k[size_t(s)][size_t(h * dh + d)];
                logits[size_t(s)] = dot / std::sqrt(double(dh));
            }
            double mx = *std::max_element(logits.begin(), logits.end()), z = 0;
            for (auto& lv : logits) {
                lv = std::exp(lv - mx);
                z += lv;
            }
            for (long s = 0; s < L; ++s)
                for (long d = 0; d < dh; ++d)
                    ctx[size_t(h * dh + d)] += logits[size_t(s)] / z * v[size_t(s)][size_t(h * dh + d)];
        }
        std::vector<double> out = apply_linear(attn.proj, ctx);
        for (long i = 0; i < c; ++i)
            CHECK(got.data()[size_t(t * c + i)] == doctest::Approx(out[size_t(i)]).epsilon(1e-10));
    }
}

TEST_CASE("attention with sr_ratio=2 on a 2x2 grid collapses to one key") {
    NoGradGuard ng;
    Rng rng(12);
    const long c = 6;
    auto attn = EfficientAttention<double>::make(c, 2, 2, rng);
    auto tokens = Tensor<double>::rand_uniform({1, 4, c}, rng, -1.0, 1.0);
    auto got = attn.forward(tokens, 2, 2);
    // A single reduced key/value token makes every softmax weight 1, so all
    // four output rows must be identical.
    for (long t = 1; t < 4; ++t)
        for (long i = 0; i < c; ++i)
            CHECK(got.data()[size_t(t * c + i)] ==
                  doctest::Approx(got.data()[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("mix_ffn with identity depthwise kernel equals pure MLP") {
    NoGradGuard ng;
    Rng rng(13);
    const long c = 3, exp_f = 4, hidden = c * exp_f;
    auto ffn = MixFfn<double>::make(c, exp_f, rng);
    // center tap 1, everything else 0 -> the conv mixes nothing spatially
    for (auto& v : ffn.dw.w.data()) v = 0.0;
    for (long ch = 0; ch < hidden; ++ch) ffn.dw.w.data()[size_t(ch * 9 + 4)] = 1.0;
    for (auto& v : ffn.dw.b.data()) v = 0.0;

    auto tokens = Tensor<double>::rand_uniform({1, 4, c}, rng, -1.0, 1.0);
    auto got = ffn.forward(tokens, 2, 2);
    auto want = ffn.fc2.forward(gelu(ffn.fc1.forward(tokens)));
    REQUIRE(got.shape() == want.shape());
    for (size_t i = 0; i < got.data().size(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("scSE with zeroed weights is the identity") {
    NoGradGuard ng;
    Rng rng(14);
    auto scse = ScseBlock<double>::make(8, 4, rng);
    for (auto coll : {&scse.fc1.w, &scse.fc1.b, &scse.fc2.w, &scse.fc2.b, &scse.spatial.w,
                      &scse.spatial.b})
        for (auto& v : coll->data()) v = 0.0;
    auto x = Tensor<double>::rand_uniform({2, 8, 3, 3}, rng, -1.0, 1.0);
    auto y = scse.forward(x);
    // both gates sit at sigmoid(0)=0.5 and the branches add back to x
    for (size_t i = 0; i < x.data().size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("decoder block matches manual composition of its pieces") {
    NoGradGuard ng;
    Rng rng(15);
    auto blk = DecoderBlock<double>::make(4, 3, 8, true, 4, rng);
    auto x = Tensor<double>::rand_uniform({1, 4, 2, 2}, rng, -1.0, 1.0);
    auto skip = Tensor<double>::rand_uniform({1, 3, 4, 4}, rng, -1.0, 1.0);
    auto got = blk.forward(x, skip, false);

    auto up = concat(std::vector<Tensor<double>>{bilinear_upsample(x, 2), skip}, 1);
    auto y = relu(blk.bn1.forward(blk.conv1.forward(up), false));
    y = relu(blk.bn2.forward(blk.conv2.forward(y), false));
    y = blk.scse->forward(y);
    REQUIRE(got.shape() == y.shape());
    for (size_t i = 0; i < y.data().size(); ++i)
        CHECK(got.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));
}

TEST_CASE("patch embed grid extents and overlap support") {
    NoGradGuard ng;
    Rng rng(16);
    StageConfig sc{5, 1, 1, 1, 7, 4, 3};
    auto pe = PatchEmbed<double>::make(3, sc, rng);
    auto x = Tensor<double>::rand_uniform({1, 3, 16, 16}, rng, -1.0, 1.0);
    auto [tokens, h, w] = pe.forward(x);
    CHECK(h == 4);
    CHECK(w == 4);
    CHECK(tokens.shape() == Shape{1, 16, 5});

    // Overlapping 7x7/stride-4 embedding: pixel (2,2) sits outside token
    // (1,1)'s nominal 4x4 cell (rows/cols 4..7) but inside its receptive
    // field (1..7), so it must still influence that token.
    auto x2 = x;
    x2.data()[size_t(0 * 16 * 16 + 2 * 16 + 2)] += 0.25;
    auto [tokens2, h2, w2] = pe.forward(x2);
    double delta = 0;
    for (long cidx = 0; cidx < 5; ++cidx)
        delta += std::abs(tokens2.data()[size_t((4 + 1) * 5 + cidx)] -
                          tokens.data()[size_t((4 + 1) * 5 + cidx)]);
    CHECK(delta > 0);
}

TEST_CASE("identical seeds give identical models; different seeds differ") {
    NoGradGuard ng;
    MitUNet<float> a(ModelConfig::preset("nano"), 42);
    MitUNet<float> b(ModelConfig::preset("nano"), 42);
    MitUNet<float> c(ModelConfig::preset("nano"), 43);
    REQUIRE(a.parameters().size() == b.parameters().size());
    bool all_eq = true, any_diff_c = false;
    for (size_t i = 0; i < a.parameters().size(); ++i) {
        const auto& ta = a.parameters()[i].second.data();
        const auto& tb = b.parameters()[i].second.data();
        const auto& tc = c.parameters()[i].second.data();
        for (size_t j = 0; j < ta.size(); ++j) {
            all_eq = all_eq && ta[j] == tb[j];
            any_diff_c = any_diff_c || ta[j] != tc[j];
        }
    }
    CHECK(all_eq);
    CHECK(any_diff_c);
}

TEST_CASE("checkpoint round-trip is bit exact and transfers state") {
    NoGradGuard ng;
    Rng rng(17);
    MitUNet<float> src(ModelConfig::preset("nano"), 42);
    src.step = 123;
    // make buffers non-trivial so the round trip covers them
    for (auto& [name, t] : src.buffers())
        for (auto& v : t.data()) v += 0.125f;

    std::string path = tmp_path("ckpt.mitu");
    Checkpoint::from_model(src).save(path);
    Checkpoint ck = Checkpoint::load(path);
    CHECK(ck.preset == "nano");
    CHECK(ck.step == 123);

    MitUNet<float> dst(ModelConfig::preset("nano"), 7);
    ck.apply(dst);
    CHECK(dst.step == 123);
    auto img = Tensor<float>::rand_uniform({1, 3, 32, 32}, rng, -1.f, 1.f);
    auto ya = src.forward(img, false);
    auto yb = dst.forward(img, false);
    for (size_t i = 0; i < ya.data().size(); ++i) CHECK(ya.data()[i] == yb.data()[i]);

    // save(load(x)) byte-identical
    std::string path2 = tmp_path("ckpt2.mitu");
    ck.save(path2);
    auto slurp = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("checkpoint rejects wrong architecture and corrupt files") {
    NoGradGuard ng;
    MitUNet<float> nano(ModelConfig::preset("nano"), 1);
    MitUNet<float> b0(ModelConfig::preset("b0"), 1);
    Checkpoint ck = Checkpoint::from_model(nano);
    CHECK_THROWS_AS(ck.apply(b0), std::invalid_argument);

    std::string path = tmp_path("bad.mitu");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTM0000junk";
    }
    CHECK_THROWS_AS(Checkpoint::load(path), std::invalid_argument);
    std::remove(path.c_str());
    CHECK_THROWS_AS(Checkpoint::load(tmp_path("missing.mitu")), std::invalid_argument);
}

TEST_CASE("end-to-end backward reaches every parameter") {
    MitUNet<double> m(ModelConfig::preset("nano"), 5);
    Rng rng(18);
    auto img = Tensor<double>::rand_uniform({1, 3, 64, 64}, rng, -1.0, 1.0);
    auto logits = m.forward(img, false);
    backward(sum(mul(logits, logits)));
    long with_grad = 0, nonzero = 0, total = 0;
    for (auto& [name, t] : m.parameters()) {
        INFO("param ", name);
        REQUIRE(t.node()->grad.size() == t.data().size());
        bool any = false;
        for (double g : t.node()->grad) {
            CHECK(std::isfinite(g));
            any = any || g != 0.0;
        }
        ++total;
        ++with_grad;
        nonzero += any ? 1 : 0;
    }
    CHECK(with_grad == total);
    // Generic inputs should light up nearly every tensor. The few legitimate
    // exceptions are the channel-excitation gates whose 2-3 hidden relu units
    // can all be dead at initialization.
    CHECK(double(nonzero) >= 0.9 * double(total));
}

TEST_CASE("model gradients match finite differences (64-bit)") {
    MitUNet<double> m(ModelConfig::preset("nano"), 9);
    Rng rng(19);
    auto img = Tensor<double>::rand_uniform({1, 3, 32, 32}, rng, -0.5, 0.5);
    auto weights = Tensor<double>::rand_uniform({1, 2, 32, 32}, rng, -1.0, 1.0).detach();

    auto objective = [&]() { return sum(mul(m.forward(img, false), weights)); };
    auto y = objective();
    backward(y);

    // sample coordinates across all parameter tensors
    auto& params = m.parameters();
    long total = m.parameter_count();
    // A small step keeps the finite difference from crossing relu kinks
    // elsewhere in the network; 64-bit precision leaves ample headroom.
    // (1e-5 still crosses a kink on rare coordinates; 1e-6 does not.)
    const double h = 1e-6;
    double max_rel = 0;
    int checked = 0;
    Rng pick(20);
    while (checked < 64) {
        long flat = long(pick.uniform_int(uint64_t(total)));
        long acc = 0;
        for (auto& [name, t] : params) {
            if (flat < acc + t.size()) {
                size_t idx = size_t(flat - acc);
                double analytic = t.node()->grad[idx];
                double keep = t.data()[idx];
                NoGradGuard ng;
                t.data()[idx] = keep + h;
                double fp = objective().item();
                t.data()[idx] = keep - h;
                double fm = objective().item();
                t.data()[idx] = keep;
                double fd = (fp - fm) / (2 * h);
                double rel = std::abs(analytic - fd) /
                             std::max({std::abs(analytic), std::abs(fd), 1.0});
                INFO("param ", name, "[", idx, "] analytic ", analytic, " fd ", fd);
                CHECK(rel <= 1e-3);
                max_rel = std::max(max_rel, rel);
                ++checked;
                break;
            }
            acc += t.size();
        }
    }
    MESSAGE("model fd sweep max rel err ", max_rel);
}

TEST_CASE("batch norm training mode updates buffers; eval mode does not") {
    Rng rng(21);
    auto blk = DecoderBlock<float>::make(4, 0, 8, false, 4, rng);
    auto x = Tensor<float>::rand_uniform({2, 4, 4, 4}, rng, -1.f, 1.f);
    auto before = blk.bn1.running_mean.data();
    {
        NoGradGuard ng;
        blk.forward(x, Tensor<float>{}, false);
    }
    CHECK(blk.bn1.running_mean.data() == before);
    {
        NoGradGuard ng;
        blk.forward(x, Tensor<float>{}, true);
    }
    CHECK(blk.bn1.running_mean.data() != before);
}
