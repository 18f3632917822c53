#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mitunet/gradcheck.hpp"
#include "mitunet/losses.hpp"

using namespace mitunet;

namespace {

// Builds hard 2-class logits from a binary prediction pattern. +-50 saturates
// softmax to exactly 0/1 in double precision.
Tensor<double> hard_logits(const std::vector<int>& pred, long h, long w) {
    std::vector<double> lg(size_t(2 * h * w));
    for (long i = 0; i < h * w; ++i) {
        lg[size_t(i)] = pred[size_t(i)] ? -50.0 : 50.0;
        lg[size_t(h * w + i)] = pred[size_t(i)] ? 50.0 : -50.0;
    }
    return Tensor<double>::from({1, 2, h, w}, std::move(lg));
}

Tensor<double> target_of(const std::vector<int>& g, long h, long w) {
    std::vector<double> t(size_t(h * w));
    for (size_t i = 0; i < t.size(); ++i) t[i] = double(g[i]);
    return Tensor<double>::from({1, h, w}, std::move(t));
}

Tensor<double> random_logits(Rng& rng, Shape s) {
    return Tensor<double>::rand_uniform(s, rng, -2.0, 2.0);
}

Tensor<double> random_target(Rng& rng, long n, long h, long w) {
    std::vector<double> t(size_t(n * h * w));
    for (auto& v : t) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return Tensor<double>::from({n, h, w}, std::move(t));
}

}  // namespace

TEST_CASE("soft confusion identities") {
    Rng rng(1);
    auto lg = random_logits(rng, {2, 2, 4, 4});
    auto tg = random_target(rng, 2, 4, 4);
    auto c = soft_confusion(lg, tg);
    double sum_g = 0;
    for (double v : tg.data()) sum_g += v;
    auto p = softmax(lg, 1);
    double sum_p = 0;
    for (long n = 0; n < 2; ++n)
        for (long i = 0; i < 16; ++i) sum_p += p.data()[size_t(n * 32 + 16 + i)];
    CHECK(c.tp.item() + c.fn.item() == doctest::Approx(sum_g));
    CHECK(c.tp.item() + c.fp.item() == doctest::Approx(sum_p));
    CHECK(c.tp.item() >= 0);
    CHECK(c.fp.item() >= 0);
    CHECK(c.fn.item() >= 0);
}

TEST_CASE("tversky: perfect prediction gives zero loss") {
    std::vector<int> g = {1, 0, 1, 1, 0, 0, 1, 0};
    auto loss = tversky_loss(hard_logits(g, 2, 4), target_of(g, 2, 4), 0.6, 0.4, 1e-9);
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("tversky: direct arithmetic spot value (tp=8 fp=2 fn=4)") {
    // 24 pixels, 12 foreground; predict 8 of them plus 2 background pixels
    std::vector<int> g(24, 0), pred(24, 0);
    for (int i = 0; i < 12; ++i) g[size_t(i)] = 1;
    for (int i = 0; i < 8; ++i) pred[size_t(i)] = 1;      // tp = 8, fn = 4
    pred[12] = pred[13] = 1;                              // fp = 2
    auto loss = tversky_loss(hard_logits(pred, 4, 6), target_of(g, 4, 6), 0.6, 0.4, 1e-9);
    CHECK(loss.item() == doctest::Approx(1.0 - 8.0 / 10.8).epsilon(1e-7));
    CHECK(std::abs(loss.item() - 0.259259) < 1e-6);
}

TEST_CASE("tversky rejects non-positive alpha or beta") {
    std::vector<int> g = {1, 0};
    CHECK_THROWS_AS(tversky_loss(hard_logits(g, 1, 2), target_of(g, 1, 2), 0.0, 0.5, 1e-6),
                    std::invalid_argument);
    CHECK_THROWS_AS(tversky_loss(hard_logits(g, 1, 2), target_of(g, 1, 2), 0.5, -0.1, 1e-6),
                    std::invalid_argument);
}

TEST_CASE("tversky(0.5,0.5) equals dice over random inputs") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        auto lg = random_logits(rng, {1, 2, 4, 4});
        auto tg = random_target(rng, 1, 4, 4);
        double tv = tversky_loss(lg, tg, 0.5, 0.5, 1e-6).item();
        double dc = dice_loss(lg, tg, 1e-6).item();
        CHECK(std::abs(tv - dc) <= 1e-6);
    }
}

TEST_CASE("dice arithmetic: uniform p=0.5, half-ones target") {
    auto lg = Tensor<double>::zeros({1, 2, 2, 2});  // softmax -> p = 0.5 everywhere
    auto tg = target_of({1, 1, 0, 0}, 2, 2);
    // tp = 1, fp = 1, fn = 1 -> 1 - 2*1/(2*1 + 1 + 1)
    CHECK(dice_loss(lg, tg, 1e-9).item() == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("focal gamma=0 equals cross entropy") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto lg = random_logits(rng, {2, 2, 3, 3});
        auto tg = random_target(rng, 2, 3, 3);
        CHECK(std::abs(focal_loss(lg, tg, 0.0).item() - cross_entropy(lg, tg).item()) <= 1e-7);
    }
}

TEST_CASE("focal arithmetic: p_t = 0.9, gamma = 2") {
    // single pixel; logit gap ln 9 puts 0.9 on the true class
    double d = std::log(9.0);
    auto lg = Tensor<double>::from({1, 2, 1, 1}, {0.0, d});
    auto tg = target_of({1}, 1, 1);
    CHECK(focal_loss(lg, tg, 2.0).item() ==
          doctest::Approx(0.01 * (-std::log(0.9))).epsilon(1e-9));
    CHECK(focal_loss(lg, tg, 2.0).item() == doctest::Approx(0.0010536).epsilon(1e-3));
}

TEST_CASE("focal is monotone decreasing in p_t") {
    auto tg = target_of({1}, 1, 1);
    double prev = 1e9;
    for (double gap : {0.5, 1.0, 2.0, 4.0}) {
        auto lg = Tensor<double>::from({1, 2, 1, 1}, {0.0, gap});
        double v = focal_loss(lg, tg, 2.0).item();
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("focal rejects negative gamma") {
    auto tg = target_of({1}, 1, 1);
    auto lg = Tensor<double>::zeros({1, 2, 1, 1});
    CHECK_THROWS_AS(focal_loss(lg, tg, -1.0), std::invalid_argument);
}

TEST_CASE("cross entropy examples") {
    auto tg = target_of({1, 0}, 1, 2);
    CHECK(cross_entropy(Tensor<double>::zeros({1, 2, 1, 2}), tg).item() ==
          doctest::Approx(std::log(2.0)));

    auto lg = Tensor<double>::from({1, 2, 1, 1}, {0.0, 10.0});
    CHECK(cross_entropy(lg, target_of({1}, 1, 1)).item() ==
          doctest::Approx(std::log(1.0 + std::exp(-10.0))).epsilon(1e-9));

    Rng rng(4);
    auto l2 = random_logits(rng, {1, 2, 3, 3});
    auto t2 = random_target(rng, 1, 3, 3);
    auto shifted = add_scalar(l2, 7.25);
    CHECK(cross_entropy(l2, t2).item() == doctest::Approx(cross_entropy(shifted, t2).item()));
}

TEST_CASE("lovasz: perfect hard prediction gives zero") {
    std::vector<int> g = {1, 0, 1, 0, 0, 1};
    CHECK(lovasz_softmax(hard_logits(g, 2, 3), target_of(g, 2, 3)).item() ==
          doctest::Approx(0.0));
}

TEST_CASE("lovasz: all-foreground target with uniform p=0.5 gives 0.5") {
    auto lg = Tensor<double>::zeros({1, 2, 2, 3});
    CHECK(lovasz_softmax(lg, target_of({1, 1, 1, 1, 1, 1}, 2, 3)).item() ==
          doctest::Approx(0.5));
}

TEST_CASE("lovasz vertex property: equals 1 - IoU on all 2^6 hard predictions") {
    Rng rng(5);
    for (int rep = 0; rep < 4; ++rep) {
        std::vector<int> g(6, 0);
        int fg = 0;
        while (fg == 0) {
            fg = 0;
            for (auto& v : g) {
                v = rng.uniform() < 0.5 ? 1 : 0;
                fg += v;
            }
        }
        for (int patt = 0; patt < 64; ++patt) {
            std::vector<int> pred(6);
            for (int i = 0; i < 6; ++i) pred[size_t(i)] = (patt >> i) & 1;
            double got = lovasz_softmax(hard_logits(pred, 2, 3), target_of(g, 2, 3)).item();
            long inter = 0, uni = 0;
            for (int i = 0; i < 6; ++i) {
                inter += pred[size_t(i)] && g[size_t(i)];
                uni += pred[size_t(i)] || g[size_t(i)];
            }
            double iou = uni ? double(inter) / double(uni) : 1.0;
            CHECK(got == doctest::Approx(1.0 - iou).epsilon(1e-12));
        }
    }
}

TEST_CASE("asymmetry monotonicity in alpha and beta") {
    Rng rng(6);
    auto lg = random_logits(rng, {1, 2, 4, 4});
    auto tg = random_target(rng, 1, 4, 4);
    double prev = -1;
    for (double a = 0.2; a < 1.61; a += 0.2) {
        double v = tversky_loss(lg, tg, a, 0.4, 1e-6).item();
        CHECK(v > prev);
        prev = v;
    }
    prev = -1;
    for (double b = 0.2; b < 1.61; b += 0.2) {
        double v = tversky_loss(lg, tg, 0.6, b, 1e-6).item();
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("all losses are nonnegative") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto lg = random_logits(rng, {1, 2, 4, 4});
        auto tg = random_target(rng, 1, 4, 4);
        CHECK(tversky_loss(lg, tg, 0.6, 0.4, 1e-6).item() >= 0.0);
        CHECK(dice_loss(lg, tg, 1e-6).item() >= 0.0);
        CHECK(focal_loss(lg, tg, 2.0).item() >= 0.0);
        CHECK(cross_entropy(lg, tg).item() >= 0.0);
        CHECK(lovasz_softmax(lg, tg).item() >= 0.0);
    }
}

TEST_CASE("loss gradients match finite differences (64-bit)") {
    Rng trng(8);
    auto tg = random_target(trng, 2, 4, 4);
    auto case_for = [&](const std::string& name,
                        std::function<Tensor<double>(const Tensor<double>&)> fn) {
        OpCase<double> c;
        c.name = name;
        c.shapes = {{2, 2, 4, 4}};
        c.forward = [fn](std::vector<Tensor<double>>& in) { return fn(in[0]); };
        return c;
    };
    std::vector<OpCase<double>> cases = {
        case_for("tversky", [&](const Tensor<double>& l) {
            return tversky_loss(l, tg, 0.6, 0.4, 1e-6);
        }),
        case_for("dice", [&](const Tensor<double>& l) { return dice_loss(l, tg, 1e-6); }),
        case_for("focal", [&](const Tensor<double>& l) { return focal_loss(l, tg, 2.0); }),
        case_for("ce", [&](const Tensor<double>& l) { return cross_entropy(l, tg); }),
        case_for("lovasz", [&](const Tensor<double>& l) { return lovasz_softmax(l, tg); }),
    };
    for (auto& c : cases) {
        auto rep = grad_check(c, 1e-3, 42);
        INFO(c.name, " max_rel_err ", rep.max_rel_err);
        CHECK(rep.pass);
    }
}

TEST_CASE("segmentation_loss dispatch and spec parsing") {
    Rng rng(9);
    auto lg = random_logits(rng, {1, 2, 4, 4});
    auto tg = random_target(rng, 1, 4, 4);
    LossSpec spec;
    spec.variant = loss_variant_from_string("dice");
    CHECK(segmentation_loss(spec, lg, tg).item() ==
          doctest::Approx(dice_loss(lg, tg, 1e-6).item()));
    CHECK_THROWS_AS(loss_variant_from_string("hinge"), std::invalid_argument);
    LossSpec tv;
    CHECK(tv.display() == "Tversky (0.6 / 0.4)");
}

TEST_CASE("lovasz rejects empty input") {
    CHECK_THROWS_AS(
        lovasz_softmax(Tensor<double>::zeros({1, 2, 0, 2}), Tensor<double>::zeros({1, 0, 2})),
        std::invalid_argument);
}
