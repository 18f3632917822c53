#pragma once

#include <functional>
#include <map>

#include "mitunet/spatial.hpp"

namespace mitunet {

// One finite-difference test case: how to build inputs and run the op.
template <class T>
struct OpCase {
    std::string name;
    std::vector<Shape> shapes;
    // Optional input conditioning (positivity, distance from relu kinks, ...).
    std::function<void(std::vector<Tensor<T>>&, Rng&)> prepare;
    std::function<Tensor<T>(std::vector<Tensor<T>>&)> forward;
};

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central differences against the analytic gradient of a random linear
// functional of the output. Inputs larger than max_coords get a random
// coordinate subset (>= 32). The step balances truncation against forward
// roundoff: at 1e-4 a 32-bit forward's ~1e-7 relative noise divided by 2h
// already exceeds a 1e-3 tolerance, so single precision uses a larger step.
template <class T>
GradCheckReport grad_check(const OpCase<T>& op, double tol, uint64_t seed, long max_coords = 64) {
    const double h = sizeof(T) == 4 ? 1e-2 : 1e-4;
    Rng rng(seed);
    std::vector<Tensor<T>> inputs;
    for (const Shape& s : op.shapes)
        inputs.push_back(Tensor<T>::rand_uniform(s, rng, T(-1), T(1), true));
    if (op.prepare) op.prepare(inputs, rng);

    std::vector<Tensor<T>> work = inputs;
    Tensor<T> out = op.forward(work);
    Tensor<T> proj = Tensor<T>::rand_uniform(out.shape(), rng, T(-1), T(1));
    Tensor<T> loss = sum(mul(out, proj));
    backward(loss);

    auto eval_loss = [&]() {
        NoGradGuard ng;
        std::vector<Tensor<T>> w = inputs;
        Tensor<T> o = op.forward(w);
        double acc = 0.0;
        for (size_t i = 0; i < o.data().size(); ++i)
            acc += double(o.data()[i]) * double(proj.data()[i]);
        return acc;
    };

    GradCheckReport rep;
    rep.op = op.name;
    for (auto& in : inputs) {
        long n = in.size();
        std::vector<long> coords;
        if (n <= max_coords) {
            coords.resize(size_t(n));
            for (long i = 0; i < n; ++i) coords[size_t(i)] = i;
        } else {
            long want = std::max<long>(32, max_coords);
            for (long i = 0; i < want; ++i) coords.push_back(long(rng.uniform_int(uint64_t(n))));
        }
        const auto& g = in.grad();
        for (long ci : coords) {
            T saved = in.data()[size_t(ci)];
            in.data()[size_t(ci)] = T(double(saved) + h);
            double fp = eval_loss();
            in.data()[size_t(ci)] = T(double(saved) - h);
            double fm = eval_loss();
            in.data()[size_t(ci)] = saved;
            double fd = (fp - fm) / (2.0 * h);
            double an = g.empty() ? 0.0 : double(g[size_t(ci)]);
            double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1.0});
            rep.max_rel_err = std::max(rep.max_rel_err, err);
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

// Every differentiable op the model touches, with conditioned inputs where
// the math needs it. The gradcheck CLI and the acceptance sweep both iterate
// this list, so an op not registered here is an op the model may not use.
template <class T>
std::vector<OpCase<T>> registered_ops() {
    using Case = OpCase<T>;
    auto away_from_zero = [](std::vector<Tensor<T>>& ins, Rng&) {
        for (auto& t : ins)
            for (auto& v : t.data()) {
                if (v >= T(0) && v < T(0.05)) v += T(0.05);
                if (v < T(0) && v > T(-0.05)) v -= T(0.05);
            }
    };
    auto positive = [](std::vector<Tensor<T>>& ins, Rng&) {
        for (auto& v : ins[0].data()) v = std::abs(v) + T(0.5);
    };

    std::vector<Case> ops;
    ops.push_back({"relu", {{2, 3}}, away_from_zero,
                   [](auto& in) { return relu(in[0]); }});
    ops.push_back({"sigmoid", {{2, 3}}, nullptr, [](auto& in) { return sigmoid(in[0]); }});
    ops.push_back({"gelu", {{2, 3}}, nullptr, [](auto& in) { return gelu(in[0]); }});
    ops.push_back({"exp", {{2, 3}}, nullptr, [](auto& in) { return mitunet::exp(in[0]); }});
    ops.push_back({"log", {{2, 3}}, positive, [](auto& in) { return mitunet::log(in[0]); }});
    ops.push_back({"pow_scalar", {{2, 3}}, positive,
                   [](auto& in) { return pow_scalar(in[0], T(2.5)); }});
    ops.push_back({"add", {{2, 3}, {2, 3}}, nullptr, [](auto& in) { return add(in[0], in[1]); }});
    ops.push_back({"add_broadcast", {{2, 3, 4}, {3, 1}}, nullptr,
                   [](auto& in) { return add(in[0], in[1]); }});
    ops.push_back({"mul", {{2, 3}, {2, 3}}, nullptr, [](auto& in) { return mul(in[0], in[1]); }});
    ops.push_back({"mul_broadcast", {{2, 3, 4, 4}, {2, 3, 1, 1}}, nullptr,
                   [](auto& in) { return mul(in[0], in[1]); }});
    ops.push_back({"sum", {{3, 4}}, nullptr, [](auto& in) { return sum(in[0]); }});
    ops.push_back({"mean", {{3, 4}}, nullptr, [](auto& in) { return mean(in[0]); }});
    ops.push_back({"reshape", {{2, 6}}, nullptr,
                   [](auto& in) { return reshape(in[0], {3, 4}); }});
    ops.push_back({"permute", {{2, 3, 4}}, nullptr,
                   [](auto& in) { return permute(in[0], {2, 0, 1}); }});
    ops.push_back({"concat", {{2, 2, 3}, {2, 4, 3}}, nullptr,
                   [](auto& in) { return concat(std::vector<Tensor<T>>{in[0], in[1]}, 1); }});
    ops.push_back({"slice", {{2, 5, 3}}, nullptr, [](auto& in) { return slice(in[0], 1, 1, 3); }});
    ops.push_back({"index_select", {{10}}, nullptr, [](auto& in) {
                       return index_select_flat(in[0], {3, 1, 7, 1, 9});
                   }});
    ops.push_back({"matmul", {{2, 3, 4}, {2, 4, 5}}, nullptr,
                   [](auto& in) { return matmul(in[0], in[1]); }});
    ops.push_back({"linear", {{3, 4}, {5, 4}, {5}}, nullptr,
                   [](auto& in) { return linear(in[0], in[1], in[2]); }});
    ops.push_back({"softmax", {{4}}, nullptr, [](auto& in) { return softmax(in[0], 0); }});
    ops.push_back({"softmax_axis", {{2, 3, 4}}, nullptr,
                   [](auto& in) { return softmax(in[0], 1); }});
    ops.push_back({"log_softmax", {{2, 5}}, nullptr,
                   [](auto& in) { return log_softmax(in[0], 1); }});
    ops.push_back({"layer_norm", {{3, 5}, {5}, {5}}, nullptr, [](auto& in) {
                       return layer_norm(in[0], 5, in[1], in[2], T(1e-5));
                   }});
    ops.push_back({"attention", {{1, 2, 3, 4}, {1, 2, 5, 4}, {1, 2, 5, 4}}, nullptr,
                   [](auto& in) {
                       return scaled_dot_product_attention(in[0], in[1], in[2]);
                   }});
    ops.push_back({"conv2d", {{1, 3, 6, 6}, {4, 3, 3, 3}, {4}}, nullptr, [](auto& in) {
                       return conv2d(in[0], in[1], in[2], {2, 2}, {1, 1}, 1);
                   }});
    ops.push_back({"conv2d_depthwise", {{1, 4, 5, 5}, {4, 1, 3, 3}, {4}}, nullptr,
                   [](auto& in) {
                       return conv2d(in[0], in[1], in[2], {1, 1}, {1, 1}, 4);
                   }});
    ops.push_back({"bilinear_upsample", {{1, 2, 3, 3}}, nullptr,
                   [](auto& in) { return bilinear_upsample(in[0], 2); }});
    ops.push_back({"global_avg_pool", {{2, 3, 4, 4}}, nullptr,
                   [](auto& in) { return global_avg_pool(in[0]); }});
    ops.push_back({"batch_norm_train", {{3, 2, 4, 4}, {2}, {2}}, nullptr, [](auto& in) {
                       Tensor<T> rm = Tensor<T>::zeros({2});
                       Tensor<T> rv = Tensor<T>::filled({2}, T(1));
                       return batch_norm2d(in[0], in[1], in[2], rm, rv, true);
                   }});
    ops.push_back({"batch_norm_eval", {{2, 2, 3, 3}, {2}, {2}}, nullptr, [](auto& in) {
                       Tensor<T> rm = Tensor<T>::filled({2}, T(0.1));
                       Tensor<T> rv = Tensor<T>::filled({2}, T(0.9));
                       return batch_norm2d(in[0], in[1], in[2], rm, rv, false);
                   }});
    return ops;
}

// Spec-facing entry: look the op up by name; empty shape list uses the
// registered defaults. Unknown names are rejected.
template <class T>
GradCheckReport grad_check(const std::string& opname, const std::vector<Shape>& input_shapes,
                           double tolerance, uint64_t seed) {
    for (auto& op : registered_ops<T>()) {
        if (op.name == opname) {
            OpCase<T> c = op;
            if (!input_shapes.empty()) c.shapes = input_shapes;
            return grad_check(c, tolerance, seed);
        }
    }
    fail("grad_check: unknown op '" + opname + "'");
}

}  // namespace mitunet
