#include "mitunet/losses.hpp"

#include <algorithm>
#include <numeric>

namespace mitunet {

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "ce") return LossVariant::ce;
    if (s == "dice") return LossVariant::dice;
    if (s == "focal") return LossVariant::focal;
    if (s == "lovasz") return LossVariant::lovasz;
    if (s == "tversky") return LossVariant::tversky;
    fail("unknown loss variant '" + s + "' (expected ce|dice|focal|lovasz|tversky)");
}

std::string loss_variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::ce: return "ce";
        case LossVariant::dice: return "dice";
        case LossVariant::focal: return "focal";
        case LossVariant::lovasz: return "lovasz";
        case LossVariant::tversky: return "tversky";
    }
    return "?";
}

void LossSpec::validate() const {
    if (variant == LossVariant::tversky)
        check(alpha > 0 && beta > 0, "tversky loss requires alpha > 0 and beta > 0");
    check(gamma >= 0, "focal gamma must be >= 0");
    check(smooth_eps > 0, "smooth_eps must be positive");
}

std::string LossSpec::display() const {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2g", v);
        return std::string(buf);
    };
    switch (variant) {
        case LossVariant::ce: return "CE";
        case LossVariant::dice: return "Dice";
        case LossVariant::focal: return "Focal";
        case LossVariant::lovasz: return "Lovasz";
        case LossVariant::tversky:
            return "Tversky (" + fmt(alpha) + " / " + fmt(beta) + ")";
    }
    return "?";
}

namespace {

template <class T>
void check_seg_inputs(const Tensor<T>& logits, const Tensor<T>& target) {
    check(logits.rank() == 4 && logits.dim(1) == 2,
          "loss: logits must be [N,2,H,W], got " + shape_str(logits.shape()));
    check(target.rank() == 3, "loss: target must be [N,H,W], got " + shape_str(target.shape()));
    check(target.dim(0) == logits.dim(0) && target.dim(1) == logits.dim(2) &&
              target.dim(2) == logits.dim(3),
          "loss: target extents " + shape_str(target.shape()) + " do not pair with logits " +
              shape_str(logits.shape()));
    for (T v : target.data())
        check(v == T(0) || v == T(1), "loss: target must be strictly binary");
}

// Foreground probability as a flat [N*H*W] tensor.
template <class T>
Tensor<T> foreground_prob(const Tensor<T>& logits) {
    Tensor<T> p = softmax(logits, 1);
    Tensor<T> pf = slice(p, 1, 1, 1);
    return reshape(pf, {logits.dim(0) * logits.dim(2) * logits.dim(3)});
}

// Per-pixel log-probability of the true class, flat [N*H*W].
template <class T>
Tensor<T> true_class_logprob(const Tensor<T>& logits, const Tensor<T>& target) {
    Tensor<T> lsm = log_softmax(logits, 1);
    long npix = logits.dim(0) * logits.dim(2) * logits.dim(3);
    Tensor<T> l0 = reshape(slice(lsm, 1, 0, 1), {npix});
    Tensor<T> l1 = reshape(slice(lsm, 1, 1, 1), {npix});
    Tensor<T> g = reshape(target.detach(), {npix});
    Tensor<T> g_inv = add_scalar(neg(g), T(1));
    return add(mul(l0, g_inv), mul(l1, g));
}

}  // namespace

template <class T>
SoftConfusion<T> soft_confusion(const Tensor<T>& logits, const Tensor<T>& target) {
    check_seg_inputs(logits, target);
    long npix = logits.dim(0) * logits.dim(2) * logits.dim(3);
    Tensor<T> p = foreground_prob(logits);
    Tensor<T> g = reshape(target.detach(), {npix});
    Tensor<T> g_inv = add_scalar(neg(g), T(1));
    Tensor<T> p_inv = add_scalar(neg(p), T(1));
    return {sum(mul(p, g)), sum(mul(p, g_inv)), sum(mul(p_inv, g))};
}

template <class T>
Tensor<T> tversky_loss(const Tensor<T>& logits, const Tensor<T>& target, T alpha, T beta,
                       T smooth_eps) {
    check(alpha > T(0) && beta > T(0), "tversky_loss: alpha and beta must be positive");
    check(smooth_eps > T(0), "tversky_loss: smooth_eps must be positive");
    SoftConfusion<T> c = soft_confusion(logits, target);
    Tensor<T> num = add_scalar(c.tp, smooth_eps);
    Tensor<T> den = add_scalar(add(c.tp, add(scale(c.fp, alpha), scale(c.fn, beta))), smooth_eps);
    return add_scalar(neg(mul(num, pow_scalar(den, T(-1)))), T(1));
}

template <class T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T smooth_eps) {
    check(smooth_eps > T(0), "dice_loss: smooth_eps must be positive");
    SoftConfusion<T> c = soft_confusion(logits, target);
    Tensor<T> num = add_scalar(scale(c.tp, T(2)), smooth_eps);
    Tensor<T> den = add_scalar(add(scale(c.tp, T(2)), add(c.fp, c.fn)), smooth_eps);
    return add_scalar(neg(mul(num, pow_scalar(den, T(-1)))), T(1));
}

template <class T>
Tensor<T> focal_loss(const Tensor<T>& logits, const Tensor<T>& target, T gamma) {
    check(gamma >= T(0), "focal_loss: gamma must be >= 0");
    check_seg_inputs(logits, target);
    Tensor<T> lt = true_class_logprob(logits, target);
    Tensor<T> pt = mitunet::exp(lt);
    Tensor<T> modulator = pow_scalar(add_scalar(neg(pt), T(1)), gamma);
    return mean(mul(modulator, neg(lt)));
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const Tensor<T>& target) {
    check_seg_inputs(logits, target);
    return mean(neg(true_class_logprob(logits, target)));
}

template <class T>
Tensor<T> lovasz_softmax(const Tensor<T>& logits, const Tensor<T>& target) {
    check_seg_inputs(logits, target);
    long npix = logits.dim(0) * logits.dim(2) * logits.dim(3);
    check(npix > 0, "lovasz_softmax: empty image");

    const auto& gt = target.data();
    bool has_fg = std::any_of(gt.begin(), gt.end(), [](T v) { return v == T(1); });
    // Binary task: evaluate the foreground class whenever it is present in
    // the target, otherwise fall back to the background class.
    long cls = has_fg ? 1 : 0;

    Tensor<T> p = softmax(logits, 1);
    Tensor<T> pc = reshape(slice(p, 1, cls, 1), {npix});
    // m_i = 1 - p_i where g_i == cls, else p_i; expressed as p*(1-2s) + s
    // with s the class-membership indicator so it stays differentiable in p.
    std::vector<T> sgn(size_t(npix), T(0));
    std::vector<T> off(size_t(npix), T(0));
    for (long i = 0; i < npix; ++i) {
        bool in_cls = (gt[size_t(i)] == T(cls));
        sgn[size_t(i)] = in_cls ? T(-1) : T(1);
        off[size_t(i)] = in_cls ? T(1) : T(0);
    }
    Tensor<T> m = add(mul(pc, Tensor<T>::from({npix}, std::move(sgn))),
                      Tensor<T>::from({npix}, std::move(off)));

    // Sort errors descending on detached values; ties broken by index so the
    // evaluation is deterministic.
    std::vector<long> order(size_t(npix), 0L);
    std::iota(order.begin(), order.end(), 0L);
    const auto& mv = m.data();
    std::stable_sort(order.begin(), order.end(),
                     [&](long a, long b) { return mv[size_t(a)] > mv[size_t(b)]; });

    // Jaccard-extension gradient over the sorted ground truth.
    T gts = T(0);
    for (long i = 0; i < npix; ++i) gts += (gt[size_t(i)] == T(cls)) ? T(1) : T(0);
    std::vector<T> w(size_t(npix), T(0));
    T inter = gts, uni = gts;
    T prev_jacc = T(0);
    for (long i = 0; i < npix; ++i) {
        T gi = (gt[size_t(order[size_t(i)])] == T(cls)) ? T(1) : T(0);
        inter -= gi;
        uni += T(1) - gi;
        T jacc = uni > T(0) ? T(1) - inter / uni : T(0);
        w[size_t(i)] = jacc - prev_jacc;
        prev_jacc = jacc;
    }
    Tensor<T> m_sorted = index_select_flat(m, order);
    return sum(mul(m_sorted, Tensor<T>::from({npix}, std::move(w))));
}

template <class T>
Tensor<T> segmentation_loss(const LossSpec& spec, const Tensor<T>& logits,
                            const Tensor<T>& target) {
    spec.validate();
    switch (spec.variant) {
        case LossVariant::ce: return cross_entropy(logits, target);
        case LossVariant::dice: return dice_loss(logits, target, T(spec.smooth_eps));
        case LossVariant::focal: return focal_loss(logits, target, T(spec.gamma));
        case LossVariant::lovasz: return lovasz_softmax(logits, target);
        case LossVariant::tversky:
            return tversky_loss(logits, target, T(spec.alpha), T(spec.beta), T(spec.smooth_eps));
    }
    fail("segmentation_loss: bad variant");
}

#define MITUNET_INSTANTIATE_LOSSES(T)                                                       \
    template SoftConfusion<T> soft_confusion<T>(const Tensor<T>&, const Tensor<T>&);        \
    template Tensor<T> tversky_loss<T>(const Tensor<T>&, const Tensor<T>&, T, T, T);        \
    template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                 \
    template Tensor<T> focal_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> lovasz_softmax<T>(const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> segmentation_loss<T>(const LossSpec&, const Tensor<T>&, const Tensor<T>&);

MITUNET_INSTANTIATE_LOSSES(float)
MITUNET_INSTANTIATE_LOSSES(double)

}  // namespace mitunet
