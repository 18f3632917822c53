#pragma once

#include <string>

#include "mitunet/linalg.hpp"

namespace mitunet {

enum class LossVariant { ce, dice, focal, lovasz, tversky };

LossVariant loss_variant_from_string(const std::string& s);
std::string loss_variant_name(LossVariant v);

struct LossSpec {
    LossVariant variant = LossVariant::tversky;
    double alpha = 0.6;   // false-positive weight
    double beta = 0.4;    // false-negative weight
    double gamma = 2.0;   // focal exponent
    double smooth_eps = 1e-6;

    void validate() const;
    // Report label, e.g. "Tversky (0.6 / 0.4)".
    std::string display() const;
};

// Probability-weighted confusion terms pooled over the whole batch:
// tp = sum(p*g), fp = sum(p*(1-g)), fn = sum((1-p)*g) with p the predicted
// foreground probability.
template <class T>
struct SoftConfusion {
    Tensor<T> tp, fp, fn;
};

// logits: [N,2,H,W]; target: [N,H,W] with strictly binary values.
template <class T>
SoftConfusion<T> soft_confusion(const Tensor<T>& logits, const Tensor<T>& target);

template <class T>
Tensor<T> tversky_loss(const Tensor<T>& logits, const Tensor<T>& target, T alpha, T beta,
                       T smooth_eps = T(1e-6));

template <class T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T smooth_eps = T(1e-6));

template <class T>
Tensor<T> focal_loss(const Tensor<T>& logits, const Tensor<T>& target, T gamma = T(2));

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const Tensor<T>& target);

template <class T>
Tensor<T> lovasz_softmax(const Tensor<T>& logits, const Tensor<T>& target);

template <class T>
Tensor<T> segmentation_loss(const LossSpec& spec, const Tensor<T>& logits,
                            const Tensor<T>& target);

}  // namespace mitunet
