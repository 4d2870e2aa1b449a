#pragma once

#include <cstdint>
#include <stdexcept>

#include "paramscope/tensor.hpp"

namespace paramscope {

struct AdamHyper {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment estimates for one parameter tensor.
struct AdamState {
    Tensor m;
    Tensor v;
    std::uint64_t t = 0;
    AdamHyper hyper;

    AdamState() = default;
    AdamState(const Shape& shape, AdamHyper h) : m(shape), v(shape), hyper(h) {}
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Throws NonFiniteGradient, leaving param and state untouched, if any
/// gradient entry is NaN or infinite.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state);

}  // namespace paramscope
