#include "paramscope/adam.hpp"

#include <cmath>

namespace paramscope {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
    if (param.shape() != grad.shape() || state.m.shape() != param.shape() || state.v.shape() != param.shape())
        throw ShapeError("adam_step: param " + shape_str(param.shape()) + ", grad " + shape_str(grad.shape()) +
                         " and moments must be congruent");
    if (!grad.all_finite()) throw NonFiniteGradient("adam_step: non-finite gradient entry");

    const AdamHyper& h = state.hyper;
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        param[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
}

}  // namespace paramscope
