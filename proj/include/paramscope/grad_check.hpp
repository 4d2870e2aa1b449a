#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "paramscope/rng.hpp"
#include "paramscope/tensor.hpp"

namespace paramscope {

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from reporting round-off as a large relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of `analytic` against `loss_fn()` for every tensor
/// in `params`. Each tensor contributes min(coords, size) distinct entries
/// chosen with `rng`; each entry is perturbed by +-delta and restored.
/// Returns the worst relative error.
template <class LossFn>
double finite_difference_check(std::span<Tensor* const> params, std::span<const Tensor> analytic, LossFn&& loss_fn,
                               double delta, Rng& rng, std::size_t coords = 100, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        const Tensor& g = analytic[p];
        std::vector<std::size_t> idx(t.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const std::size_t take = std::min(coords, idx.size());
        for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t k = idx[i];
            const double saved = t[k];
            t[k] = saved + delta;
            const double up = loss_fn();
            t[k] = saved - delta;
            const double down = loss_fn();
            t[k] = saved;
            const double numeric = (up - down) / (2.0 * delta);
            worst = std::max(worst, relative_error(g[k], numeric, floor));
        }
    }
    return worst;
}

}  // namespace paramscope
