#include "paramscope/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace paramscope {

double Rng::normal() noexcept {
    if (spare_) {
        double v = *spare_;
        spare_.reset();
        return v;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
}

Tensor normal_init(const Shape& shape, double mean, double std, Rng& rng) {
    if (!(std >= 0.0)) throw std::invalid_argument("normal_init: std must be >= 0");
    Tensor t(shape);
    for (auto& v : t.values()) v = mean + std * rng.normal();
    return t;
}

}  // namespace paramscope
