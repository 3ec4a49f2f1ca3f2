#include "fogseg/optim.hpp"

#include <cmath>

namespace fogseg {

void AdamState::init(const ParamStore& params) {
    step = 0;
    m.assign(params.entries.size(), {});
    v.assign(params.entries.size(), {});
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
        const auto& e = params.entries[i];
        if (!e.array.tracked) continue;
        m[i].assign(e.array.value.size(), real_t{0});
        v[i].assign(e.array.value.size(), real_t{0});
    }
}

void adam_step(ParamStore& params, AdamState& state) {
    if (state.m.size() != params.entries.size())
        throw ValidationError("adam_step: state was initialized for a different parameter set");
    ++state.step;
    const real_t bc1 =
        real_t{1} - static_cast<real_t>(std::pow(static_cast<double>(state.beta1), state.step));
    const real_t bc2 =
        real_t{1} - static_cast<real_t>(std::pow(static_cast<double>(state.beta2), state.step));

    for (std::size_t i = 0; i < params.entries.size(); ++i) {
        auto& e = params.entries[i];
        if (!e.array.tracked) continue;
        auto& mi = state.m[i];
        auto& vi = state.v[i];
        const bool has_grad = e.array.has_grad();
        for (std::size_t j = 0; j < e.array.value.size(); ++j) {
            const real_t g = has_grad ? e.array.grad[j] : real_t{0};
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient for parameter '" + e.name +
                                   "'");
            mi[j] = state.beta1 * mi[j] + (real_t{1} - state.beta1) * g;
            vi[j] = state.beta2 * vi[j] + (real_t{1} - state.beta2) * g * g;
            const real_t mhat = mi[j] / bc1;
            const real_t vhat = vi[j] / bc2;
            e.array.value[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace fogseg
