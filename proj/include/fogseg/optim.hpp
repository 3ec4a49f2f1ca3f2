#pragma once

#include <cstdint>
#include <vector>

#include "fogseg/model.hpp"

namespace fogseg {

// Adam with bias correction. Moment buffers mirror the tracked entries of
// the parameter store they were initialized from.
struct AdamState {
    real_t lr = static_cast<real_t>(0.0005);
    real_t beta1 = static_cast<real_t>(0.9);
    real_t beta2 = static_cast<real_t>(0.999);
    real_t eps = static_cast<real_t>(1e-8);
    long step = 0;
    std::vector<std::vector<real_t>> m, v;  // per entry; empty for untracked

    void init(const ParamStore& params);
};

// In-place update from the accumulated grads; rejects non-finite gradients
// with the parameter name in the diagnostic. Missing grad buffers count as
// zero gradients (a fixed point).
void adam_step(ParamStore& params, AdamState& state);

}  // namespace fogseg
