#pragma once

#include <vector>

#include "fogseg/array.hpp"
#include "fogseg/model.hpp"
#include "fogseg/ops.hpp"

namespace fogseg {

struct LossConfig {
    real_t lambda = static_cast<real_t>(0.15);  // smoothing weight
    real_t tau = static_cast<real_t>(4.0);      // log-prob delta clip
    int num_classes = 2;

    void validate() const {
        if (lambda < 0) throw ValidationError("loss config: lambda must be >= 0");
        if (tau <= 0) throw ValidationError("loss config: tau must be > 0");
    }
};

// Probabilities are floored here before the log so a confidently wrong
// prediction cannot produce an infinite loss.
inline constexpr double kProbFloor = 1e-12;

// Mean negative log-probability of the true class over valid samples,
// averaged per sequence first when batched. probs [l x T] or [B x l x T],
// labels length T or B*T.
DiffArray* cross_entropy(Tape& tape, DiffArray& probs, const std::vector<int>& labels,
                         const Mask* mask = nullptr, bool batched = false);

// Truncated mean squared difference of adjacent log-probabilities; the
// previous sample is treated as a constant, and pairs whose |delta| exceeds
// tau contribute the clipped value with zero gradient.
DiffArray* truncated_smoothing_loss(Tape& tape, DiffArray& probs, const Mask* mask, real_t tau,
                                    bool batched = false);

struct LossBreakdown {
    DiffArray* total = nullptr;
    std::vector<real_t> stage_ce;    // forward values per stage
    std::vector<real_t> stage_tmse;
};

// sum over stages of (cross entropy + lambda * smoothing).
LossBreakdown total_loss(Tape& tape, const StageOutputs& stages, const std::vector<int>& labels,
                         const Mask* mask, const LossConfig& cfg, bool batched = false);

}  // namespace fogseg
