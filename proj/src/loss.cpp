#include "fogseg/loss.hpp"

#include <cmath>

namespace fogseg {

namespace {

struct ProbDims {
    int batch, classes, time;
};

ProbDims prob_dims(const DiffArray& probs, bool batched, const char* op) {
    const int r = probs.shape.rank();
    if ((batched && r != 3) || (!batched && r != 2))
        throw ValidationError(std::string(op) + ": expected " +
                              (batched ? "[B x l x T]" : "[l x T]") + ", got " +
                              probs.shape.str());
    if (batched) return {probs.shape[0], probs.shape[1], probs.shape[2]};
    return {1, probs.shape[0], probs.shape[1]};
}

void check_bt(const ProbDims& d, const Mask* mask, std::size_t labels_size, bool need_labels,
              const char* op) {
    if (need_labels &&
        labels_size != static_cast<std::size_t>(d.batch) * static_cast<std::size_t>(d.time))
        throw ValidationError(std::string(op) + ": " + std::to_string(labels_size) +
                              " labels for batch " + std::to_string(d.batch) + " x time " +
                              std::to_string(d.time));
    if (mask && (mask->batch != d.batch || mask->time != d.time))
        throw ValidationError(std::string(op) + ": mask extent mismatch");
}

}  // namespace

DiffArray* cross_entropy(Tape& tape, DiffArray& probs, const std::vector<int>& labels,
                         const Mask* mask, bool batched) {
    const ProbDims d = prob_dims(probs, batched, "cross_entropy");
    check_bt(d, mask, labels.size(), true, "cross_entropy");

    const auto floor = static_cast<real_t>(kProbFloor);
    const std::int64_t bs = static_cast<std::int64_t>(d.classes) * d.time;

    std::vector<std::int64_t> valid(static_cast<std::size_t>(d.batch), 0);
    real_t acc = 0;
    for (int b = 0; b < d.batch; ++b) {
        real_t seq = 0;
        for (int t = 0; t < d.time; ++t) {
            if (mask && !mask->at(b, t)) continue;
            ++valid[static_cast<std::size_t>(b)];
            const int y = labels[static_cast<std::size_t>(b) * d.time + t];
            if (y < 0 || y >= d.classes)
                throw ValidationError("cross_entropy: label " + std::to_string(y) +
                                      " outside [0, " + std::to_string(d.classes) + ")");
            const real_t p =
                probs.value[static_cast<std::size_t>(b * bs + static_cast<std::int64_t>(y) * d.time + t)];
            seq -= std::log(std::max(p, floor));
        }
        if (valid[static_cast<std::size_t>(b)] == 0)
            throw ValidationError("cross_entropy: sequence " + std::to_string(b) +
                                  " has no valid samples");
        acc += seq / static_cast<real_t>(valid[static_cast<std::size_t>(b)]);
    }
    acc /= static_cast<real_t>(d.batch);

    DiffArray* out = tape.alloc(Shape{1}, probs.tracked);
    out->value[0] = acc;
    tape.record(out, [out, &probs, &labels, mask, d, bs, floor, valid = std::move(valid)] {
        real_t* gp = grad_of(probs);
        if (!gp) return;
        const real_t g0 = out->grad[0];
        for (int b = 0; b < d.batch; ++b) {
            const real_t w =
                g0 / (static_cast<real_t>(d.batch) *
                      static_cast<real_t>(valid[static_cast<std::size_t>(b)]));
            for (int t = 0; t < d.time; ++t) {
                if (mask && !mask->at(b, t)) continue;
                const int y = labels[static_cast<std::size_t>(b) * d.time + t];
                const std::int64_t i = b * bs + static_cast<std::int64_t>(y) * d.time + t;
                const real_t p = probs.value[static_cast<std::size_t>(i)];
                if (p >= floor) gp[i] -= w / p;
            }
        }
    });
    return out;
}

DiffArray* truncated_smoothing_loss(Tape& tape, DiffArray& probs, const Mask* mask, real_t tau,
                                    bool batched) {
    const ProbDims d = prob_dims(probs, batched, "truncated_smoothing_loss");
    check_bt(d, mask, 0, false, "truncated_smoothing_loss");
    if (d.time < 2)
        throw ValidationError("truncated_smoothing_loss: need T >= 2, got T=" +
                              std::to_string(d.time));
    if (tau <= 0) throw ValidationError("truncated_smoothing_loss: tau must be > 0");

    const auto floor = static_cast<real_t>(kProbFloor);
    const std::int64_t bs = static_cast<std::int64_t>(d.classes) * d.time;

    std::vector<std::int64_t> valid(static_cast<std::size_t>(d.batch), 0);
    real_t acc = 0;
    for (int b = 0; b < d.batch; ++b) {
        for (int t = 0; t < d.time; ++t)
            if (!mask || mask->at(b, t)) ++valid[static_cast<std::size_t>(b)];
        if (valid[static_cast<std::size_t>(b)] == 0)
            throw ValidationError("truncated_smoothing_loss: sequence " + std::to_string(b) +
                                  " has no valid samples");
        real_t seq = 0;
        for (int c = 0; c < d.classes; ++c) {
            const real_t* p =
                probs.value.data() + b * bs + static_cast<std::int64_t>(c) * d.time;
            for (int t = 1; t < d.time; ++t) {
                if (mask && (!mask->at(b, t) || !mask->at(b, t - 1))) continue;
                real_t delta = std::log(std::max(p[t], floor)) -
                               std::log(std::max(p[t - 1], floor));
                if (delta < 0) delta = -delta;
                if (delta > tau) delta = tau;
                seq += delta * delta;
            }
        }
        acc += seq / (static_cast<real_t>(valid[static_cast<std::size_t>(b)]) *
                      static_cast<real_t>(d.classes));
    }
    acc /= static_cast<real_t>(d.batch);

    DiffArray* out = tape.alloc(Shape{1}, probs.tracked);
    out->value[0] = acc;
    tape.record(out, [out, &probs, mask, d, bs, tau, floor, valid = std::move(valid)] {
        real_t* gp = grad_of(probs);
        if (!gp) return;
        const real_t g0 = out->grad[0];
        for (int b = 0; b < d.batch; ++b) {
            const real_t w = g0 / (static_cast<real_t>(d.batch) *
                                   static_cast<real_t>(valid[static_cast<std::size_t>(b)]) *
                                   static_cast<real_t>(d.classes));
            for (int c = 0; c < d.classes; ++c) {
                const std::int64_t row = b * bs + static_cast<std::int64_t>(c) * d.time;
                const real_t* p = probs.value.data() + row;
                for (int t = 1; t < d.time; ++t) {
                    if (mask && (!mask->at(b, t) || !mask->at(b, t - 1))) continue;
                    const real_t pt = std::max(p[t], floor);
                    const real_t delta = std::log(pt) - std::log(std::max(p[t - 1], floor));
                    const real_t mag = delta < 0 ? -delta : delta;
                    // clipped pairs contribute a constant; the previous
                    // sample is detached, so only p_t receives gradient
                    if (mag > tau || p[t] < floor) continue;
                    gp[row + t] += w * 2 * delta / pt;
                }
            }
        }
    });
    return out;
}

LossBreakdown total_loss(Tape& tape, const StageOutputs& stages, const std::vector<int>& labels,
                         const Mask* mask, const LossConfig& cfg, bool batched) {
    cfg.validate();
    if (stages.empty()) throw ValidationError("total_loss: no stage outputs");

    LossBreakdown out;
    DiffArray* total = nullptr;
    for (DiffArray* s : stages) {
        DiffArray* ce = cross_entropy(tape, *s, labels, mask, batched);
        DiffArray* sm = truncated_smoothing_loss(tape, *s, mask, cfg.tau, batched);
        out.stage_ce.push_back(ce->value[0]);
        out.stage_tmse.push_back(sm->value[0]);
        DiffArray* stage_loss = add(tape, *ce, *scale(tape, *sm, cfg.lambda));
        total = total ? add(tape, *total, *stage_loss) : stage_loss;
    }
    out.total = total;
    return out;
}

}  // namespace fogseg
