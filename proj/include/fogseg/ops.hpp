#pragma once

#include <cstdint>
#include <vector>

#include "fogseg/array.hpp"

namespace fogseg {

// Per-(batch, time) validity. Padded samples of a batched sequence carry 0;
// batch statistics and losses skip them.
struct Mask {
    int batch = 0;
    int time = 0;
    std::vector<std::uint8_t> valid;

    static Mask full(int batch, int time) {
        Mask m;
        m.batch = batch;
        m.time = time;
        m.valid.assign(static_cast<std::size_t>(batch) * time, 1);
        return m;
    }
    bool at(int b, int t) const {
        return valid[static_cast<std::size_t>(b) * time + t] != 0;
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto v : valid) n += v != 0;
        return n;
    }
    std::int64_t count_row(int b) const {
        std::int64_t n = 0;
        for (int t = 0; t < time; ++t) n += at(b, t);
        return n;
    }
};

enum class Mode { train, eval };

// Layout conventions, all row-major with time as the last axis:
//   unbatched: [C x T] or [C x N x T]
//   batched:   [B x C x T] or [B x C x N x T]
// `batched` selects between them (a rank-3 array is ambiguous otherwise).

// out[c,...,t] = sum_i w[c,i] * x[i,...,t] + b[c]
DiffArray* pointwise_conv(Tape& tape, DiffArray& x, DiffArray& w, DiffArray& b,
                          bool batched = false);

// Temporal convolution along the last axis with zero padding chosen so the
// output length equals T. Acausal kernels must have odd width and reach
// dilation*(k-1)/2 samples into past and future; causal kernels see only
// the past.
DiffArray* dilated_conv1d(Tape& tape, DiffArray& x, DiffArray& w, DiffArray& b,
                          int dilation, bool acausal = true, bool batched = false);

// Per-channel batch normalization. Train mode uses masked batch statistics
// and updates the running buffers in place; eval mode applies the running
// statistics. gamma/beta/run_mean/run_var are all [C].
DiffArray* batch_norm(Tape& tape, DiffArray& x, DiffArray& gamma, DiffArray& beta,
                      DiffArray& run_mean, DiffArray& run_var, Mode mode,
                      const Mask* mask = nullptr, bool batched = false,
                      real_t momentum = static_cast<real_t>(0.1),
                      real_t eps = static_cast<real_t>(1e-5));

// relu(batch_norm(x)) with invalid time columns zeroed; one intermediate
// buffer instead of three.
DiffArray* bn_relu(Tape& tape, DiffArray& x, DiffArray& gamma, DiffArray& beta,
                   DiffArray& run_mean, DiffArray& run_var, Mode mode,
                   const Mask* mask = nullptr, bool batched = false,
                   real_t momentum = static_cast<real_t>(0.1),
                   real_t eps = static_cast<real_t>(1e-5));

DiffArray* relu(Tape& tape, DiffArray& x);

// Softmax along the class axis ([l x T] or [B x l x T]); every column is a
// strictly positive distribution.
DiffArray* softmax_over_classes(Tape& tape, DiffArray& x, bool batched = false);

// [C x N x T] -> [C x T] (mean over nodes), batched likewise.
DiffArray* mean_pool_nodes(Tape& tape, DiffArray& x, bool batched = false);

DiffArray* add(Tape& tape, DiffArray& x, DiffArray& y);

// (x + skip) with invalid time columns zeroed.
DiffArray* residual_add(Tape& tape, DiffArray& x, DiffArray& skip,
                        const Mask* mask = nullptr, bool batched = false);

// x with invalid time columns zeroed; identity when mask is null.
DiffArray* mask_zero(Tape& tape, DiffArray& x, const Mask* mask, bool batched = false);

// Same data, new extents (copy; numel must match).
DiffArray* reshape_copy(Tape& tape, DiffArray& x, Shape target);

DiffArray* scale(Tape& tape, DiffArray& x, real_t c);

// Elementwise product (shapes must match).
DiffArray* mul(Tape& tape, DiffArray& x, DiffArray& y);

// Scalar sum of all entries.
DiffArray* sum_all(Tape& tape, DiffArray& x);

// Scalar dot product with fixed weights; handy for reducing an arbitrary
// op output to a scalar with a non-degenerate gradient.
DiffArray* weighted_sum(Tape& tape, DiffArray& x, const std::vector<real_t>& w);

}  // namespace fogseg
