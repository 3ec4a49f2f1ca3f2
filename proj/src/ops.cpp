#include "fogseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "internal.hpp"

namespace fogseg {

using detail::FeatDims;
using detail::feat_dims;
using detail::gemm;

DiffArray* pointwise_conv(Tape& tape, DiffArray& x, DiffArray& w, DiffArray& b,
                          bool batched) {
    const FeatDims d = feat_dims(x, batched, "pointwise_conv");
    if (w.shape.rank() != 2)
        throw ValidationError("pointwise_conv: weight must be [C_out x C_in], got " +
                              w.shape.str());
    const int c_out = w.shape[0];
    const int c_in = w.shape[1];
    if (c_in != d.channels)
        throw ValidationError("pointwise_conv: x channel axis (" + std::to_string(d.channels) +
                              ") != w input channels (" + std::to_string(c_in) + ")");
    if (b.shape.rank() != 1 || b.shape[0] != c_out)
        throw ValidationError("pointwise_conv: bias axis (" + b.shape.str() +
                              ") != w output channels (" + std::to_string(c_out) + ")");

    Shape out_shape = [&] {
        switch (x.shape.rank()) {
            case 2: return Shape{c_out, d.time};
            case 3: return batched ? Shape{d.batch, c_out, d.time}
                                   : Shape{c_out, d.rows, d.time};
            default: return Shape{d.batch, c_out, d.rows, d.time};
        }
    }();

    const bool track = x.tracked || w.tracked || b.tracked;
    DiffArray* out = tape.alloc(out_shape, track);

    const std::int64_t s = d.plane();
    const std::int64_t in_bs = d.per_batch();
    const std::int64_t out_bs = static_cast<std::int64_t>(c_out) * s;
    for (int bi = 0; bi < d.batch; ++bi) {
        real_t* o = out->value.data() + bi * out_bs;
        for (int c = 0; c < c_out; ++c)
            std::fill_n(o + c * s, s, b.value[static_cast<std::size_t>(c)]);
        gemm(false, false, c_out, static_cast<int>(s), c_in, real_t{1}, w.value.data(), c_in,
             x.value.data() + bi * in_bs, static_cast<int>(s), real_t{1}, o, static_cast<int>(s));
    }

    tape.record(out, [out, &x, &w, &b, d, c_out, c_in, s, in_bs, out_bs] {
        real_t* gx = grad_of(x);
        real_t* gw = grad_of(w);
        real_t* gb = grad_of(b);
        for (int bi = 0; bi < d.batch; ++bi) {
            const real_t* go = out->grad.data() + bi * out_bs;
            if (gx)
                gemm(true, false, c_in, static_cast<int>(s), c_out, real_t{1}, w.value.data(),
                     c_in, go, static_cast<int>(s), real_t{1}, gx + bi * in_bs,
                     static_cast<int>(s));
            if (gw)
                gemm(false, true, c_out, c_in, static_cast<int>(s), real_t{1}, go,
                     static_cast<int>(s), x.value.data() + bi * in_bs, static_cast<int>(s),
                     real_t{1}, gw, c_in);
            if (gb)
                for (int c = 0; c < c_out; ++c) {
                    real_t acc = 0;
                    const real_t* row = go + c * s;
                    for (std::int64_t i = 0; i < s; ++i) acc += row[i];
                    gb[c] += acc;
                }
        }
    });
    return out;
}

DiffArray* dilated_conv1d(Tape& tape, DiffArray& x, DiffArray& w, DiffArray& b,
                          int dilation, bool acausal, bool batched) {
    const FeatDims d = feat_dims(x, batched, "dilated_conv1d");
    if (w.shape.rank() != 3)
        throw ValidationError("dilated_conv1d: weight must be [C_out x C_in x k], got " +
                              w.shape.str());
    const int c_out = w.shape[0];
    const int c_in = w.shape[1];
    const int k = w.shape[2];
    if (c_in != d.channels)
        throw ValidationError("dilated_conv1d: x channel axis (" + std::to_string(d.channels) +
                              ") != w input channels (" + std::to_string(c_in) + ")");
    if (b.shape.rank() != 1 || b.shape[0] != c_out)
        throw ValidationError("dilated_conv1d: bias axis (" + b.shape.str() +
                              ") != w output channels (" + std::to_string(c_out) + ")");
    if (dilation < 1)
        throw ValidationError("dilated_conv1d: dilation must be >= 1, got " +
                              std::to_string(dilation));
    if (acausal && k % 2 == 0)
        throw ValidationError("dilated_conv1d: acausal kernels need odd width, got k=" +
                              std::to_string(k));

    Shape out_shape = [&] {
        switch (x.shape.rank()) {
            case 2: return Shape{c_out, d.time};
            case 3: return batched ? Shape{d.batch, c_out, d.time}
                                   : Shape{c_out, d.rows, d.time};
            default: return Shape{d.batch, c_out, d.rows, d.time};
        }
    }();

    const bool track = x.tracked || w.tracked || b.tracked;
    DiffArray* out = tape.alloc(out_shape, track);

    const int center = acausal ? (k - 1) / 2 : (k - 1);
    const int T = d.time;
    const std::int64_t plane = d.plane();
    const std::int64_t in_bs = d.per_batch();
    const std::int64_t out_bs = static_cast<std::int64_t>(c_out) * plane;

    // Per-tap weight matrices repacked contiguously: wj[j] is [C_out x C_in].
    std::vector<real_t> wj(static_cast<std::size_t>(k) * c_out * c_in);
    auto repack = [&](const real_t* src) {
        for (int j = 0; j < k; ++j)
            for (int co = 0; co < c_out; ++co)
                for (int ci = 0; ci < c_in; ++ci)
                    wj[(static_cast<std::size_t>(j) * c_out + co) * c_in + ci] =
                        src[(static_cast<std::size_t>(co) * c_in + ci) * k + j];
    };
    repack(w.value.data());

    for (int bi = 0; bi < d.batch; ++bi) {
        for (int r = 0; r < d.rows; ++r) {
            real_t* o = out->value.data() + bi * out_bs + static_cast<std::int64_t>(r) * T;
            for (int c = 0; c < c_out; ++c)
                std::fill_n(o + static_cast<std::int64_t>(c) * plane, T,
                            b.value[static_cast<std::size_t>(c)]);
            const real_t* xin = x.value.data() + bi * in_bs + static_cast<std::int64_t>(r) * T;
            for (int j = 0; j < k; ++j) {
                const int off = dilation * (j - center);
                const int lo = std::max(0, -off);
                const int hi = std::min(T, T - off);
                if (hi <= lo) continue;
                gemm(false, false, c_out, hi - lo, c_in, real_t{1},
                     wj.data() + static_cast<std::size_t>(j) * c_out * c_in, c_in,
                     xin + lo + off, static_cast<int>(plane), real_t{1}, o + lo,
                     static_cast<int>(plane));
            }
        }
    }

    tape.record(out, [out, &x, &w, &b, d, c_out, c_in, k, center, dilation, T, plane, in_bs,
                      out_bs] {
        real_t* gx = grad_of(x);
        real_t* gw = grad_of(w);
        real_t* gb = grad_of(b);
        std::vector<real_t> wj(static_cast<std::size_t>(k) * c_out * c_in);
        if (gx)
            for (int j = 0; j < k; ++j)
                for (int co = 0; co < c_out; ++co)
                    for (int ci = 0; ci < c_in; ++ci)
                        wj[(static_cast<std::size_t>(j) * c_out + co) * c_in + ci] =
                            w.value[(static_cast<std::size_t>(co) * c_in + ci) * k + j];
        std::vector<real_t> gwj;
        if (gw) gwj.assign(static_cast<std::size_t>(k) * c_out * c_in, real_t{0});

        for (int bi = 0; bi < d.batch; ++bi) {
            for (int r = 0; r < d.rows; ++r) {
                const real_t* go =
                    out->grad.data() + bi * out_bs + static_cast<std::int64_t>(r) * T;
                const real_t* xin =
                    x.value.data() + bi * in_bs + static_cast<std::int64_t>(r) * T;
                for (int j = 0; j < k; ++j) {
                    const int off = dilation * (j - center);
                    const int lo = std::max(0, -off);
                    const int hi = std::min(T, T - off);
                    if (hi <= lo) continue;
                    if (gx)
                        gemm(true, false, c_in, hi - lo, c_out, real_t{1},
                             wj.data() + static_cast<std::size_t>(j) * c_out * c_in, c_in,
                             go + lo, static_cast<int>(plane), real_t{1},
                             gx + bi * in_bs + static_cast<std::int64_t>(r) * T + lo + off,
                             static_cast<int>(plane));
                    if (gw)
                        gemm(false, true, c_out, c_in, hi - lo, real_t{1}, go + lo,
                             static_cast<int>(plane), xin + lo + off, static_cast<int>(plane),
                             real_t{1}, gwj.data() + static_cast<std::size_t>(j) * c_out * c_in,
                             c_in);
                }
                if (gb)
                    for (int c = 0; c < c_out; ++c) {
                        real_t acc = 0;
                        const real_t* row = go + static_cast<std::int64_t>(c) * plane;
                        for (int t = 0; t < T; ++t) acc += row[t];
                        gb[c] += acc;
                    }
            }
        }
        if (gw)
            for (int j = 0; j < k; ++j)
                for (int co = 0; co < c_out; ++co)
                    for (int ci = 0; ci < c_in; ++ci)
                        gw[(static_cast<std::size_t>(co) * c_in + ci) * k + j] +=
                            gwj[(static_cast<std::size_t>(j) * c_out + co) * c_in + ci];
    });
    return out;
}

namespace {

struct BnStats {
    std::vector<real_t> mean;     // what the forward normalized with
    std::vector<real_t> inv_std;
    std::int64_t m = 0;           // valid sample count per channel
};

void check_bn_params(const DiffArray& gamma, const DiffArray& beta, const DiffArray& run_mean,
                     const DiffArray& run_var, int channels, const char* op) {
    const Shape want{channels};
    for (const auto* a : {&gamma, &beta, &run_mean, &run_var})
        if (a->shape != want)
            throw ValidationError(std::string(op) + ": per-channel buffers must be [" +
                                  std::to_string(channels) + "], got " + a->shape.str());
}

// Computes batch (train) or running (eval) statistics; train mode also
// updates the running buffers.
BnStats bn_prepare(DiffArray& x, DiffArray& run_mean, DiffArray& run_var, Mode mode,
                   const Mask* mask, const FeatDims& d, real_t momentum, real_t eps,
                   const char* op) {
    BnStats st;
    const int C = d.channels;
    st.mean.assign(static_cast<std::size_t>(C), 0);
    st.inv_std.assign(static_cast<std::size_t>(C), 0);

    if (mode == Mode::eval) {
        for (int c = 0; c < C; ++c) {
            st.mean[static_cast<std::size_t>(c)] = run_mean.value[static_cast<std::size_t>(c)];
            st.inv_std[static_cast<std::size_t>(c)] =
                real_t{1} / std::sqrt(run_var.value[static_cast<std::size_t>(c)] + eps);
        }
        return st;
    }

    const int T = d.time;
    const std::int64_t plane = d.plane();
    std::int64_t valid_t = 0;
    if (mask) {
        for (int bi = 0; bi < d.batch; ++bi) valid_t += mask->count_row(bi);
    } else {
        valid_t = static_cast<std::int64_t>(d.batch) * T;
    }
    st.m = valid_t * d.rows;
    if (valid_t == 0)
        throw ValidationError(std::string(op) + ": degenerate statistics, all samples masked");
    if (st.m < 2)
        throw ValidationError(std::string(op) + ": need >= 2 valid samples per channel, got " +
                              std::to_string(st.m));

    std::vector<real_t> var(static_cast<std::size_t>(C), 0);
    for (int c = 0; c < C; ++c) {
        real_t sum = 0, sumsq = 0;
        for (int bi = 0; bi < d.batch; ++bi) {
            const real_t* base =
                x.value.data() + bi * d.per_batch() + static_cast<std::int64_t>(c) * plane;
            for (int r = 0; r < d.rows; ++r) {
                const real_t* row = base + static_cast<std::int64_t>(r) * T;
                if (mask) {
                    for (int t = 0; t < T; ++t)
                        if (mask->at(bi, t)) {
                            sum += row[t];
                            sumsq += row[t] * row[t];
                        }
                } else {
                    for (int t = 0; t < T; ++t) {
                        sum += row[t];
                        sumsq += row[t] * row[t];
                    }
                }
            }
        }
        const real_t mu = sum / static_cast<real_t>(st.m);
        real_t v = sumsq / static_cast<real_t>(st.m) - mu * mu;
        if (v < 0) v = 0;  // cancellation guard
        st.mean[static_cast<std::size_t>(c)] = mu;
        var[static_cast<std::size_t>(c)] = v;
        st.inv_std[static_cast<std::size_t>(c)] = real_t{1} / std::sqrt(v + eps);
    }
    // Running buffers track the unbiased variance, as is conventional.
    const real_t bessel = static_cast<real_t>(st.m) / static_cast<real_t>(st.m - 1);
    for (int c = 0; c < C; ++c) {
        auto ci = static_cast<std::size_t>(c);
        run_mean.value[ci] = (real_t{1} - momentum) * run_mean.value[ci] + momentum * st.mean[ci];
        run_var.value[ci] =
            (real_t{1} - momentum) * run_var.value[ci] + momentum * var[ci] * bessel;
    }
    return st;
}

// Shared backward for batch_norm and bn_relu. `dpre` holds dL/d(bn output)
// and may alias out->grad.
void bn_backward(DiffArray& x, DiffArray& gamma, DiffArray& beta, const BnStats& st, Mode mode,
                 const Mask* mask, const FeatDims& d, const std::vector<real_t>& dpre) {
    real_t* gx = grad_of(x);
    real_t* gg = grad_of(gamma);
    real_t* gb = grad_of(beta);
    if (!gx && !gg && !gb) return;

    const int C = d.channels;
    const int T = d.time;
    const std::int64_t plane = d.plane();

    for (int c = 0; c < C; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const real_t mu = st.mean[ci];
        const real_t is = st.inv_std[ci];
        const real_t g = gamma.value[ci];

        real_t sum_d = 0, sum_dxh = 0;
        for (int bi = 0; bi < d.batch; ++bi) {
            const std::int64_t base = bi * d.per_batch() + static_cast<std::int64_t>(c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                const real_t dv = dpre[static_cast<std::size_t>(base + i)];
                sum_d += dv;
                sum_dxh += dv * (x.value[static_cast<std::size_t>(base + i)] - mu) * is;
            }
        }
        if (gg) gg[c] += sum_dxh;
        if (gb) gb[c] += sum_d;
        if (!gx) continue;

        if (mode == Mode::eval) {
            const real_t scale = g * is;
            for (int bi = 0; bi < d.batch; ++bi) {
                const std::int64_t base =
                    bi * d.per_batch() + static_cast<std::int64_t>(c) * plane;
                for (std::int64_t i = 0; i < plane; ++i)
                    gx[base + i] += scale * dpre[static_cast<std::size_t>(base + i)];
            }
            continue;
        }

        const real_t inv_m = real_t{1} / static_cast<real_t>(st.m);
        for (int bi = 0; bi < d.batch; ++bi) {
            const std::int64_t base = bi * d.per_batch() + static_cast<std::int64_t>(c) * plane;
            for (int r = 0; r < d.rows; ++r) {
                const std::int64_t rb = base + static_cast<std::int64_t>(r) * T;
                for (int t = 0; t < T; ++t) {
                    const real_t dv = dpre[static_cast<std::size_t>(rb + t)];
                    const bool valid = !mask || mask->at(bi, t);
                    if (valid) {
                        const real_t xh = (x.value[static_cast<std::size_t>(rb + t)] - mu) * is;
                        gx[rb + t] += g * is * (dv - inv_m * sum_d - xh * inv_m * sum_dxh);
                    } else {
                        // padded positions do not feed the statistics
                        gx[rb + t] += g * is * dv;
                    }
                }
            }
        }
    }
}

}  // namespace

DiffArray* batch_norm(Tape& tape, DiffArray& x, DiffArray& gamma, DiffArray& beta,
                      DiffArray& run_mean, DiffArray& run_var, Mode mode, const Mask* mask,
                      bool batched, real_t momentum, real_t eps) {
    const FeatDims d = feat_dims(x, batched, "batch_norm");
    check_bn_params(gamma, beta, run_mean, run_var, d.channels, "batch_norm");
    detail::check_mask(mask, d, "batch_norm");
    BnStats st = bn_prepare(x, run_mean, run_var, mode, mask, d, momentum, eps, "batch_norm");

    const bool track = x.tracked || gamma.tracked || beta.tracked;
    DiffArray* out = tape.alloc(x.shape, track);
    const std::int64_t plane = d.plane();
    for (int c = 0; c < d.channels; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const real_t mu = st.mean[ci];
        const real_t is = st.inv_std[ci];
        const real_t g = gamma.value[ci];
        const real_t be = beta.value[ci];
        for (int bi = 0; bi < d.batch; ++bi) {
            const std::int64_t base = bi * d.per_batch() + static_cast<std::int64_t>(c) * plane;
            for (std::int64_t i = 0; i < plane; ++i)
                out->value[static_cast<std::size_t>(base + i)] =
                    g * (x.value[static_cast<std::size_t>(base + i)] - mu) * is + be;
        }
    }

    tape.record(out, [out, &x, &gamma, &beta, st = std::move(st), mode, mask, d] {
        bn_backward(x, gamma, beta, st, mode, mask, d, out->grad);
    });
    return out;
}

DiffArray* bn_relu(Tape& tape, DiffArray& x, DiffArray& gamma, DiffArray& beta,
                   DiffArray& run_mean, DiffArray& run_var, Mode mode, const Mask* mask,
                   bool batched, real_t momentum, real_t eps) {
    const FeatDims d = feat_dims(x, batched, "bn_relu");
    check_bn_params(gamma, beta, run_mean, run_var, d.channels, "bn_relu");
    detail::check_mask(mask, d, "bn_relu");
    BnStats st = bn_prepare(x, run_mean, run_var, mode, mask, d, momentum, eps, "bn_relu");

    const bool track = x.tracked || gamma.tracked || beta.tracked;
    DiffArray* out = tape.alloc(x.shape, track);
    const std::int64_t plane = d.plane();
    const int T = d.time;
    for (int c = 0; c < d.channels; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const real_t mu = st.mean[ci];
        const real_t is = st.inv_std[ci];
        const real_t g = gamma.value[ci];
        const real_t be = beta.value[ci];
        for (int bi = 0; bi < d.batch; ++bi) {
            const std::int64_t base = bi * d.per_batch() + static_cast<std::int64_t>(c) * plane;
            for (int r = 0; r < d.rows; ++r) {
                const std::int64_t rb = base + static_cast<std::int64_t>(r) * T;
                for (int t = 0; t < T; ++t) {
                    real_t v = g * (x.value[static_cast<std::size_t>(rb + t)] - mu) * is + be;
                    if (v < 0 || (mask && !mask->at(bi, t))) v = 0;
                    out->value[static_cast<std::size_t>(rb + t)] = v;
                }
            }
        }
    }

    tape.record(out, [out, &x, &gamma, &beta, st = std::move(st), mode, mask, d] {
        std::vector<real_t> dpre(out->grad.size());
        for (std::size_t i = 0; i < dpre.size(); ++i)
            dpre[i] = out->value[i] > 0 ? out->grad[i] : real_t{0};
        bn_backward(x, gamma, beta, st, mode, mask, d, dpre);
    });
    return out;
}

DiffArray* relu(Tape& tape, DiffArray& x) {
    DiffArray* out = tape.alloc(x.shape, x.tracked);
    for (std::size_t i = 0; i < x.value.size(); ++i)
        out->value[i] = x.value[i] > 0 ? x.value[i] : real_t{0};
    tape.record(out, [out, &x] {
        if (real_t* gx = grad_of(x))
            for (std::size_t i = 0; i < out->grad.size(); ++i)
                if (out->value[i] > 0) gx[i] += out->grad[i];
    });
    return out;
}

DiffArray* softmax_over_classes(Tape& tape, DiffArray& x, bool batched) {
    const int r = x.shape.rank();
    if ((batched && r != 3) || (!batched && r != 2))
        throw ValidationError("softmax_over_classes: expected " +
                              std::string(batched ? "[B x l x T]" : "[l x T]") + ", got " +
                              x.shape.str());
    const int B = batched ? x.shape[0] : 1;
    const int L = batched ? x.shape[1] : x.shape[0];
    const int T = batched ? x.shape[2] : x.shape[1];

    DiffArray* out = tape.alloc(x.shape, x.tracked);
    const std::int64_t bs = static_cast<std::int64_t>(L) * T;
    for (int bi = 0; bi < B; ++bi) {
        const real_t* xa = x.value.data() + bi * bs;
        real_t* oa = out->value.data() + bi * bs;
        for (int t = 0; t < T; ++t) {
            real_t mx = xa[t];
            for (int c = 1; c < L; ++c)
                mx = std::max(mx, xa[static_cast<std::int64_t>(c) * T + t]);
            real_t z = 0;
            for (int c = 0; c < L; ++c) {
                const real_t e = std::exp(xa[static_cast<std::int64_t>(c) * T + t] - mx);
                oa[static_cast<std::int64_t>(c) * T + t] = e;
                z += e;
            }
            const real_t inv = real_t{1} / z;
            for (int c = 0; c < L; ++c) oa[static_cast<std::int64_t>(c) * T + t] *= inv;
        }
    }

    tape.record(out, [out, &x, B, L, T, bs] {
        real_t* gx = grad_of(x);
        if (!gx) return;
        for (int bi = 0; bi < B; ++bi) {
            const real_t* y = out->value.data() + bi * bs;
            const real_t* gy = out->grad.data() + bi * bs;
            for (int t = 0; t < T; ++t) {
                real_t dot = 0;
                for (int c = 0; c < L; ++c) {
                    const std::int64_t i = static_cast<std::int64_t>(c) * T + t;
                    dot += gy[i] * y[i];
                }
                for (int c = 0; c < L; ++c) {
                    const std::int64_t i = static_cast<std::int64_t>(c) * T + t;
                    gx[bi * bs + i] += y[i] * (gy[i] - dot);
                }
            }
        }
    });
    return out;
}

DiffArray* mean_pool_nodes(Tape& tape, DiffArray& x, bool batched) {
    const int r = x.shape.rank();
    if ((batched && r != 4) || (!batched && r != 3))
        throw ValidationError("mean_pool_nodes: expected " +
                              std::string(batched ? "[B x C x N x T]" : "[C x N x T]") +
                              ", got " + x.shape.str());
    const int B = batched ? x.shape[0] : 1;
    const int C = batched ? x.shape[1] : x.shape[0];
    const int N = batched ? x.shape[2] : x.shape[1];
    const int T = batched ? x.shape[3] : x.shape[2];

    DiffArray* out = tape.alloc(batched ? Shape{B, C, T} : Shape{C, T}, x.tracked);
    const real_t inv_n = real_t{1} / static_cast<real_t>(N);
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
            const real_t* xin =
                x.value.data() + ((static_cast<std::int64_t>(bi) * C + c) * N) * T;
            real_t* o = out->value.data() + (static_cast<std::int64_t>(bi) * C + c) * T;
            std::fill_n(o, T, real_t{0});
            for (int n = 0; n < N; ++n) {
                const real_t* row = xin + static_cast<std::int64_t>(n) * T;
                for (int t = 0; t < T; ++t) o[t] += row[t];
            }
            for (int t = 0; t < T; ++t) o[t] *= inv_n;
        }

    tape.record(out, [out, &x, B, C, N, T, inv_n] {
        real_t* gx = grad_of(x);
        if (!gx) return;
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < C; ++c) {
                const real_t* go = out->grad.data() + (static_cast<std::int64_t>(bi) * C + c) * T;
                real_t* g = gx + ((static_cast<std::int64_t>(bi) * C + c) * N) * T;
                for (int n = 0; n < N; ++n) {
                    real_t* row = g + static_cast<std::int64_t>(n) * T;
                    for (int t = 0; t < T; ++t) row[t] += go[t] * inv_n;
                }
            }
    });
    return out;
}

DiffArray* add(Tape& tape, DiffArray& x, DiffArray& y) {
    if (x.shape != y.shape)
        throw ValidationError("add: shape mismatch " + x.shape.str() + " vs " + y.shape.str());
    DiffArray* out = tape.alloc(x.shape, x.tracked || y.tracked);
    for (std::size_t i = 0; i < x.value.size(); ++i) out->value[i] = x.value[i] + y.value[i];
    tape.record(out, [out, &x, &y] {
        if (real_t* gx = grad_of(x))
            for (std::size_t i = 0; i < out->grad.size(); ++i) gx[i] += out->grad[i];
        if (real_t* gy = grad_of(y))
            for (std::size_t i = 0; i < out->grad.size(); ++i) gy[i] += out->grad[i];
    });
    return out;
}

namespace {

// out = (x [+ skip]) with invalid columns zeroed; shared by residual_add
// and mask_zero.
DiffArray* masked_sum(Tape& tape, DiffArray& x, DiffArray* skip, const Mask* mask,
                      bool batched, const char* op) {
    const FeatDims d = feat_dims(x, batched, op);
    detail::check_mask(mask, d, op);
    if (skip && skip->shape != x.shape)
        throw ValidationError(std::string(op) + ": shape mismatch " + x.shape.str() + " vs " +
                              skip->shape.str());

    const bool track = x.tracked || (skip && skip->tracked);
    DiffArray* out = tape.alloc(x.shape, track);
    const int T = d.time;
    const std::int64_t cr = static_cast<std::int64_t>(d.channels) * d.rows;
    for (int bi = 0; bi < d.batch; ++bi) {
        const std::int64_t base = bi * d.per_batch();
        for (std::int64_t row = 0; row < cr; ++row) {
            const std::int64_t rb = base + row * T;
            for (int t = 0; t < T; ++t) {
                real_t v = x.value[static_cast<std::size_t>(rb + t)];
                if (skip) v += skip->value[static_cast<std::size_t>(rb + t)];
                if (mask && !mask->at(bi, t)) v = 0;
                out->value[static_cast<std::size_t>(rb + t)] = v;
            }
        }
    }

    tape.record(out, [out, &x, skip, mask, d, T, cr] {
        real_t* gx = grad_of(x);
        real_t* gs = skip ? grad_of(*skip) : nullptr;
        if (!gx && !gs) return;
        for (int bi = 0; bi < d.batch; ++bi) {
            const std::int64_t base = bi * d.per_batch();
            for (std::int64_t row = 0; row < cr; ++row) {
                const std::int64_t rb = base + row * T;
                for (int t = 0; t < T; ++t) {
                    if (mask && !mask->at(bi, t)) continue;
                    const real_t g = out->grad[static_cast<std::size_t>(rb + t)];
                    if (gx) gx[rb + t] += g;
                    if (gs) gs[rb + t] += g;
                }
            }
        }
    });
    return out;
}

}  // namespace

DiffArray* residual_add(Tape& tape, DiffArray& x, DiffArray& skip, const Mask* mask,
                        bool batched) {
    return masked_sum(tape, x, &skip, mask, batched, "residual_add");
}

DiffArray* mask_zero(Tape& tape, DiffArray& x, const Mask* mask, bool batched) {
    return masked_sum(tape, x, nullptr, mask, batched, "mask_zero");
}

DiffArray* reshape_copy(Tape& tape, DiffArray& x, Shape target) {
    if (target.numel() != x.shape.numel())
        throw ValidationError("reshape_copy: cannot reshape " + x.shape.str() + " to " +
                              target.str());
    DiffArray* out = tape.alloc(target, x.tracked);
    out->value = x.value;
    tape.record(out, [out, &x] {
        if (real_t* gx = grad_of(x))
            for (std::size_t i = 0; i < out->grad.size(); ++i) gx[i] += out->grad[i];
    });
    return out;
}

DiffArray* scale(Tape& tape, DiffArray& x, real_t c) {
    DiffArray* out = tape.alloc(x.shape, x.tracked);
    for (std::size_t i = 0; i < x.value.size(); ++i) out->value[i] = c * x.value[i];
    tape.record(out, [out, &x, c] {
        if (real_t* gx = grad_of(x))
            for (std::size_t i = 0; i < out->grad.size(); ++i) gx[i] += c * out->grad[i];
    });
    return out;
}

DiffArray* mul(Tape& tape, DiffArray& x, DiffArray& y) {
    if (x.shape != y.shape)
        throw ValidationError("mul: shape mismatch " + x.shape.str() + " vs " + y.shape.str());
    DiffArray* out = tape.alloc(x.shape, x.tracked || y.tracked);
    for (std::size_t i = 0; i < x.value.size(); ++i) out->value[i] = x.value[i] * y.value[i];
    tape.record(out, [out, &x, &y] {
        if (real_t* gx = grad_of(x))
            for (std::size_t i = 0; i < out->grad.size(); ++i) gx[i] += y.value[i] * out->grad[i];
        if (real_t* gy = grad_of(y))
            for (std::size_t i = 0; i < out->grad.size(); ++i) gy[i] += x.value[i] * out->grad[i];
    });
    return out;
}

DiffArray* sum_all(Tape& tape, DiffArray& x) {
    DiffArray* out = tape.alloc(Shape{1}, x.tracked);
    real_t acc = 0;
    for (real_t v : x.value) acc += v;
    out->value[0] = acc;
    tape.record(out, [out, &x] {
        if (real_t* gx = grad_of(x)) {
            const real_t g = out->grad[0];
            for (std::size_t i = 0; i < x.value.size(); ++i) gx[i] += g;
        }
    });
    return out;
}

DiffArray* weighted_sum(Tape& tape, DiffArray& x, const std::vector<real_t>& w) {
    if (w.size() != x.value.size())
        throw ValidationError("weighted_sum: " + std::to_string(w.size()) + " weights for " +
                              std::to_string(x.value.size()) + " values");
    DiffArray* out = tape.alloc(Shape{1}, x.tracked);
    real_t acc = 0;
    for (std::size_t i = 0; i < x.value.size(); ++i) acc += w[i] * x.value[i];
    out->value[0] = acc;
    tape.record(out, [out, &x, w] {
        if (real_t* gx = grad_of(x)) {
            const real_t g = out->grad[0];
            for (std::size_t i = 0; i < x.value.size(); ++i) gx[i] += g * w[i];
        }
    });
    return out;
}

}  // namespace fogseg
