#pragma once

// Shared kernel plumbing for the op implementations. Not installed.

#include <cblas.h>

#include <string>

#include "fogseg/array.hpp"
#include "fogseg/ops.hpp"

namespace fogseg::detail {

// Row-major C = alpha * op(A) op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, real_t alpha,
                 const real_t* a, int lda, const real_t* b, int ldb, real_t beta,
                 real_t* c, int ldc) {
    if (m == 0 || n == 0) return;
#ifdef FOGSEG_SINGLE_PRECISION
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
#else
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
#endif
}

// Decoded layout of a feature array: [B x C x R x T] where R is the node
// axis (1 when absent) and B is 1 for unbatched arrays.
struct FeatDims {
    int batch = 1;
    int channels = 0;
    int rows = 1;
    int time = 0;

    std::int64_t plane() const { return static_cast<std::int64_t>(rows) * time; }
    std::int64_t per_batch() const { return static_cast<std::int64_t>(channels) * plane(); }
};

inline FeatDims feat_dims(const DiffArray& x, bool batched, const char* op) {
    FeatDims d;
    const Shape& s = x.shape;
    const int r = s.rank();
    if (batched) {
        if (r == 3) {
            d = {s[0], s[1], 1, s[2]};
        } else if (r == 4) {
            d = {s[0], s[1], s[2], s[3]};
        } else {
            throw ValidationError(std::string(op) + ": batched input must be rank 3 or 4, got " +
                                  s.str());
        }
    } else {
        if (r == 2) {
            d = {1, s[0], 1, s[1]};
        } else if (r == 3) {
            d = {1, s[0], s[1], s[2]};
        } else {
            throw ValidationError(std::string(op) + ": input must be rank 2 or 3, got " + s.str());
        }
    }
    return d;
}

inline void check_mask(const Mask* mask, const FeatDims& d, const char* op) {
    if (!mask) return;
    if (mask->batch != d.batch || mask->time != d.time)
        throw ValidationError(std::string(op) + ": mask is " + std::to_string(mask->batch) + "x" +
                              std::to_string(mask->time) + " but input has batch " +
                              std::to_string(d.batch) + ", time " + std::to_string(d.time));
}

}  // namespace fogseg::detail
