#pragma once

// Brute-force reference implementations used only as test oracles. They
// deliberately share no code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "fogseg/array.hpp"
#include "fogseg/data.hpp"

namespace fogseg::testing {

// Dense contraction for the partitioned graph convolution:
// out[c,n,t] = sum_p sum_m dinv[p][n] a[p][n][m] mask[p][n][m]
//              sum_i w[p][c][i] f[i][m][t]
inline std::vector<real_t> graph_conv_reference(
    const std::vector<real_t>& f, int c_in, int n_nodes, int t_len,
    const std::vector<real_t>& a, const std::vector<real_t>& dinv,
    const std::vector<real_t>& mask, const std::vector<real_t>& w, int p_count, int c_out) {
    std::vector<real_t> out(static_cast<std::size_t>(c_out) * n_nodes * t_len, 0);
    for (int p = 0; p < p_count; ++p)
        for (int c = 0; c < c_out; ++c)
            for (int n = 0; n < n_nodes; ++n)
                for (int m = 0; m < n_nodes; ++m) {
                    const real_t coef =
                        dinv[static_cast<std::size_t>(p) * n_nodes + n] *
                        a[(static_cast<std::size_t>(p) * n_nodes + n) * n_nodes + m] *
                        mask[(static_cast<std::size_t>(p) * n_nodes + n) * n_nodes + m];
                    if (coef == 0) continue;
                    for (int i = 0; i < c_in; ++i) {
                        const real_t wc =
                            w[(static_cast<std::size_t>(p) * c_out + c) * c_in + i];
                        for (int t = 0; t < t_len; ++t)
                            out[(static_cast<std::size_t>(c) * n_nodes + n) * t_len + t] +=
                                coef * wc *
                                f[(static_cast<std::size_t>(i) * n_nodes + m) * t_len + t];
                    }
                }
    return out;
}

// Independent segment extraction: index-scan instead of run builder.
struct RefSegment {
    int label, start, end;
};
inline std::vector<RefSegment> ref_segments(const std::vector<int>& y) {
    std::vector<RefSegment> out;
    int i = 0;
    const int t = static_cast<int>(y.size());
    while (i < t) {
        int j = i;
        while (j < t && y[static_cast<std::size_t>(j)] == y[static_cast<std::size_t>(i)]) ++j;
        out.push_back({y[static_cast<std::size_t>(i)], i, j});
        i = j;
    }
    return out;
}

inline double ref_iou(const RefSegment& a, const RefSegment& b) {
    const double inter =
        std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
    if (inter <= 0) return 0;
    const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
    return inter / uni;
}

// Clean-room greedy matcher mirroring the documented metric semantics.
struct RefF1 {
    int tp = 0, fp = 0, fn = 0;
    double f1 = 0;
};
inline RefF1 ref_f1_at_k(const std::vector<int>& pred, const std::vector<int>& truth, double k) {
    std::vector<RefSegment> p, g;
    for (const auto& s : ref_segments(pred))
        if (s.label == kClassFog) p.push_back(s);
    for (const auto& s : ref_segments(truth))
        if (s.label == kClassFog) g.push_back(s);
    RefF1 r;
    std::vector<char> used(g.size(), 0);
    for (const auto& ps : p) {
        double best = 0;
        int arg = -1;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!used[i] && ref_iou(ps, g[i]) > best) {
                best = ref_iou(ps, g[i]);
                arg = static_cast<int>(i);
            }
        if (arg >= 0 && best >= k) {
            used[static_cast<std::size_t>(arg)] = 1;
            ++r.tp;
        } else {
            ++r.fp;
        }
    }
    r.fn = static_cast<int>(g.size()) - r.tp;
    const int denom = 2 * r.tp + r.fp + r.fn;
    r.f1 = denom == 0 ? 100.0 : 100.0 * 2.0 * r.tp / denom;
    return r;
}

// Exhaustive optimal assignment: maximum number of (pred, truth) pairs with
// IoU >= k under a one-to-one constraint. Exponential; for tiny instances.
inline int ref_optimal_tp(const std::vector<int>& pred, const std::vector<int>& truth,
                          double k) {
    std::vector<RefSegment> p, g;
    for (const auto& s : ref_segments(pred))
        if (s.label == kClassFog) p.push_back(s);
    for (const auto& s : ref_segments(truth))
        if (s.label == kClassFog) g.push_back(s);
    std::vector<char> used(g.size(), 0);
    std::function<int(std::size_t)> rec = [&](std::size_t i) -> int {
        if (i == p.size()) return 0;
        int best = rec(i + 1);  // leave p[i] unmatched
        for (std::size_t j = 0; j < g.size(); ++j)
            if (!used[j] && ref_iou(p[i], g[j]) >= k) {
                used[j] = 1;
                best = std::max(best, 1 + rec(i + 1));
                used[j] = 0;
            }
        return best;
    };
    return rec(0);
}

// Contingency-table MCC, scaled by 100.
inline double ref_mcc(const std::vector<int>& pred, const std::vector<int>& truth) {
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] == kClassFog)
            (pred[i] == kClassFog ? tp : fn) += 1;
        else
            (pred[i] == kClassFog ? fp : tn) += 1;
    }
    const double d = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    return d == 0 ? 0.0 : 100.0 * (tp * tn - fp * fn) / d;
}

inline double ref_percent_tf(const std::vector<int>& y) {
    double fog = 0;
    for (int v : y) fog += v == kClassFog;
    return 100.0 * fog / static_cast<double>(y.size());
}

inline int ref_count_fog(const std::vector<int>& y) {
    int n = 0;
    for (const auto& s : ref_segments(y)) n += s.label == kClassFog;
    return n;
}

// Normal-equation OLS plus correlation, with hand-carried formulas.
struct RefOls {
    double r, slope, intercept, se_slope, se_intercept;
};
inline RefOls ref_ols(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double sx = std::accumulate(x.begin(), x.end(), 0.0);
    const double sy = std::accumulate(y.begin(), y.end(), 0.0);
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    // 2x2 normal equations [n sx; sx sxx] [b0 b1]^T = [sy sxy]^T
    const double det = n * sxx - sx * sx;
    RefOls o{};
    o.intercept = (sy * sxx - sx * sxy) / det;
    o.slope = (n * sxy - sx * sy) / det;
    o.r = (n * sxy - sx * sy) /
          std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - o.intercept - o.slope * x[i];
        sse += e * e;
    }
    const double s2 = sse / (n - 2);
    o.se_slope = std::sqrt(s2 * n / det);
    o.se_intercept = std::sqrt(s2 * sxx / det);
    return o;
}

}  // namespace fogseg::testing
