#include "fogseg/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>

namespace fogseg {

namespace {

struct Moments {
    double mean_x = 0, mean_y = 0;
    double sxx = 0, syy = 0, sxy = 0;
    int n = 0;
};

Moments moments(const std::vector<double>& x, const std::vector<double>& y, const char* op) {
    if (x.size() != y.size())
        throw ValidationError(std::string(op) + ": size mismatch (" + std::to_string(x.size()) +
                              " vs " + std::to_string(y.size()) + ")");
    Moments m;
    m.n = static_cast<int>(x.size());
    if (m.n < 3)
        throw ValidationError(std::string(op) + ": need at least 3 points, got " +
                              std::to_string(m.n));
    for (int i = 0; i < m.n; ++i) {
        m.mean_x += x[static_cast<std::size_t>(i)];
        m.mean_y += y[static_cast<std::size_t>(i)];
    }
    m.mean_x /= m.n;
    m.mean_y /= m.n;
    for (int i = 0; i < m.n; ++i) {
        const double dx = x[static_cast<std::size_t>(i)] - m.mean_x;
        const double dy = y[static_cast<std::size_t>(i)] - m.mean_y;
        m.sxx += dx * dx;
        m.syy += dy * dy;
        m.sxy += dx * dy;
    }
    if (m.sxx == 0 || m.syy == 0)
        throw ValidationError(std::string(op) + ": undefined correlation, zero variance in " +
                              (m.sxx == 0 ? "x" : "y"));
    return m;
}

}  // namespace

PearsonResult pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
    const Moments m = moments(x, y, "pearson_r");
    PearsonResult out;
    out.n = m.n;
    out.r = m.sxy / std::sqrt(m.sxx * m.syy);
    if (out.r > 1) out.r = 1;
    if (out.r < -1) out.r = -1;

    if (std::abs(out.r) >= 1.0) {
        // Fisher z diverges on an exact linear relation
        out.ci_lo = out.ci_hi = out.r;
        return out;
    }
    if (m.n == 3) {
        out.ci_lo = -1.0;
        out.ci_hi = 1.0;
        return out;
    }
    const double z = std::atanh(out.r);
    const double se = 1.0 / std::sqrt(static_cast<double>(m.n) - 3.0);
    out.ci_lo = std::tanh(z - 1.96 * se);
    out.ci_hi = std::tanh(z + 1.96 * se);
    return out;
}

LinregResult linreg(const std::vector<double>& x, const std::vector<double>& y) {
    const Moments m = moments(x, y, "linreg");
    LinregResult out;
    out.n = m.n;
    out.slope = m.sxy / m.sxx;
    out.intercept = m.mean_y - out.slope * m.mean_x;

    double sse = 0;
    for (int i = 0; i < m.n; ++i) {
        const double e = y[static_cast<std::size_t>(i)] -
                         (out.intercept + out.slope * x[static_cast<std::size_t>(i)]);
        sse += e * e;
    }
    const int df = m.n - 2;
    const double s2 = sse / df;
    const double se_slope = std::sqrt(s2 / m.sxx);
    const double se_int = std::sqrt(s2 * (1.0 / m.n + m.mean_x * m.mean_x / m.sxx));
    const boost::math::students_t dist(static_cast<double>(df));
    const double tq = boost::math::quantile(dist, 0.975);
    out.slope_lo = out.slope - tq * se_slope;
    out.slope_hi = out.slope + tq * se_slope;
    out.intercept_lo = out.intercept - tq * se_int;
    out.intercept_hi = out.intercept + tq * se_int;
    return out;
}

std::string classify_strength(double r) {
    const double a = std::abs(r);
    if (a >= 0.8) return "strong";
    if (a >= 0.6) return "moderately strong";
    if (a >= 0.3) return "fair";
    return "poor";
}

}  // namespace fogseg
