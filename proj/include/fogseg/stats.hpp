#pragma once

#include <string>
#include <vector>

#include "fogseg/errors.hpp"

namespace fogseg {

struct PearsonResult {
    double r = 0;
    double ci_lo = 0, ci_hi = 0;  // Fisher z interval at 95%
    int n = 0;
};

// Pearson correlation with Fisher-z 95% confidence interval (normal
// quantile 1.96). Needs n >= 3 and nonzero variance on both sides.
PearsonResult pearson_r(const std::vector<double>& x, const std::vector<double>& y);

struct LinregResult {
    double slope = 0, intercept = 0;
    double slope_lo = 0, slope_hi = 0;          // t-based 95% intervals, df = n-2
    double intercept_lo = 0, intercept_hi = 0;
    int n = 0;

    bool significant() const { return slope_lo > 0 || slope_hi < 0; }
};

LinregResult linreg(const std::vector<double>& x, const std::vector<double>& y);

// |r| >= 0.8 strong, >= 0.6 moderately strong, >= 0.3 fair, below poor.
std::string classify_strength(double r);

}  // namespace fogseg
