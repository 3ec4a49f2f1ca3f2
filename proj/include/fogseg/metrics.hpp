#pragma once

#include <array>
#include <vector>

#include "fogseg/data.hpp"

namespace fogseg {

// Maximal run of one label; [start, end) in samples.
struct Segment {
    int label = 0;
    int start = 0;
    int end = 0;

    int length() const { return end - start; }
    bool operator==(const Segment& o) const {
        return label == o.label && start == o.start && end == o.end;
    }
};

std::vector<Segment> extract_segments(const std::vector<int>& labels);
std::vector<int> expand_segments(const std::vector<Segment>& segments);

inline constexpr std::array<double, 4> kF1Thresholds = {0.10, 0.25, 0.50, 0.75};

struct F1Counts {
    int tp = 0, fp = 0, fn = 0;
    // 100 * 2TP / (2TP + FP + FN); 100 when all three are zero (no target
    // segments anywhere and no false alarms).
    double f1() const {
        const int denom = 2 * tp + fp + fn;
        return denom == 0 ? 100.0 : 100.0 * 2.0 * tp / denom;
    }
};

// Segment-wise score: predicted target segments are matched greedily in
// temporal order, each taking the unmatched truth segment of maximal IoU;
// a match counts as TP when IoU >= threshold (ties inclusive).
F1Counts f1_at_k(const std::vector<Segment>& pred, const std::vector<Segment>& truth,
                 double threshold, int target_class = kClassFog);
F1Counts f1_at_k(const std::vector<int>& pred, const std::vector<int>& truth, double threshold,
                 int target_class = kClassFog);

// Sample-wise Matthews correlation coefficient scaled to [-100, 100];
// zero when any contingency factor is zero.
double mcc(const std::vector<int>& pred, const std::vector<int>& truth);

// 100 * (FOG samples) / T
double percent_tf(const std::vector<int>& labels);

int count_fog(const std::vector<Segment>& segments);
inline int count_fog(const std::vector<int>& labels) {
    return count_fog(extract_segments(labels));
}

// Episode-level detection: a truth episode is a TP when any predicted FOG
// sample overlaps it; a predicted FOG segment overlapping no truth episode
// is an FP.
struct EpisodeCounts {
    int tp = 0;
    int fp = 0;
    int truth_episodes = 0;
};
EpisodeCounts episode_detection(const std::vector<Segment>& pred,
                                const std::vector<Segment>& truth);
EpisodeCounts episode_detection(const std::vector<int>& pred, const std::vector<int>& truth);

// Everything the evaluation emits for one label-stream pair (or a pooled
// set of pairs).
struct SegMetricReport {
    std::array<F1Counts, 4> f1_counts{};  // per kF1Thresholds entry
    double mcc = 0;
    double tf_pred = 0, tf_truth = 0;
    int nfog_pred = 0, nfog_truth = 0;
    EpisodeCounts episodes;

    double f1(int i) const { return f1_counts[static_cast<std::size_t>(i)].f1(); }
};

SegMetricReport evaluate_streams(const std::vector<int>& pred, const std::vector<int>& truth);

}  // namespace fogseg
