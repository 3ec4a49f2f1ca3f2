#include "fogseg/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace fogseg {

std::vector<Segment> extract_segments(const std::vector<int>& labels) {
    std::vector<Segment> out;
    if (labels.empty()) throw ValidationError("extract_segments: empty label stream");
    int start = 0;
    for (std::size_t t = 1; t <= labels.size(); ++t) {
        if (t == labels.size() || labels[t] != labels[static_cast<std::size_t>(start)]) {
            out.push_back({labels[static_cast<std::size_t>(start)], start, static_cast<int>(t)});
            start = static_cast<int>(t);
        }
    }
    return out;
}

std::vector<int> expand_segments(const std::vector<Segment>& segments) {
    std::vector<int> out;
    for (const auto& s : segments) {
        if (s.start != static_cast<int>(out.size()) || s.end <= s.start)
            throw ValidationError("expand_segments: segments do not tile [0, T)");
        out.insert(out.end(), static_cast<std::size_t>(s.length()), s.label);
    }
    return out;
}

namespace {

int stream_length(const std::vector<Segment>& segs) {
    int t = 0;
    for (const auto& s : segs) {
        if (s.start != t || s.end <= s.start)
            throw ValidationError("segment list does not tile [0, T)");
        t = s.end;
    }
    return t;
}

double iou(const Segment& a, const Segment& b) {
    const int inter = std::min(a.end, b.end) - std::max(a.start, b.start);
    if (inter <= 0) return 0.0;
    const int uni = std::max(a.end, b.end) - std::min(a.start, b.start);
    return static_cast<double>(inter) / uni;
}

std::vector<Segment> of_class(const std::vector<Segment>& segs, int cls) {
    std::vector<Segment> out;
    for (const auto& s : segs)
        if (s.label == cls) out.push_back(s);
    return out;
}

}  // namespace

F1Counts f1_at_k(const std::vector<Segment>& pred, const std::vector<Segment>& truth,
                 double threshold, int target_class) {
    const int tp_len = stream_length(pred);
    const int tt_len = stream_length(truth);
    if (tp_len != tt_len)
        throw ValidationError("f1_at_k: streams cover " + std::to_string(tp_len) + " vs " +
                              std::to_string(tt_len) + " samples");

    const auto p = of_class(pred, target_class);
    const auto g = of_class(truth, target_class);

    F1Counts counts;
    std::vector<bool> used(g.size(), false);
    for (const auto& ps : p) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (used[i]) continue;
            const double v = iou(ps, g[i]);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0 && best_iou >= threshold) {
            used[static_cast<std::size_t>(best)] = true;
            ++counts.tp;
        } else {
            ++counts.fp;
        }
    }
    counts.fn = static_cast<int>(g.size()) - counts.tp;
    return counts;
}

F1Counts f1_at_k(const std::vector<int>& pred, const std::vector<int>& truth, double threshold,
                 int target_class) {
    if (pred.size() != truth.size())
        throw ValidationError("f1_at_k: stream lengths differ (" + std::to_string(pred.size()) +
                              " vs " + std::to_string(truth.size()) + ")");
    return f1_at_k(extract_segments(pred), extract_segments(truth), threshold, target_class);
}

double mcc(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw ValidationError("mcc: stream lengths differ (" + std::to_string(pred.size()) +
                              " vs " + std::to_string(truth.size()) + ")");
    if (pred.empty()) throw ValidationError("mcc: empty streams");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == kClassFog;
        const bool t = truth[i] == kClassFog;
        tp += p && t;
        tn += !p && !t;
        fp += p && !t;
        fn += !p && t;
    }
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0) return 0.0;
    return 100.0 * (tp * tn - fp * fn) / std::sqrt(denom);
}

double percent_tf(const std::vector<int>& labels) {
    if (labels.empty()) throw ValidationError("percent_tf: empty label stream");
    std::size_t fog = 0;
    for (int y : labels) fog += y == kClassFog;
    return 100.0 * static_cast<double>(fog) / static_cast<double>(labels.size());
}

int count_fog(const std::vector<Segment>& segments) {
    int n = 0;
    for (const auto& s : segments) n += s.label == kClassFog;
    return n;
}

EpisodeCounts episode_detection(const std::vector<Segment>& pred,
                                const std::vector<Segment>& truth) {
    const auto p = of_class(pred, kClassFog);
    const auto g = of_class(truth, kClassFog);
    EpisodeCounts out;
    out.truth_episodes = static_cast<int>(g.size());
    auto overlaps = [](const Segment& a, const Segment& b) {
        return std::min(a.end, b.end) > std::max(a.start, b.start);
    };
    for (const auto& gs : g)
        for (const auto& ps : p)
            if (overlaps(gs, ps)) {
                ++out.tp;
                break;
            }
    for (const auto& ps : p) {
        bool any = false;
        for (const auto& gs : g)
            if (overlaps(ps, gs)) {
                any = true;
                break;
            }
        if (!any) ++out.fp;
    }
    return out;
}

EpisodeCounts episode_detection(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw ValidationError("episode_detection: stream lengths differ");
    return episode_detection(extract_segments(pred), extract_segments(truth));
}

SegMetricReport evaluate_streams(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw ValidationError("evaluate_streams: stream lengths differ (" +
                              std::to_string(pred.size()) + " vs " +
                              std::to_string(truth.size()) + ")");
    const auto ps = extract_segments(pred);
    const auto ts = extract_segments(truth);
    SegMetricReport r;
    for (std::size_t i = 0; i < kF1Thresholds.size(); ++i)
        r.f1_counts[i] = f1_at_k(ps, ts, kF1Thresholds[i]);
    r.mcc = mcc(pred, truth);
    r.tf_pred = percent_tf(pred);
    r.tf_truth = percent_tf(truth);
    r.nfog_pred = count_fog(ps);
    r.nfog_truth = count_fog(ts);
    r.episodes = episode_detection(ps, ts);
    return r;
}

}  // namespace fogseg
