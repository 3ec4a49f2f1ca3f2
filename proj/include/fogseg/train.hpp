#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fogseg/data.hpp"
#include "fogseg/loss.hpp"
#include "fogseg/metrics.hpp"
#include "fogseg/model.hpp"
#include "fogseg/optim.hpp"

namespace fogseg {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 1;
    real_t lr = static_cast<real_t>(0.0005);
    LossConfig loss;
    ModelConfig model;

    void validate() const {
        if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
        if (lr <= 0) throw ValidationError("train config: lr must be > 0");
        loss.validate();
        model.validate();
    }
};

// One padded training batch assembled from displacement features.
struct Batch {
    DiffArray x;                    // [B x C_in x N x T_max], zero padded
    std::vector<int> labels;        // [B x T_max], padding labeled FG
    Mask mask;                      // valid iff inside the trial
    std::vector<int> trial_indices;
};

// Deterministic per-seed shuffle, then consecutive chunks padded to each
// chunk's longest trial. Feed mix64(seed, epoch) for per-epoch reshuffles.
std::vector<Batch> make_batches(const std::vector<Trial>& trials, int batch_size,
                                std::uint64_t seed);

struct EpochLoss {
    int epoch = 0;
    std::vector<real_t> stage_ce;    // summed over batches, averaged per batch
    std::vector<real_t> stage_tmse;
    real_t total = 0;
};

struct TrainResult {
    ParamStore params;
    std::vector<EpochLoss> trace;
};

// Full training recipe on one trial set. `on_epoch` (when set) observes the
// trace as it grows, so a divergence abort still leaves the emitted rows
// behind. `stop_when` (when set) is polled after each epoch with the live
// parameters and may end training early.
TrainResult train(const std::vector<Trial>& trials, const SkeletonGraph& graph,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochLoss&)>& on_epoch = {},
                  const std::function<bool(const ParamStore&, int)>& stop_when = {});

// Eval-mode prediction for one trial (running BN statistics, no batching).
struct TrialPrediction {
    std::string trial_id;
    std::vector<std::vector<real_t>> stage_probs;  // per stage, [l x T] row-major
    std::vector<int> labels;                       // argmax of the final stage
    std::vector<int> truth;                        // aligned expert labels
};
TrialPrediction predict_trial(const Trial& trial, const SkeletonGraph& graph,
                              const ModelConfig& cfg, ParamStore& params,
                              const PartitionedAdjacency& adj);

struct FoldPlan {
    std::string held_out;
    std::vector<int> train_idx;
    std::vector<int> eval_idx;
};

// One fold per evaluation subject; enrichment trials join every fold's
// training set and are never evaluated. Enrichment trials of the held-out
// subject are dropped from that fold (the no-leakage rule wins).
std::vector<FoldPlan> make_folds(const std::vector<Trial>& trials,
                                 const std::vector<bool>& enrichment);

// Throws LeakageError when a plan violates the no-leakage invariants.
void check_fold_plan(const std::vector<Trial>& trials, const FoldPlan& plan);

struct FoldResult {
    std::string subject;
    SegMetricReport pooled;                    // all eval samples of the subject
    std::vector<SegMetricReport> per_trial;    // aligned with predictions
    std::vector<TrialPrediction> predictions;
    std::vector<EpochLoss> trace;
    // false-positive episodes on trials the experts left FOG-free
    int fp_nonfog_trials = 0;
    int nonfog_trials = 0;
};

struct LosoSummary {
    // mean / SD (population) across folds for F1@{10,25,50,75} and MCC
    std::array<double, 4> f1_mean{}, f1_sd{};
    double mcc_mean = 0, mcc_sd = 0;
};

struct LosoResult {
    std::vector<FoldResult> folds;
    LosoSummary summary;
};

LosoResult loso(const std::vector<Trial>& trials, const std::vector<bool>& enrichment,
                const SkeletonGraph& graph, const TrainConfig& cfg, int jobs = 1,
                const std::function<void(const FoldResult&)>& on_fold = {});

LosoSummary summarize_folds(const std::vector<FoldResult>& folds);

}  // namespace fogseg
