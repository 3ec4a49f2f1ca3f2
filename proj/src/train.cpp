#include "fogseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "fogseg/rng.hpp"

namespace fogseg {

std::vector<Batch> make_batches(const std::vector<Trial>& trials, int batch_size,
                                std::uint64_t seed) {
    if (trials.empty()) throw ValidationError("make_batches: empty trial set");
    if (batch_size < 1) throw ValidationError("make_batches: batch_size must be >= 1");

    std::vector<int> order(trials.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    const int n_nodes = trials.front().num_markers();
    std::vector<Batch> batches;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t count =
            std::min(static_cast<std::size_t>(batch_size), order.size() - at);
        std::vector<FeatureSeq> feats;
        int t_max = 0;
        for (std::size_t i = 0; i < count; ++i) {
            const Trial& tr = trials[static_cast<std::size_t>(order[at + i])];
            if (tr.num_markers() != n_nodes)
                throw ValidationError("make_batches: trial " + tr.trial_id + " has " +
                                      std::to_string(tr.num_markers()) + " markers, expected " +
                                      std::to_string(n_nodes));
            feats.push_back(displacement_features(tr));
            t_max = std::max(t_max, feats.back().time);
        }

        Batch b;
        b.x = DiffArray::leaf(Shape{static_cast<int>(count), 3, n_nodes, t_max}, false);
        b.labels.assign(count * static_cast<std::size_t>(t_max), kClassFg);
        b.mask.batch = static_cast<int>(count);
        b.mask.time = t_max;
        b.mask.valid.assign(count * static_cast<std::size_t>(t_max), 0);
        for (std::size_t i = 0; i < count; ++i) {
            const FeatureSeq& f = feats[i];
            b.trial_indices.push_back(order[at + i]);
            for (int c = 0; c < 3; ++c)
                for (int n = 0; n < n_nodes; ++n)
                    for (int t = 0; t < f.time; ++t)
                        b.x.value[((i * 3 + static_cast<std::size_t>(c)) *
                                       static_cast<std::size_t>(n_nodes) +
                                   static_cast<std::size_t>(n)) *
                                      static_cast<std::size_t>(t_max) +
                                  static_cast<std::size_t>(t)] =
                            f.data[(static_cast<std::size_t>(n) * f.time + t) * 3 +
                                   static_cast<std::size_t>(c)];
            for (int t = 0; t < f.time; ++t) {
                b.labels[i * static_cast<std::size_t>(t_max) + static_cast<std::size_t>(t)] =
                    f.labels[static_cast<std::size_t>(t)];
                b.mask.valid[i * static_cast<std::size_t>(t_max) + static_cast<std::size_t>(t)] =
                    1;
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

TrainResult train(const std::vector<Trial>& trials, const SkeletonGraph& graph,
                  const TrainConfig& cfg, const std::function<void(const EpochLoss&)>& on_epoch,
                  const std::function<bool(const ParamStore&, int)>& stop_when) {
    cfg.validate();
    if (trials.empty()) throw ValidationError("train: empty trial set");
    for (const auto& tr : trials)
        if (tr.num_markers() != graph.num_nodes())
            throw ValidationError("train: trial " + tr.trial_id + " has " +
                                  std::to_string(tr.num_markers()) + " markers but the graph has " +
                                  std::to_string(graph.num_nodes()));

    const PartitionedAdjacency adj = partition(graph);
    TrainResult result;
    result.params = init_params(cfg.model, graph.num_nodes(), cfg.seed);
    AdamState adam;
    adam.lr = cfg.lr;
    adam.init(result.params);

    Tape tape;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches =
            make_batches(trials, cfg.batch_size, mix64(cfg.seed, static_cast<std::uint64_t>(epoch)));
        EpochLoss row;
        row.epoch = epoch;
        row.stage_ce.assign(static_cast<std::size_t>(cfg.model.num_stages), 0);
        row.stage_tmse.assign(static_cast<std::size_t>(cfg.model.num_stages), 0);
        for (auto& batch : batches) {
            tape.reset();
            StageOutputs outs = forward(tape, batch.x, result.params, cfg.model, adj,
                                        Mode::train, &batch.mask, true);
            LossBreakdown lb =
                total_loss(tape, outs, batch.labels, &batch.mask, cfg.loss, true);
            const real_t loss_value = lb.total->value[0];
            if (!std::isfinite(loss_value))
                throw NumericError("train: loss diverged (non-finite) at epoch " +
                                   std::to_string(epoch));
            for (int s = 0; s < cfg.model.num_stages; ++s) {
                row.stage_ce[static_cast<std::size_t>(s)] +=
                    lb.stage_ce[static_cast<std::size_t>(s)];
                row.stage_tmse[static_cast<std::size_t>(s)] +=
                    lb.stage_tmse[static_cast<std::size_t>(s)];
            }
            row.total += loss_value;
            tape.backward(lb.total);
            adam_step(result.params, adam);
            result.params.zero_grads();
        }
        const real_t nb = static_cast<real_t>(batches.size());
        for (auto& v : row.stage_ce) v /= nb;
        for (auto& v : row.stage_tmse) v /= nb;
        row.total /= nb;
        result.trace.push_back(row);
        if (on_epoch) on_epoch(row);
        if (stop_when && stop_when(result.params, epoch)) break;
    }
    tape.reset();
    return result;
}

TrialPrediction predict_trial(const Trial& trial, const SkeletonGraph& graph,
                              const ModelConfig& cfg, ParamStore& params,
                              const PartitionedAdjacency& adj) {
    if (trial.num_markers() != graph.num_nodes())
        throw ValidationError("predict: trial " + trial.trial_id + " has " +
                              std::to_string(trial.num_markers()) +
                              " markers but the graph has " +
                              std::to_string(graph.num_nodes()));
    const FeatureSeq f = displacement_features(trial);
    DiffArray x = to_model_input(f);

    Tape tape;
    tape.set_recording(false);
    StageOutputs outs = forward(tape, x, params, cfg, adj, Mode::eval, nullptr, false);

    TrialPrediction p;
    p.trial_id = trial.trial_id;
    for (DiffArray* s : outs) p.stage_probs.push_back(s->value);
    p.labels = predict_labels(*outs.back());
    p.truth = f.labels;
    return p;
}

std::vector<FoldPlan> make_folds(const std::vector<Trial>& trials,
                                 const std::vector<bool>& enrichment) {
    if (trials.size() != enrichment.size())
        throw ValidationError("make_folds: enrichment flags do not match trials");
    std::set<std::string> subjects;
    for (std::size_t i = 0; i < trials.size(); ++i)
        if (!enrichment[i]) subjects.insert(trials[i].subject_id);
    if (subjects.size() < 2)
        throw ValidationError("make_folds: need >= 2 evaluation subjects, got " +
                              std::to_string(subjects.size()));

    std::vector<FoldPlan> folds;
    for (const auto& held : subjects) {
        FoldPlan plan;
        plan.held_out = held;
        for (std::size_t i = 0; i < trials.size(); ++i) {
            if (trials[i].subject_id == held) {
                if (!enrichment[i]) plan.eval_idx.push_back(static_cast<int>(i));
                // enrichment data of the held-out subject would leak
            } else {
                plan.train_idx.push_back(static_cast<int>(i));
            }
        }
        if (plan.eval_idx.empty())
            throw ValidationError("make_folds: subject " + held + " has no evaluation trials");
        if (plan.train_idx.empty())
            throw ValidationError("make_folds: fold for " + held + " has no training trials");
        folds.push_back(std::move(plan));
    }
    return folds;
}

void check_fold_plan(const std::vector<Trial>& trials, const FoldPlan& plan) {
    std::set<int> train_set(plan.train_idx.begin(), plan.train_idx.end());
    for (int i : plan.eval_idx)
        if (train_set.count(i))
            throw LeakageError("fold " + plan.held_out + ": trial " +
                               trials[static_cast<std::size_t>(i)].trial_id +
                               " appears in both train and eval sets");
    for (int i : plan.train_idx)
        if (trials[static_cast<std::size_t>(i)].subject_id == plan.held_out)
            throw LeakageError("fold " + plan.held_out + ": training set contains trial " +
                               trials[static_cast<std::size_t>(i)].trial_id +
                               " of the held-out subject");
}

namespace {

SegMetricReport pool_streams(const std::vector<TrialPrediction>& preds) {
    std::vector<int> pred_all, truth_all;
    SegMetricReport pooled;
    bool first = true;
    std::array<F1Counts, 4> counts{};
    EpisodeCounts episodes;
    for (const auto& p : preds) {
        const auto ps = extract_segments(p.labels);
        const auto ts = extract_segments(p.truth);
        for (std::size_t i = 0; i < kF1Thresholds.size(); ++i) {
            const F1Counts c = f1_at_k(ps, ts, kF1Thresholds[i]);
            counts[i].tp += c.tp;
            counts[i].fp += c.fp;
            counts[i].fn += c.fn;
        }
        const EpisodeCounts e = episode_detection(ps, ts);
        episodes.tp += e.tp;
        episodes.fp += e.fp;
        episodes.truth_episodes += e.truth_episodes;
        pred_all.insert(pred_all.end(), p.labels.begin(), p.labels.end());
        truth_all.insert(truth_all.end(), p.truth.begin(), p.truth.end());
        (void)first;
        first = false;
    }
    pooled.f1_counts = counts;
    pooled.episodes = episodes;
    pooled.mcc = mcc(pred_all, truth_all);
    pooled.tf_pred = percent_tf(pred_all);
    pooled.tf_truth = percent_tf(truth_all);
    pooled.nfog_pred = count_fog(pred_all);
    pooled.nfog_truth = count_fog(truth_all);
    return pooled;
}

FoldResult run_fold(const std::vector<Trial>& trials, const SkeletonGraph& graph,
                    const TrainConfig& cfg, const FoldPlan& plan, std::uint64_t fold_seed) {
    check_fold_plan(trials, plan);
    std::vector<Trial> train_set;
    for (int i : plan.train_idx) train_set.push_back(trials[static_cast<std::size_t>(i)]);

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed;
    FoldResult fr;
    fr.subject = plan.held_out;
    TrainResult tr = train(train_set, graph, fold_cfg);
    fr.trace = std::move(tr.trace);

    const PartitionedAdjacency adj = partition(graph);
    for (int i : plan.eval_idx) {
        const Trial& t = trials[static_cast<std::size_t>(i)];
        TrialPrediction p = predict_trial(t, graph, fold_cfg.model, tr.params, adj);
        fr.per_trial.push_back(evaluate_streams(p.labels, p.truth));
        const bool truth_has_fog = fr.per_trial.back().nfog_truth > 0;
        if (!truth_has_fog) {
            ++fr.nonfog_trials;
            fr.fp_nonfog_trials += fr.per_trial.back().episodes.fp;
        }
        fr.predictions.push_back(std::move(p));
    }
    fr.pooled = pool_streams(fr.predictions);
    return fr;
}

}  // namespace

LosoSummary summarize_folds(const std::vector<FoldResult>& folds) {
    LosoSummary s;
    const double n = static_cast<double>(folds.size());
    for (std::size_t k = 0; k < kF1Thresholds.size(); ++k) {
        double mean = 0;
        for (const auto& f : folds) mean += f.pooled.f1(static_cast<int>(k));
        mean /= n;
        double var = 0;
        for (const auto& f : folds) {
            const double d = f.pooled.f1(static_cast<int>(k)) - mean;
            var += d * d;
        }
        s.f1_mean[k] = mean;
        s.f1_sd[k] = std::sqrt(var / n);  // population SD across folds
    }
    double mean = 0;
    for (const auto& f : folds) mean += f.pooled.mcc;
    mean /= n;
    double var = 0;
    for (const auto& f : folds) {
        const double d = f.pooled.mcc - mean;
        var += d * d;
    }
    s.mcc_mean = mean;
    s.mcc_sd = std::sqrt(var / n);
    return s;
}

LosoResult loso(const std::vector<Trial>& trials, const std::vector<bool>& enrichment,
                const SkeletonGraph& graph, const TrainConfig& cfg, int jobs,
                const std::function<void(const FoldResult&)>& on_fold) {
    cfg.validate();
    const auto plans = make_folds(trials, enrichment);
    LosoResult result;
    result.folds.resize(plans.size());

    // fold seeds depend only on (seed, fold index), never on scheduling
    auto fold_seed = [&](std::size_t i) {
        return mix64(cfg.seed, 0x666f6c64ull, static_cast<std::uint64_t>(i));
    };

    if (jobs <= 1 || plans.size() == 1) {
        for (std::size_t i = 0; i < plans.size(); ++i) {
            result.folds[i] = run_fold(trials, graph, cfg, plans[i], fold_seed(i));
            if (on_fold) on_fold(result.folds[i]);
        }
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex mu;
        const int workers = std::min<int>(jobs, static_cast<int>(plans.size()));
        std::exception_ptr error;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                while (true) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= plans.size() || error) return;
                        i = next++;
                    }
                    try {
                        FoldResult fr = run_fold(trials, graph, cfg, plans[i], fold_seed(i));
                        std::lock_guard<std::mutex> lock(mu);
                        result.folds[i] = std::move(fr);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(mu);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        for (auto& t : pool) t.join();
        if (error) std::rethrow_exception(error);
        if (on_fold)
            for (const auto& f : result.folds) on_fold(f);
    }

    result.summary = summarize_folds(result.folds);
    return result;
}

}  // namespace fogseg
