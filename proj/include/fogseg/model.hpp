#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fogseg/array.hpp"
#include "fogseg/ops.hpp"
#include "fogseg/skeleton.hpp"

namespace fogseg {

enum class Variant { MSGCN, STGCN, MSTCN, TCN };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
inline bool variant_uses_graph(Variant v) { return v == Variant::MSGCN || v == Variant::STGCN; }
inline bool variant_single_stage(Variant v) { return v == Variant::STGCN || v == Variant::TCN; }

struct ModelConfig {
    Variant variant = Variant::MSGCN;
    int num_stages = 5;        // 1 prediction generation + 4 refinement
    int layers_per_stage = 10;
    int channels = 64;
    int kernel = 3;
    int num_classes = 2;       // FG, FOG
    int in_channels = 3;       // 3-D displacement per marker

    std::vector<int> dilations() const;  // 2^i per layer
    void validate() const;
};

// Columns of the last stage's receptive influence: 1 + (k-1) * sum(dilations).
int stage1_receptive_field(const ModelConfig& cfg);

// Named parameter collection. Entry order is the creation order and is the
// authoritative order for initialization, optimizer state, and checkpoints.
struct ParamStore {
    struct Entry {
        std::string name;
        DiffArray array;
    };
    std::vector<Entry> entries;
    std::unordered_map<std::string, int> index;

    DiffArray& add(const std::string& name, Shape shape, bool tracked);
    bool has(const std::string& name) const { return index.count(name) != 0; }
    DiffArray& get(const std::string& name);
    const DiffArray& get(const std::string& name) const;

    std::int64_t num_tracked_scalars() const;
    void zero_grads();

    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;
};

// Zero-filled parameter set with the exact shapes the config implies.
ParamStore build_param_layout(const ModelConfig& cfg, int num_nodes);

// Layout + deterministic initialization: fan-in-scaled uniform for
// convolution weights, zeros for biases and BN shifts, ones for BN gains
// and attention masks.
ParamStore init_params(const ModelConfig& cfg, int num_nodes, std::uint64_t seed);

std::int64_t count_params(const ModelConfig& cfg, int num_nodes);

// graph conv -> BN -> ReLU -> dilated temporal conv -> BN -> ReLU -> + input
DiffArray* stgcn_block(Tape& tape, DiffArray& f, ParamStore& params, const std::string& prefix,
                       const PartitionedAdjacency& adj, int dilation, int kernel, Mode mode,
                       const Mask* mask = nullptr, bool batched = false);

// dilated temporal conv -> BN -> ReLU -> + input
DiffArray* tcn_block(Tape& tape, DiffArray& f, ParamStore& params, const std::string& prefix,
                     int dilation, int kernel, Mode mode, const Mask* mask = nullptr,
                     bool batched = false);

// Input BN -> 1x1 channel adjust -> layer stack -> (node pooling) -> 1x1 to
// classes -> softmax. Consumes [C_in x N x T] (or batched) for graph
// variants; collapsed variants reshape to [C_in*N x T] internally.
DiffArray* generation_stage(Tape& tape, DiffArray& x, ParamStore& params,
                            const ModelConfig& cfg, const PartitionedAdjacency& adj, Mode mode,
                            const Mask* mask = nullptr, bool batched = false);

// 1x1 class-to-channel adjust -> TCN stack -> 1x1 to classes -> softmax.
DiffArray* refinement_stage(Tape& tape, DiffArray& p_prev, ParamStore& params,
                            const ModelConfig& cfg, int stage, Mode mode,
                            const Mask* mask = nullptr, bool batched = false);

// One probability array per stage, each [num_classes x T] (or batched).
using StageOutputs = std::vector<DiffArray*>;

StageOutputs forward(Tape& tape, DiffArray& x, ParamStore& params, const ModelConfig& cfg,
                     const PartitionedAdjacency& adj, Mode mode, const Mask* mask = nullptr,
                     bool batched = false);

// Argmax over classes of an unbatched [l x T] probability array; exact ties
// resolve to the lower class index (FG).
std::vector<int> predict_labels(const DiffArray& probs);

}  // namespace fogseg
