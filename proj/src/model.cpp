#include "fogseg/model.hpp"

#include <cmath>

#include "fogseg/rng.hpp"

namespace fogseg {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::MSGCN: return "MS-GCN";
        case Variant::STGCN: return "ST-GCN";
        case Variant::MSTCN: return "MS-TCN";
        case Variant::TCN: return "TCN";
    }
    throw ValidationError("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "MS-GCN") return Variant::MSGCN;
    if (name == "ST-GCN") return Variant::STGCN;
    if (name == "MS-TCN") return Variant::MSTCN;
    if (name == "TCN") return Variant::TCN;
    throw ValidationError("unknown model variant '" + name +
                          "' (expected MS-GCN, ST-GCN, MS-TCN, or TCN)");
}

std::vector<int> ModelConfig::dilations() const {
    std::vector<int> d(static_cast<std::size_t>(layers_per_stage));
    for (int i = 0; i < layers_per_stage; ++i) d[static_cast<std::size_t>(i)] = 1 << i;
    return d;
}

void ModelConfig::validate() const {
    if (num_stages < 1) throw ValidationError("model config: num_stages must be >= 1");
    if (variant_single_stage(variant) && num_stages != 1)
        throw ValidationError("model config: " + variant_name(variant) +
                              " is single-stage but num_stages=" + std::to_string(num_stages));
    if (layers_per_stage < 1 || layers_per_stage > 20)
        throw ValidationError("model config: layers_per_stage must be in [1, 20]");
    if (channels < 1) throw ValidationError("model config: channels must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
        throw ValidationError("model config: kernel must be odd and >= 1 (acausal), got " +
                              std::to_string(kernel));
    if (num_classes < 2) throw ValidationError("model config: num_classes must be >= 2");
    if (in_channels < 1) throw ValidationError("model config: in_channels must be >= 1");
}

int stage1_receptive_field(const ModelConfig& cfg) {
    int reach = 0;
    for (int d : cfg.dilations()) reach += d * (cfg.kernel - 1) / 2;
    return 2 * reach + 1;
}

DiffArray& ParamStore::add(const std::string& name, Shape shape, bool tracked) {
    if (has(name)) throw ValidationError("ParamStore: duplicate parameter '" + name + "'");
    index.emplace(name, static_cast<int>(entries.size()));
    entries.push_back({name, DiffArray::leaf(shape, tracked)});
    return entries.back().array;
}

DiffArray& ParamStore::get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("ParamStore: no parameter '" + name + "'");
    return entries[static_cast<std::size_t>(it->second)].array;
}

const DiffArray& ParamStore::get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("ParamStore: no parameter '" + name + "'");
    return entries[static_cast<std::size_t>(it->second)].array;
}

std::int64_t ParamStore::num_tracked_scalars() const {
    std::int64_t n = 0;
    for (const auto& e : entries)
        if (e.array.tracked) n += e.array.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& e : entries) e.array.zero_grad();
}

ParamStore::ParamStore(const ParamStore& other) : entries(other.entries), index(other.index) {}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    entries = other.entries;
    index = other.index;
    return *this;
}

namespace {

void add_bn(ParamStore& p, const std::string& prefix, int channels) {
    auto& gamma = p.add(prefix + ".gamma", Shape{channels}, true);
    std::fill(gamma.value.begin(), gamma.value.end(), real_t{1});
    p.add(prefix + ".beta", Shape{channels}, true);
    p.add(prefix + ".run_mean", Shape{channels}, false);
    auto& rv = p.add(prefix + ".run_var", Shape{channels}, false);
    std::fill(rv.value.begin(), rv.value.end(), real_t{1});
}

}  // namespace

ParamStore build_param_layout(const ModelConfig& cfg, int num_nodes) {
    cfg.validate();
    if (variant_uses_graph(cfg.variant) && num_nodes < 1)
        throw ValidationError("model: graph variant needs a node count >= 1");

    const int c = cfg.channels;
    const int l = cfg.num_classes;
    const int k = cfg.kernel;
    const int n = num_nodes;
    const bool graph = variant_uses_graph(cfg.variant);
    const int c_in = graph ? cfg.in_channels : cfg.in_channels * num_nodes;

    ParamStore p;
    add_bn(p, "in_bn", c_in);
    p.add("stage0.in.w", Shape{c, c_in}, true);
    p.add("stage0.in.b", Shape{c}, true);
    for (int i = 0; i < cfg.layers_per_stage; ++i) {
        const std::string lp = "stage0.l" + std::to_string(i);
        if (graph) {
            p.add(lp + ".gc.w", Shape{kNumPartitions, c, c}, true);
            auto& m = p.add(lp + ".gc.m", Shape{kNumPartitions, n, n}, true);
            std::fill(m.value.begin(), m.value.end(), real_t{1});
            add_bn(p, lp + ".bn1", c);
            p.add(lp + ".tc.w", Shape{c, c, k}, true);
            p.add(lp + ".tc.b", Shape{c}, true);
            add_bn(p, lp + ".bn2", c);
        } else {
            p.add(lp + ".tc.w", Shape{c, c, k}, true);
            p.add(lp + ".tc.b", Shape{c}, true);
            add_bn(p, lp + ".bn", c);
        }
    }
    p.add("stage0.out.w", Shape{l, c}, true);
    p.add("stage0.out.b", Shape{l}, true);

    for (int s = 1; s < cfg.num_stages; ++s) {
        const std::string sp = "stage" + std::to_string(s);
        p.add(sp + ".in.w", Shape{c, l}, true);
        p.add(sp + ".in.b", Shape{c}, true);
        for (int i = 0; i < cfg.layers_per_stage; ++i) {
            const std::string lp = sp + ".l" + std::to_string(i);
            p.add(lp + ".tc.w", Shape{c, c, k}, true);
            p.add(lp + ".tc.b", Shape{c}, true);
            add_bn(p, lp + ".bn", c);
        }
        p.add(sp + ".out.w", Shape{l, c}, true);
        p.add(sp + ".out.b", Shape{l}, true);
    }
    return p;
}

ParamStore init_params(const ModelConfig& cfg, int num_nodes, std::uint64_t seed) {
    ParamStore p = build_param_layout(cfg, num_nodes);
    Rng rng(mix64(seed, 0x6d6f64656cull));  // "model" stream
    for (auto& e : p.entries) {
        const auto dot = e.name.rfind('.');
        const std::string tail = dot == std::string::npos ? e.name : e.name.substr(dot + 1);
        if (tail != "w") continue;
        // graph-conv weights are [P x C_out x C_in]: each partition is its
        // own 1x1 transform, so only the last axis is fan-in
        const std::int64_t fi = e.name.find(".gc.w") != std::string::npos
                                    ? e.array.shape[2]
                                    : e.array.shape.numel() / e.array.shape[0];
        const real_t limit = static_cast<real_t>(std::sqrt(6.0 / static_cast<double>(fi)));
        for (auto& v : e.array.value) v = static_cast<real_t>(rng.uniform(-limit, limit));
    }
    return p;
}

std::int64_t count_params(const ModelConfig& cfg, int num_nodes) {
    return build_param_layout(cfg, num_nodes).num_tracked_scalars();
}

namespace {

DiffArray* maybe_mask(Tape& tape, DiffArray* h, const Mask* mask, bool batched) {
    return mask ? mask_zero(tape, *h, mask, batched) : h;
}

struct Bn {
    DiffArray *gamma, *beta, *mean, *var;
};

Bn bn_of(ParamStore& p, const std::string& prefix) {
    return {&p.get(prefix + ".gamma"), &p.get(prefix + ".beta"), &p.get(prefix + ".run_mean"),
            &p.get(prefix + ".run_var")};
}

}  // namespace

DiffArray* stgcn_block(Tape& tape, DiffArray& f, ParamStore& params, const std::string& prefix,
                       const PartitionedAdjacency& adj, int dilation, int kernel, Mode mode,
                       const Mask* mask, bool batched) {
    (void)kernel;
    DiffArray* g =
        graph_conv(tape, f, adj, params.get(prefix + ".gc.m"), params.get(prefix + ".gc.w"),
                   batched);
    Bn bn1 = bn_of(params, prefix + ".bn1");
    DiffArray* a = bn_relu(tape, *g, *bn1.gamma, *bn1.beta, *bn1.mean, *bn1.var, mode, mask,
                           batched);
    DiffArray* d = dilated_conv1d(tape, *a, params.get(prefix + ".tc.w"),
                                  params.get(prefix + ".tc.b"), dilation, true, batched);
    Bn bn2 = bn_of(params, prefix + ".bn2");
    DiffArray* r = bn_relu(tape, *d, *bn2.gamma, *bn2.beta, *bn2.mean, *bn2.var, mode, mask,
                           batched);
    return residual_add(tape, *r, f, mask, batched);
}

DiffArray* tcn_block(Tape& tape, DiffArray& f, ParamStore& params, const std::string& prefix,
                     int dilation, int kernel, Mode mode, const Mask* mask, bool batched) {
    (void)kernel;
    DiffArray* d = dilated_conv1d(tape, f, params.get(prefix + ".tc.w"),
                                  params.get(prefix + ".tc.b"), dilation, true, batched);
    Bn bn = bn_of(params, prefix + ".bn");
    DiffArray* r =
        bn_relu(tape, *d, *bn.gamma, *bn.beta, *bn.mean, *bn.var, mode, mask, batched);
    return residual_add(tape, *r, f, mask, batched);
}

DiffArray* generation_stage(Tape& tape, DiffArray& x, ParamStore& params, const ModelConfig& cfg,
                            const PartitionedAdjacency& adj, Mode mode, const Mask* mask,
                            bool batched) {
    const bool graph = variant_uses_graph(cfg.variant);
    const int rank = x.shape.rank();
    const int want_rank = batched ? 4 : 3;
    if (rank != want_rank)
        throw ValidationError("generation_stage: input must be " +
                              std::string(batched ? "[B x C_in x N x T]" : "[C_in x N x T]") +
                              ", got " + x.shape.str());
    const int n = batched ? x.shape[2] : x.shape[1];
    const int t = batched ? x.shape[3] : x.shape[2];
    const int cin = batched ? x.shape[1] : x.shape[0];
    if (cin != cfg.in_channels)
        throw ValidationError("generation_stage: input channel axis (" + std::to_string(cin) +
                              ") != config in_channels (" + std::to_string(cfg.in_channels) +
                              ")");
    if (graph && n != adj.num_nodes)
        throw ValidationError("generation_stage: input node axis (" + std::to_string(n) +
                              ") != adjacency nodes (" + std::to_string(adj.num_nodes) + ")");

    DiffArray* h = &x;
    if (!graph) {
        // collapse the node axis into channels: [.., C_in, N, T] -> [.., C_in*N, T]
        Shape flat = batched ? Shape{x.shape[0], cin * n, t} : Shape{cin * n, t};
        h = reshape_copy(tape, x, flat);
    }

    Bn in_bn = bn_of(params, "in_bn");
    h = batch_norm(tape, *h, *in_bn.gamma, *in_bn.beta, *in_bn.mean, *in_bn.var, mode, mask,
                   batched);
    h = pointwise_conv(tape, *h, params.get("stage0.in.w"), params.get("stage0.in.b"), batched);
    h = maybe_mask(tape, h, mask, batched);

    const auto dil = cfg.dilations();
    for (int i = 0; i < cfg.layers_per_stage; ++i) {
        const std::string lp = "stage0.l" + std::to_string(i);
        h = graph ? stgcn_block(tape, *h, params, lp, adj, dil[static_cast<std::size_t>(i)],
                                cfg.kernel, mode, mask, batched)
                  : tcn_block(tape, *h, params, lp, dil[static_cast<std::size_t>(i)], cfg.kernel,
                              mode, mask, batched);
    }
    if (graph) h = mean_pool_nodes(tape, *h, batched);
    h = pointwise_conv(tape, *h, params.get("stage0.out.w"), params.get("stage0.out.b"),
                       batched);
    return softmax_over_classes(tape, *h, batched);
}

DiffArray* refinement_stage(Tape& tape, DiffArray& p_prev, ParamStore& params,
                            const ModelConfig& cfg, int stage, Mode mode, const Mask* mask,
                            bool batched) {
    const int class_axis = batched ? 1 : 0;
    if (p_prev.shape.rank() != (batched ? 3 : 2))
        throw ValidationError("refinement_stage: expected " +
                              std::string(batched ? "[B x l x T]" : "[l x T]") + ", got " +
                              p_prev.shape.str());
    if (p_prev.shape[class_axis] != cfg.num_classes)
        throw ValidationError("refinement_stage: input class axis (" +
                              std::to_string(p_prev.shape[class_axis]) + ") != num_classes (" +
                              std::to_string(cfg.num_classes) + ")");
    const std::string sp = "stage" + std::to_string(stage);
    DiffArray* h = maybe_mask(tape, &p_prev, mask, batched);
    h = pointwise_conv(tape, *h, params.get(sp + ".in.w"), params.get(sp + ".in.b"), batched);
    h = maybe_mask(tape, h, mask, batched);
    const auto dil = cfg.dilations();
    for (int i = 0; i < cfg.layers_per_stage; ++i)
        h = tcn_block(tape, *h, params, sp + ".l" + std::to_string(i),
                      dil[static_cast<std::size_t>(i)], cfg.kernel, mode, mask, batched);
    h = pointwise_conv(tape, *h, params.get(sp + ".out.w"), params.get(sp + ".out.b"), batched);
    return softmax_over_classes(tape, *h, batched);
}

StageOutputs forward(Tape& tape, DiffArray& x, ParamStore& params, const ModelConfig& cfg,
                     const PartitionedAdjacency& adj, Mode mode, const Mask* mask,
                     bool batched) {
    cfg.validate();
    StageOutputs outs;
    outs.push_back(generation_stage(tape, x, params, cfg, adj, mode, mask, batched));
    for (int s = 1; s < cfg.num_stages; ++s)
        outs.push_back(refinement_stage(tape, *outs.back(), params, cfg, s, mode, mask, batched));
    return outs;
}

std::vector<int> predict_labels(const DiffArray& probs) {
    if (probs.shape.rank() != 2)
        throw ValidationError("predict_labels: expected [l x T], got " + probs.shape.str());
    const int l = probs.shape[0];
    const int t_len = probs.shape[1];
    std::vector<int> out(static_cast<std::size_t>(t_len));
    for (int t = 0; t < t_len; ++t) {
        int best = 0;
        for (int c = 1; c < l; ++c)
            if (probs.value[static_cast<std::size_t>(c) * t_len + t] >
                probs.value[static_cast<std::size_t>(best) * t_len + t])
                best = c;
        out[static_cast<std::size_t>(t)] = best;
    }
    return out;
}

}  // namespace fogseg
