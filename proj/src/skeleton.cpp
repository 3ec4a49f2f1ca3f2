#include "fogseg/skeleton.hpp"

#include <json.hpp>

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

#include "internal.hpp"

namespace fogseg {

using detail::FeatDims;
using detail::gemm;

int SkeletonGraph::node_index(const std::string& name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<std::vector<int>> SkeletonGraph::neighbors() const {
    std::vector<std::vector<int>> adj(nodes.size());
    for (auto [i, j] : edges) {
        adj[static_cast<std::size_t>(i)].push_back(j);
        adj[static_cast<std::size_t>(j)].push_back(i);
    }
    return adj;
}

std::vector<int> SkeletonGraph::hops_from_center() const {
    const int n = num_nodes();
    if (center < 0 || center >= n)
        throw ValidationError("skeleton: center index " + std::to_string(center) +
                              " out of range for " + std::to_string(n) + " nodes");
    std::vector<int> dist(static_cast<std::size_t>(n), -1);
    auto adj = neighbors();
    std::deque<int> q{center};
    dist[static_cast<std::size_t>(center)] = 0;
    while (!q.empty()) {
        const int u = q.front();
        q.pop_front();
        for (int v : adj[static_cast<std::size_t>(u)])
            if (dist[static_cast<std::size_t>(v)] < 0) {
                dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
                q.push_back(v);
            }
    }
    for (int i = 0; i < n; ++i)
        if (dist[static_cast<std::size_t>(i)] < 0)
            throw ValidationError("skeleton: graph is disconnected, node '" +
                                  nodes[static_cast<std::size_t>(i)] +
                                  "' unreachable from center");
    return dist;
}

SkeletonGraph build_default_graph() {
    SkeletonGraph g;
    g.nodes = {"LASI", "RASI", "SACR", "LKNE", "RKNE", "LANK", "RANK", "LTOE", "RTOE"};
    auto e = [&](const char* a, const char* b) {
        g.edges.emplace_back(g.node_index(a), g.node_index(b));
    };
    e("LASI", "RASI");
    e("LASI", "SACR");
    e("RASI", "SACR");
    e("LASI", "LKNE");
    e("LKNE", "LANK");
    e("LANK", "LTOE");
    e("RASI", "RKNE");
    e("RKNE", "RANK");
    e("RANK", "RTOE");
    g.center = g.node_index("SACR");
    return g;
}

std::string graph_to_json(const SkeletonGraph& g) {
    nlohmann::json j;
    j["nodes"] = g.nodes;
    auto& edges = j["edges"] = nlohmann::json::array();
    for (auto [a, b] : g.edges)
        edges.push_back({g.nodes[static_cast<std::size_t>(a)],
                         g.nodes[static_cast<std::size_t>(b)]});
    j["center"] = g.nodes[static_cast<std::size_t>(g.center)];
    return j.dump(2);
}

SkeletonGraph graph_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("graph json: ") + e.what());
    }
    SkeletonGraph g;
    try {
        g.nodes = j.at("nodes").get<std::vector<std::string>>();
        for (const auto& e : j.at("edges")) {
            const int a = g.node_index(e.at(0).get<std::string>());
            const int b = g.node_index(e.at(1).get<std::string>());
            if (a < 0 || b < 0)
                throw ValidationError("graph json: edge references unknown node " + e.dump());
            if (a == b)
                throw ValidationError("graph json: self-loop on node '" +
                                      g.nodes[static_cast<std::size_t>(a)] + "'");
            g.edges.emplace_back(a, b);
        }
        g.center = g.node_index(j.at("center").get<std::string>());
        if (g.center < 0)
            throw ValidationError("graph json: unknown center node " +
                                  j.at("center").dump());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("graph json: ") + e.what());
    }
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        for (std::size_t k = i + 1; k < g.nodes.size(); ++k)
            if (g.nodes[i] == g.nodes[k])
                throw ValidationError("graph json: duplicate node name '" + g.nodes[i] + "'");
    g.hops_from_center();  // connectivity check
    return g;
}

SkeletonGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open graph file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return graph_from_json(ss.str());
}

std::uint64_t graph_hash(const SkeletonGraph& g) {
    const std::string s = graph_to_json(g);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

PartitionedAdjacency partition(const SkeletonGraph& g) {
    const int n = g.num_nodes();
    const std::vector<int> hop = g.hops_from_center();  // throws if disconnected

    PartitionedAdjacency adj;
    adj.num_nodes = n;
    adj.a.assign(static_cast<std::size_t>(kNumPartitions) * n * n, 0);
    adj.d_inv.assign(static_cast<std::size_t>(kNumPartitions) * n, 0);

    auto set = [&](int p, int i, int j) {
        adj.a[(static_cast<std::size_t>(p) * n + i) * n + j] = 1;
    };
    for (int i = 0; i < n; ++i) set(0, i, i);
    for (auto [i, j] : g.edges) {
        if (i == j) throw ValidationError("partition: self-loop in edge list");
        auto classify = [&](int from, int to) {
            // neighbor `to` of node `from`; ties go centripetal
            return hop[static_cast<std::size_t>(to)] <= hop[static_cast<std::size_t>(from)] ? 1
                                                                                            : 2;
        };
        set(classify(i, j), i, j);
        set(classify(j, i), j, i);
    }
    for (int p = 0; p < kNumPartitions; ++p)
        for (int i = 0; i < n; ++i) {
            real_t deg = 0;
            for (int j = 0; j < n; ++j) deg += adj.at(p, i, j);
            adj.d_inv[static_cast<std::size_t>(p) * n + i] = deg > 0 ? real_t{1} / deg : 0;
        }
    return adj;
}

DiffArray make_attention_mask(int num_nodes) {
    DiffArray m = DiffArray::leaf(Shape{kNumPartitions, num_nodes, num_nodes}, true);
    std::fill(m.value.begin(), m.value.end(), real_t{1});
    return m;
}

DiffArray* graph_conv(Tape& tape, DiffArray& f, const PartitionedAdjacency& adj, DiffArray& m,
                      DiffArray& w, bool batched) {
    const FeatDims d = detail::feat_dims(f, batched, "graph_conv");
    const int n = adj.num_nodes;
    if (d.rows != n)
        throw ValidationError("graph_conv: feature node axis (" + std::to_string(d.rows) +
                              ") != adjacency nodes (" + std::to_string(n) + ")");
    if (w.shape.rank() != 3 || w.shape[0] != kNumPartitions)
        throw ValidationError("graph_conv: weights must be [" + std::to_string(kNumPartitions) +
                              " x C_out x C_in], got " + w.shape.str());
    if (m.shape != Shape{kNumPartitions, n, n})
        throw ValidationError("graph_conv: attention mask " + m.shape.str() +
                              " does not match partition stack [" +
                              std::to_string(kNumPartitions) + " x " + std::to_string(n) + " x " +
                              std::to_string(n) + "]");
    const int c_out = w.shape[1];
    const int c_in = w.shape[2];
    if (c_in != d.channels)
        throw ValidationError("graph_conv: feature channel axis (" + std::to_string(d.channels) +
                              ") != weight input channels (" + std::to_string(c_in) + ")");

    const int T = d.time;
    const std::int64_t in_bs = d.per_batch();
    const std::int64_t out_bs = static_cast<std::int64_t>(c_out) * n * T;
    const std::int64_t nt = static_cast<std::int64_t>(n) * T;

    Shape out_shape = batched ? Shape{d.batch, c_out, n, T} : Shape{c_out, n, T};
    const bool track = f.tracked || m.tracked || w.tracked;
    DiffArray* out = tape.alloc(out_shape, track);

    // ahat_p = d_inv_p * (a_p ⊙ mask_p), rebuilt cheaply on demand
    auto build_ahat = [&adj, &m, n](int p, std::vector<real_t>& ahat) {
        ahat.resize(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i) {
            const real_t di = adj.d_inv[static_cast<std::size_t>(p) * n + i];
            for (int j = 0; j < n; ++j)
                ahat[static_cast<std::size_t>(i) * n + j] =
                    di * adj.at(p, i, j) *
                    m.value[(static_cast<std::size_t>(p) * n + i) * n + j];
        }
    };

    std::vector<real_t> ahat, y(static_cast<std::size_t>(d.batch) * c_out * nt);
    for (int p = 0; p < kNumPartitions; ++p) {
        build_ahat(p, ahat);
        const real_t* wp = w.value.data() + static_cast<std::size_t>(p) * c_out * c_in;
        for (int bi = 0; bi < d.batch; ++bi) {
            // y = w_p f   (channel mix)
            gemm(false, false, c_out, static_cast<int>(nt), c_in, real_t{1}, wp, c_in,
                 f.value.data() + bi * in_bs, static_cast<int>(nt), real_t{0},
                 y.data() + bi * c_out * nt, static_cast<int>(nt));
            // out += ahat y   (node mix per channel)
            for (int c = 0; c < c_out; ++c)
                gemm(false, false, n, T, n, real_t{1}, ahat.data(), n,
                     y.data() + bi * c_out * nt + static_cast<std::int64_t>(c) * nt, T,
                     p == 0 ? real_t{0} : real_t{1},
                     out->value.data() + bi * out_bs + static_cast<std::int64_t>(c) * nt, T);
        }
    }

    tape.record(out, [out, &f, &m, &w, &adj, d, n, T, c_out, c_in, in_bs, out_bs, nt,
                      build_ahat] {
        real_t* gf = grad_of(f);
        real_t* gm = grad_of(m);
        real_t* gw = grad_of(w);
        if (!gf && !gm && !gw) return;

        std::vector<real_t> ahat, y(static_cast<std::size_t>(d.batch) * c_out * nt);
        std::vector<real_t> dy(y.size()), dahat(static_cast<std::size_t>(n) * n);
        for (int p = 0; p < kNumPartitions; ++p) {
            build_ahat(p, ahat);
            const real_t* wp = w.value.data() + static_cast<std::size_t>(p) * c_out * c_in;
            const bool need_y = gm != nullptr;
            std::fill(dahat.begin(), dahat.end(), real_t{0});
            for (int bi = 0; bi < d.batch; ++bi) {
                if (need_y)
                    gemm(false, false, c_out, static_cast<int>(nt), c_in, real_t{1}, wp, c_in,
                         f.value.data() + bi * in_bs, static_cast<int>(nt), real_t{0},
                         y.data() + bi * c_out * nt, static_cast<int>(nt));
                for (int c = 0; c < c_out; ++c) {
                    const real_t* go =
                        out->grad.data() + bi * out_bs + static_cast<std::int64_t>(c) * nt;
                    if (need_y)
                        gemm(false, true, n, n, T, real_t{1}, go, T,
                             y.data() + bi * c_out * nt + static_cast<std::int64_t>(c) * nt, T,
                             real_t{1}, dahat.data(), n);
                    // dy = ahat^T dout
                    gemm(true, false, n, T, n, real_t{1}, ahat.data(), n, go, T, real_t{0},
                         dy.data() + bi * c_out * nt + static_cast<std::int64_t>(c) * nt, T);
                }
                if (gw)
                    gemm(false, true, c_out, c_in, static_cast<int>(nt), real_t{1},
                         dy.data() + bi * c_out * nt, static_cast<int>(nt),
                         f.value.data() + bi * in_bs, static_cast<int>(nt), real_t{1},
                         gw + static_cast<std::size_t>(p) * c_out * c_in, c_in);
                if (gf)
                    gemm(true, false, c_in, static_cast<int>(nt), c_out, real_t{1}, wp, c_in,
                         dy.data() + bi * c_out * nt, static_cast<int>(nt), real_t{1},
                         gf + bi * in_bs, static_cast<int>(nt));
            }
            if (gm)
                for (int i = 0; i < n; ++i) {
                    const real_t di = adj.d_inv[static_cast<std::size_t>(p) * n + i];
                    for (int j = 0; j < n; ++j)
                        gm[(static_cast<std::size_t>(p) * n + i) * n + j] +=
                            dahat[static_cast<std::size_t>(i) * n + j] * di * adj.at(p, i, j);
                }
        }
    });
    return out;
}

}  // namespace fogseg
