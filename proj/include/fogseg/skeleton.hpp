#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fogseg/array.hpp"
#include "fogseg/ops.hpp"

namespace fogseg {

// Marker graph: node names, undirected edges, and the node the spatial
// partitioning measures hop distances against.
struct SkeletonGraph {
    std::vector<std::string> nodes;
    std::vector<std::pair<int, int>> edges;
    int center = 0;

    int num_nodes() const { return static_cast<int>(nodes.size()); }
    int node_index(const std::string& name) const;  // -1 if absent
    std::vector<std::vector<int>> neighbors() const;
    // BFS hop distance from the center; throws on a disconnected graph.
    std::vector<int> hops_from_center() const;
};

// Nine-marker lower-limb graph: mutually connected pelvis triad
// (LASI, RASI, SACR) with SACR as center, plus the two leg chains
// ASI - knee - ankle - toe.
SkeletonGraph build_default_graph();

std::string graph_to_json(const SkeletonGraph& g);
SkeletonGraph graph_from_json(const std::string& text);
SkeletonGraph load_graph(const std::string& path);

// FNV-1a over the canonical JSON form; checkpoint integrity tag.
std::uint64_t graph_hash(const SkeletonGraph& g);

inline constexpr int kNumPartitions = 3;  // root, centripetal, centrifugal

// The three binary adjacency partitions plus per-partition inverse row
// degrees. partition p of node i holds neighbor j when:
//   p=0 (root):        j == i
//   p=1 (centripetal): hop(j) <  hop(i), or the tie hop(j) == hop(i)
//   p=2 (centrifugal): hop(j) >  hop(i)
struct PartitionedAdjacency {
    int num_nodes = 0;
    std::vector<real_t> a;      // [P x N x N], entries 0/1
    std::vector<real_t> d_inv;  // [P x N], zero where a row is empty

    real_t at(int p, int i, int j) const {
        return a[(static_cast<std::size_t>(p) * num_nodes + i) * num_nodes + j];
    }
};

PartitionedAdjacency partition(const SkeletonGraph& g);

// All-ones [P x N x N] attention mask, the learnable element of Eq.-style
// graph convolution; lives among the model parameters.
DiffArray make_attention_mask(int num_nodes);

// f_gcn[b,c,n,t] = sum_p sum_m dinv_p[n] a_p[n,m] mask_p[n,m] (w_p f)[b,c,m,t]
//   f: [C x N x T] or [B x C x N x T]; m: [P x N x N]; w: [P x C_out x C_in]
DiffArray* graph_conv(Tape& tape, DiffArray& f, const PartitionedAdjacency& adj, DiffArray& m,
                      DiffArray& w, bool batched = false);

}  // namespace fogseg
