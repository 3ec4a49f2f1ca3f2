#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fogseg/rng.hpp"
#include "fogseg/skeleton.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fogseg;
using fogseg::testing::fd_check_leaf;
using fogseg::testing::random_values;

namespace {

int degree(const SkeletonGraph& g, const std::string& name) {
    const int idx = g.node_index(name);
    int d = 0;
    for (auto [a, b] : g.edges) d += (a == idx) + (b == idx);
    return d;
}

}  // namespace

TEST_CASE("default graph: nine connected markers with the expected chains") {
    const SkeletonGraph g = build_default_graph();
    CHECK(g.num_nodes() == 9);
    CHECK_NOTHROW(g.hops_from_center());  // connected
    CHECK(g.nodes[static_cast<std::size_t>(g.center)] == "SACR");
    CHECK(degree(g, "SACR") == 2);
    CHECK(degree(g, "LTOE") == 1);
    CHECK(degree(g, "RTOE") == 1);
    CHECK(degree(g, "LASI") == 3);
}

TEST_CASE("graph json round trip and validation") {
    const SkeletonGraph g = build_default_graph();
    const SkeletonGraph g2 = graph_from_json(graph_to_json(g));
    CHECK(g2.nodes == g.nodes);
    CHECK(g2.edges == g.edges);
    CHECK(g2.center == g.center);
    CHECK(graph_hash(g) == graph_hash(g2));

    CHECK_THROWS_AS(graph_from_json("{\"nodes\":[\"A\"],\"edges\":[],\"center\":\"B\"}"),
                    ValidationError);
    CHECK_THROWS_AS(
        graph_from_json("{\"nodes\":[\"A\",\"B\"],\"edges\":[],\"center\":\"A\"}"),
        ValidationError);  // disconnected
    CHECK_THROWS_AS(
        graph_from_json(
            "{\"nodes\":[\"A\",\"B\"],\"edges\":[[\"A\",\"A\"]],\"center\":\"A\"}"),
        ValidationError);  // self-loop
}

TEST_CASE("partition: root partition is the identity") {
    const auto adj = partition(build_default_graph());
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) CHECK(adj.at(0, i, j) == (i == j ? 1 : 0));
}

TEST_CASE("partition: the three partitions tile A+I exactly") {
    const SkeletonGraph g = build_default_graph();
    const auto adj = partition(g);
    std::vector<int> dense(81, 0);
    for (auto [a, b] : g.edges) {
        dense[static_cast<std::size_t>(a) * 9 + b] = 1;
        dense[static_cast<std::size_t>(b) * 9 + a] = 1;
    }
    for (int i = 0; i < 9; ++i) dense[static_cast<std::size_t>(i) * 9 + i] = 1;
    int nonzeros = 0;
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) {
            const real_t total = adj.at(0, i, j) + adj.at(1, i, j) + adj.at(2, i, j);
            CHECK(total == dense[static_cast<std::size_t>(i) * 9 + j]);  // exactly-one cover
            nonzeros += total != 0;
        }
    CHECK(nonzeros == 9 + 2 * static_cast<int>(g.edges.size()));
}

TEST_CASE("partition: 3-node path with center at one end") {
    SkeletonGraph g;
    g.nodes = {"A", "B", "C"};
    g.edges = {{0, 1}, {1, 2}};
    g.center = 0;
    const auto adj = partition(g);
    // B's neighbor toward the center (A) is centripetal, away (C) centrifugal
    CHECK(adj.at(1, 1, 0) == 1);
    CHECK(adj.at(2, 1, 2) == 1);
    CHECK(adj.at(1, 2, 1) == 1);  // C's only neighbor points toward the center
    CHECK(adj.at(2, 0, 1) == 1);  // A's neighbor leads away
}

TEST_CASE("partition: equal-hop ties go centripetal") {
    // triangle: A (center), B and C adjacent to each other at equal hop 1
    SkeletonGraph g;
    g.nodes = {"A", "B", "C"};
    g.edges = {{0, 1}, {0, 2}, {1, 2}};
    g.center = 0;
    const auto adj = partition(g);
    CHECK(adj.at(1, 1, 2) == 1);
    CHECK(adj.at(1, 2, 1) == 1);
    CHECK(adj.at(2, 1, 2) == 0);
}

TEST_CASE("partition: disconnected graph is rejected") {
    SkeletonGraph g;
    g.nodes = {"A", "B", "C"};
    g.edges = {{0, 1}};
    g.center = 0;
    CHECK_THROWS_AS(partition(g), ValidationError);
}

TEST_CASE("partition completeness holds on random trees with extra edges") {
    Rng rng(4242);
    for (int inst = 0; inst < 25; ++inst) {
        const int n = rng.uniform_int(2, 10);
        SkeletonGraph g;
        for (int i = 0; i < n; ++i) g.nodes.push_back("n" + std::to_string(i));
        for (int i = 1; i < n; ++i) g.edges.emplace_back(rng.uniform_int(0, i - 1), i);
        for (int extra = rng.uniform_int(0, 2); extra > 0; --extra) {
            const int a = rng.uniform_int(0, n - 1);
            const int b = rng.uniform_int(0, n - 1);
            bool dup = a == b;
            for (auto [x, y] : g.edges)
                dup |= (x == a && y == b) || (x == b && y == a);
            if (!dup) g.edges.emplace_back(a, b);
        }
        g.center = rng.uniform_int(0, n - 1);
        const auto adj = partition(g);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                int expected = i == j;
                for (auto [x, y] : g.edges)
                    expected |= (x == i && y == j) || (x == j && y == i);
                const real_t total = adj.at(0, i, j) + adj.at(1, i, j) + adj.at(2, i, j);
                CHECK(total == expected);
            }
    }
}

TEST_CASE("graph_conv: root-only adjacency with unit weights is the identity") {
    // single-node graph is edgeless yet connected
    SkeletonGraph g;
    g.nodes = {"solo"};
    g.center = 0;
    const auto adj = partition(g);
    DiffArray f = DiffArray::from(Shape{2, 1, 5}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, false);
    DiffArray m = make_attention_mask(1);
    DiffArray w = DiffArray::leaf(Shape{kNumPartitions, 2, 2}, false);
    for (int p = 0; p < kNumPartitions; ++p)
        for (int c = 0; c < 2; ++c) w.value[static_cast<std::size_t>((p * 2 + c) * 2 + c)] = 1;
    Tape tape;
    DiffArray* out = graph_conv(tape, f, adj, m, w);
    for (std::size_t i = 0; i < f.value.size(); ++i) CHECK(out->value[i] == f.value[i]);
}

TEST_CASE("graph_conv: multi-node root-only adjacency is the identity") {
    PartitionedAdjacency adj;
    adj.num_nodes = 3;
    adj.a.assign(static_cast<std::size_t>(kNumPartitions) * 9, 0);
    adj.d_inv.assign(static_cast<std::size_t>(kNumPartitions) * 3, 0);
    for (int i = 0; i < 3; ++i) {
        adj.a[static_cast<std::size_t>(i) * 3 + i] = 1;  // partition 0 only
        adj.d_inv[static_cast<std::size_t>(i)] = 1;
    }
    Rng rng(11);
    DiffArray f = DiffArray::from(Shape{2, 3, 4}, random_values(24, rng), false);
    DiffArray m = make_attention_mask(3);
    DiffArray w = DiffArray::leaf(Shape{kNumPartitions, 2, 2}, false);
    for (int p = 0; p < kNumPartitions; ++p)
        for (int c = 0; c < 2; ++c) w.value[static_cast<std::size_t>((p * 2 + c) * 2 + c)] = 1;
    Tape tape;
    DiffArray* out = graph_conv(tape, f, adj, m, w);
    for (std::size_t i = 0; i < f.value.size(); ++i)
        CHECK(out->value[i] == doctest::Approx(f.value[i]).epsilon(1e-12));
}

TEST_CASE("graph_conv: zero attention mask annihilates the output") {
    const auto adj = partition(build_default_graph());
    Rng rng(12);
    DiffArray f = DiffArray::from(Shape{2, 9, 3}, random_values(54, rng), false);
    DiffArray m = DiffArray::leaf(Shape{kNumPartitions, 9, 9}, false);  // zeros
    DiffArray w =
        DiffArray::from(Shape{kNumPartitions, 2, 2}, random_values(12, rng), false);
    Tape tape;
    DiffArray* out = graph_conv(tape, f, adj, m, w);
    for (real_t v : out->value) CHECK(v == 0);
}

TEST_CASE("graph_conv: matches the dense contraction oracle") {
    Rng rng(13);
    for (int inst = 0; inst < 10; ++inst) {
        SkeletonGraph g;
        g.nodes = {"a", "b", "c"};
        g.edges = {{0, 1}, {1, 2}};
        g.center = rng.uniform_int(0, 2);
        const auto adj = partition(g);
        const int cin = rng.uniform_int(1, 3);
        const int cout = rng.uniform_int(1, 3);
        const int t = rng.uniform_int(1, 5);
        DiffArray f = DiffArray::from(Shape{cin, 3, t},
                                      random_values(static_cast<std::size_t>(cin * 3 * t), rng),
                                      false);
        DiffArray m = DiffArray::from(Shape{kNumPartitions, 3, 3},
                                      random_values(kNumPartitions * 9, rng), false);
        DiffArray w = DiffArray::from(
            Shape{kNumPartitions, cout, cin},
            random_values(static_cast<std::size_t>(kNumPartitions * cout * cin), rng), false);
        Tape tape;
        DiffArray* out = graph_conv(tape, f, adj, m, w);
        const auto expect = fogseg::testing::graph_conv_reference(
            f.value, cin, 3, t, adj.a, adj.d_inv, m.value, w.value, kNumPartitions, cout);
        REQUIRE(out->value.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(out->value[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("graph_conv: gradients match finite differences") {
    Rng rng(14);
    for (int inst = 0; inst < 10; ++inst) {
        SkeletonGraph g;
        g.nodes = {"a", "b", "c", "d"};
        g.edges = {{0, 1}, {1, 2}, {1, 3}};
        g.center = 1;
        const auto adj = partition(g);
        const int c = rng.uniform_int(1, 3);
        const int t = rng.uniform_int(2, 5);
        const bool batched = rng.uniform01() < 0.5;
        const int bn = batched ? 2 : 1;
        const Shape fs = batched ? Shape{bn, c, 4, t} : Shape{c, 4, t};
        DiffArray f = DiffArray::from(
            fs, random_values(static_cast<std::size_t>(fs.numel()), rng), true);
        DiffArray m = DiffArray::from(Shape{kNumPartitions, 4, 4},
                                      random_values(kNumPartitions * 16, rng), true);
        DiffArray w = DiffArray::from(
            Shape{kNumPartitions, c, c},
            random_values(static_cast<std::size_t>(kNumPartitions * c * c), rng), true);
        const auto lw = random_values(static_cast<std::size_t>(fs.numel()), rng);
        auto fwd = [&] {
            Tape t2;
            t2.set_recording(false);
            return static_cast<double>(
                weighted_sum(t2, *graph_conv(t2, f, adj, m, w, batched), lw)->value[0]);
        };
        Tape tape;
        tape.backward(weighted_sum(tape, *graph_conv(tape, f, adj, m, w, batched), lw));
        for (DiffArray* leaf : {&f, &m, &w}) CHECK(fd_check_leaf(*leaf, fwd).max_rel_err < 1e-5);
    }
}

TEST_CASE("graph_conv: partition-count mismatch is rejected") {
    const auto adj = partition(build_default_graph());
    DiffArray f = DiffArray::leaf(Shape{2, 9, 3}, false);
    DiffArray m = make_attention_mask(9);
    DiffArray w_bad = DiffArray::leaf(Shape{2, 2, 2}, false);
    Tape tape;
    CHECK_THROWS_AS(graph_conv(tape, f, adj, m, w_bad), ValidationError);
    DiffArray f_bad = DiffArray::leaf(Shape{2, 5, 3}, false);
    DiffArray w = DiffArray::leaf(Shape{kNumPartitions, 2, 2}, false);
    CHECK_THROWS_WITH_AS(graph_conv(tape, f_bad, adj, m, w), doctest::Contains("node axis"),
                         ValidationError);
}
