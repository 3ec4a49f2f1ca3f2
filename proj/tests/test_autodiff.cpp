#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fogseg/array.hpp"
#include "fogseg/ops.hpp"
#include "fogseg/rng.hpp"
#include "support/gradcheck.hpp"

using namespace fogseg;
using fogseg::testing::fd_check_leaf;
using fogseg::testing::random_values;

TEST_CASE("tape: sum of squares gradient") {
    DiffArray x = DiffArray::from(Shape{2}, {1, 2}, true);
    Tape tape;
    DiffArray* loss = sum_all(tape, *mul(tape, x, x));
    CHECK(loss->value[0] == doctest::Approx(5.0));
    tape.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(2.0));
    CHECK(x.grad[1] == doctest::Approx(4.0));
}

TEST_CASE("tape: backward twice without re-forward is rejected") {
    DiffArray x = DiffArray::from(Shape{2}, {1, 2}, true);
    Tape tape;
    DiffArray* loss = sum_all(tape, *mul(tape, x, x));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ValidationError);
    tape.reset();
    DiffArray* loss2 = sum_all(tape, *mul(tape, x, x));
    CHECK_NOTHROW(tape.backward(loss2));
}

TEST_CASE("tape: non-scalar root is a usage error") {
    DiffArray x = DiffArray::from(Shape{2}, {1, 2}, true);
    Tape tape;
    DiffArray* y = mul(tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), ValidationError);
}

TEST_CASE("tape: untracked leaf gets no gradient") {
    DiffArray x = DiffArray::from(Shape{2}, {1, 2}, false);
    DiffArray w = DiffArray::from(Shape{2}, {3, 4}, true);
    Tape tape;
    DiffArray* loss = sum_all(tape, *mul(tape, x, w));
    tape.backward(loss);
    CHECK(!x.has_grad());
    CHECK(w.has_grad());
    CHECK(w.grad[0] == doctest::Approx(1.0));
}

TEST_CASE("tape: building ops after backward is rejected until reset") {
    DiffArray x = DiffArray::from(Shape{1}, {2}, true);
    Tape tape;
    tape.backward(mul(tape, x, x));
    CHECK_THROWS_AS(mul(tape, x, x), ValidationError);
}

TEST_CASE("pointwise_conv: identity and affine filters") {
    DiffArray x = DiffArray::from(Shape{1, 2}, {1, 2}, false);
    DiffArray w = DiffArray::from(Shape{1, 1}, {1}, false);
    DiffArray b = DiffArray::from(Shape{1}, {0}, false);
    Tape tape;
    DiffArray* out = pointwise_conv(tape, x, w, b);
    CHECK(out->value[0] == doctest::Approx(1));
    CHECK(out->value[1] == doctest::Approx(2));

    DiffArray w2 = DiffArray::from(Shape{1, 1}, {2}, false);
    DiffArray b2 = DiffArray::from(Shape{1}, {1}, false);
    DiffArray* out2 = pointwise_conv(tape, x, w2, b2);
    CHECK(out2->value[0] == doctest::Approx(3));
    CHECK(out2->value[1] == doctest::Approx(5));
}

TEST_CASE("pointwise_conv: shape errors name the offending axes") {
    DiffArray x = DiffArray::leaf(Shape{3, 5}, false);
    DiffArray w = DiffArray::leaf(Shape{2, 4}, false);
    DiffArray b = DiffArray::leaf(Shape{2}, false);
    Tape tape;
    CHECK_THROWS_WITH_AS(pointwise_conv(tape, x, w, b),
                         doctest::Contains("channel axis (3)"), ValidationError);
    DiffArray w3 = DiffArray::leaf(Shape{2, 3}, false);
    DiffArray b3 = DiffArray::leaf(Shape{3}, false);
    CHECK_THROWS_AS(pointwise_conv(tape, x, w3, b3), ValidationError);
}

TEST_CASE("pointwise_conv: gradients match finite differences") {
    Rng rng(101);
    for (int inst = 0; inst < 20; ++inst) {
        const int cin = rng.uniform_int(1, 4);
        const int cout = rng.uniform_int(1, 4);
        const int t = rng.uniform_int(2, 9);
        const bool with_nodes = rng.uniform01() < 0.5;
        const int n = with_nodes ? rng.uniform_int(1, 4) : 1;
        DiffArray x = DiffArray::from(with_nodes ? Shape{cin, n, t} : Shape{cin, t},
                                      random_values(static_cast<std::size_t>(cin * n * t), rng),
                                      true);
        DiffArray w = DiffArray::from(
            Shape{cout, cin}, random_values(static_cast<std::size_t>(cout * cin), rng), true);
        DiffArray b =
            DiffArray::from(Shape{cout}, random_values(static_cast<std::size_t>(cout), rng), true);
        const auto lw = random_values(static_cast<std::size_t>(cout * n * t), rng);

        auto fwd = [&] {
            Tape t2;
            t2.set_recording(false);
            return static_cast<double>(
                weighted_sum(t2, *pointwise_conv(t2, x, w, b), lw)->value[0]);
        };
        Tape tape;
        tape.backward(weighted_sum(tape, *pointwise_conv(tape, x, w, b), lw));
        for (DiffArray* leaf : {&x, &w, &b})
            CHECK(fd_check_leaf(*leaf, fwd).max_rel_err < 1e-6);
    }
}

TEST_CASE("dilated_conv1d: impulse reaches exactly {t-4, t, t+4} at dilation 4") {
    const int t_len = 20, t0 = 9;
    DiffArray x = DiffArray::leaf(Shape{1, t_len}, false);
    x.value[t0] = 1;
    DiffArray w = DiffArray::from(Shape{1, 1, 3}, {2, 3, 5}, false);
    DiffArray b = DiffArray::leaf(Shape{1}, false);
    Tape tape;
    DiffArray* out = dilated_conv1d(tape, x, w, b, 4, true);
    REQUIRE(out->shape == Shape{1, t_len});
    for (int t = 0; t < t_len; ++t) {
        if (t == t0 - 4)
            CHECK(out->value[static_cast<std::size_t>(t)] == doctest::Approx(5));  // future tap
        else if (t == t0)
            CHECK(out->value[static_cast<std::size_t>(t)] == doctest::Approx(3));
        else if (t == t0 + 4)
            CHECK(out->value[static_cast<std::size_t>(t)] == doctest::Approx(2));  // past tap
        else
            CHECK(out->value[static_cast<std::size_t>(t)] == doctest::Approx(0));
    }
}

TEST_CASE("dilated_conv1d: identity center tap") {
    Rng rng(7);
    DiffArray x = DiffArray::from(Shape{2, 11}, random_values(22, rng), false);
    DiffArray w = DiffArray::leaf(Shape{2, 2, 3}, false);
    // center tap of an identity kernel
    w.value[0 * 2 * 3 + 0 * 3 + 1] = 1;
    w.value[1 * 2 * 3 + 1 * 3 + 1] = 1;
    DiffArray b = DiffArray::leaf(Shape{2}, false);
    Tape tape;
    DiffArray* out = dilated_conv1d(tape, x, w, b, 5, true);
    for (std::size_t i = 0; i < x.value.size(); ++i) CHECK(out->value[i] == x.value[i]);
}

TEST_CASE("dilated_conv1d: output length equals input length for dilations up to 512") {
    DiffArray w = DiffArray::leaf(Shape{1, 1, 3}, false);
    DiffArray b = DiffArray::leaf(Shape{1}, false);
    for (int t_len : {1, 2, 37, 100}) {
        DiffArray x = DiffArray::leaf(Shape{1, t_len}, false);
        for (int d = 1; d <= 512; d *= 2) {
            Tape tape;
            DiffArray* out = dilated_conv1d(tape, x, w, b, d, true);
            CHECK(out->shape == Shape{1, t_len});
        }
    }
}

TEST_CASE("dilated_conv1d: even kernel with acausal padding is a configuration error") {
    DiffArray x = DiffArray::leaf(Shape{1, 8}, false);
    DiffArray w = DiffArray::leaf(Shape{1, 1, 2}, false);
    DiffArray b = DiffArray::leaf(Shape{1}, false);
    Tape tape;
    CHECK_THROWS_AS(dilated_conv1d(tape, x, w, b, 1, true), ValidationError);
    CHECK_NOTHROW(dilated_conv1d(tape, x, w, b, 1, false));  // fine causally
    CHECK_THROWS_AS(dilated_conv1d(tape, x, w, b, 0, true), ValidationError);
}

TEST_CASE("dilated_conv1d: causal mode sees only the past") {
    const int t_len = 16, t0 = 8;
    DiffArray x = DiffArray::leaf(Shape{1, t_len}, false);
    x.value[t0] = 1;
    DiffArray w = DiffArray::from(Shape{1, 1, 3}, {1, 1, 1}, false);
    DiffArray b = DiffArray::leaf(Shape{1}, false);
    Tape tape;
    DiffArray* out = dilated_conv1d(tape, x, w, b, 2, false);
    for (int t = 0; t < t_len; ++t) {
        const bool hit = t == t0 || t == t0 + 2 || t == t0 + 4;
        CHECK(out->value[static_cast<std::size_t>(t)] == doctest::Approx(hit ? 1 : 0));
    }
}

TEST_CASE("dilated_conv1d: gradients match finite differences") {
    Rng rng(202);
    for (int inst = 0; inst < 20; ++inst) {
        const int cin = rng.uniform_int(1, 3);
        const int cout = rng.uniform_int(1, 3);
        const int t = rng.uniform_int(3, 12);
        const int d = rng.uniform_int(1, 4);
        const bool with_nodes = rng.uniform01() < 0.5;
        const int n = with_nodes ? rng.uniform_int(1, 3) : 1;
        DiffArray x = DiffArray::from(with_nodes ? Shape{cin, n, t} : Shape{cin, t},
                                      random_values(static_cast<std::size_t>(cin * n * t), rng),
                                      true);
        DiffArray w = DiffArray::from(
            Shape{cout, cin, 3}, random_values(static_cast<std::size_t>(cout * cin * 3), rng),
            true);
        DiffArray b =
            DiffArray::from(Shape{cout}, random_values(static_cast<std::size_t>(cout), rng), true);
        const auto lw = random_values(static_cast<std::size_t>(cout * n * t), rng);

        auto fwd = [&] {
            Tape t2;
            t2.set_recording(false);
            return static_cast<double>(
                weighted_sum(t2, *dilated_conv1d(t2, x, w, b, d, true), lw)->value[0]);
        };
        Tape tape;
        tape.backward(weighted_sum(tape, *dilated_conv1d(tape, x, w, b, d, true), lw));
        for (DiffArray* leaf : {&x, &w, &b})
            CHECK(fd_check_leaf(*leaf, fwd).max_rel_err < 1e-6);
    }
}

namespace {

struct BnFixture {
    DiffArray gamma, beta, run_mean, run_var;
    BnFixture(int c, real_t g = 1, real_t be = 0)
        : gamma(DiffArray::leaf(Shape{c}, true)),
          beta(DiffArray::leaf(Shape{c}, true)),
          run_mean(DiffArray::leaf(Shape{c}, false)),
          run_var(DiffArray::leaf(Shape{c}, false)) {
        std::fill(gamma.value.begin(), gamma.value.end(), g);
        std::fill(beta.value.begin(), beta.value.end(), be);
        std::fill(run_var.value.begin(), run_var.value.end(), real_t{1});
    }
};

}  // namespace

TEST_CASE("batch_norm: normalized input is a fixed point") {
    // batch variance set to 1 - eps so normalization divides by exactly 1
    const int t_len = 8;
    const real_t c = static_cast<real_t>(std::sqrt(1.0 - 1e-5));
    DiffArray x = DiffArray::leaf(Shape{2, t_len}, false);
    for (int ch = 0; ch < 2; ++ch)
        for (int t = 0; t < t_len; ++t)
            x.value[static_cast<std::size_t>(ch * t_len + t)] = (t % 2 == 0 ? c : -c);
    BnFixture bn(2);
    Tape tape;
    DiffArray* out =
        batch_norm(tape, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var, Mode::train);
    for (std::size_t i = 0; i < x.value.size(); ++i)
        CHECK(std::abs(out->value[i] - x.value[i]) <= 1e-6);
}

TEST_CASE("batch_norm: constant channel collapses to beta") {
    DiffArray x = DiffArray::leaf(Shape{1, 6}, false);
    std::fill(x.value.begin(), x.value.end(), real_t{42});
    BnFixture bn(1, 1, static_cast<real_t>(0.7));
    Tape tape;
    DiffArray* out =
        batch_norm(tape, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var, Mode::train);
    for (real_t v : out->value) CHECK(v == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("batch_norm: running statistics feed eval mode") {
    Rng rng(33);
    DiffArray x = DiffArray::from(Shape{2, 50}, random_values(100, rng, -2, 3), false);
    BnFixture bn(2);
    Tape tape;
    batch_norm(tape, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var, Mode::train);
    // momentum 0.1 from fresh (0, 1) state
    CHECK(bn.run_mean.value[0] != 0);
    CHECK(bn.run_var.value[0] != 1);
    tape.reset();
    DiffArray* out =
        batch_norm(tape, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var, Mode::eval);
    const real_t expect0 =
        (x.value[0] - bn.run_mean.value[0]) /
        std::sqrt(bn.run_var.value[0] + static_cast<real_t>(1e-5));
    CHECK(out->value[0] == doctest::Approx(expect0));
}

TEST_CASE("batch_norm: all-masked input is a degenerate-statistics error") {
    DiffArray x = DiffArray::leaf(Shape{1, 4}, false);
    BnFixture bn(1);
    Mask mask;
    mask.batch = 1;
    mask.time = 4;
    mask.valid.assign(4, 0);
    Tape tape;
    CHECK_THROWS_WITH_AS(
        batch_norm(tape, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var, Mode::train, &mask),
        doctest::Contains("degenerate"), ValidationError);
    mask.valid[0] = 1;  // a single valid sample is still not enough
    CHECK_THROWS_AS(
        batch_norm(tape, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var, Mode::train, &mask),
        ValidationError);
}

TEST_CASE("batch_norm: gradients match finite differences") {
    Rng rng(404);
    for (int inst = 0; inst < 12; ++inst) {
        const int c = rng.uniform_int(1, 3);
        const int t = rng.uniform_int(3, 10);
        const bool batched = rng.uniform01() < 0.5;
        const int bcount = batched ? rng.uniform_int(1, 3) : 1;
        const Shape xs = batched ? Shape{bcount, c, t} : Shape{c, t};
        DiffArray x = DiffArray::from(xs, random_values(static_cast<std::size_t>(xs.numel()), rng,
                                                        -2, 2),
                                      true);
        BnFixture bn(c);
        for (auto& v : bn.gamma.value) v = static_cast<real_t>(rng.uniform(0.5, 1.5));
        for (auto& v : bn.beta.value) v = static_cast<real_t>(rng.uniform(-0.5, 0.5));
        Mask mask = Mask::full(bcount, t);
        const bool use_mask = rng.uniform01() < 0.5;
        if (use_mask)
            for (auto& v : mask.valid) v = rng.uniform01() < 0.25 ? 0 : 1;
        std::int64_t valid = 0;
        for (auto v : mask.valid) valid += v;
        if (valid < 2) {
            mask.valid[0] = mask.valid[1] = 1;
        }
        const Mode mode = rng.uniform01() < 0.3 ? Mode::eval : Mode::train;
        const auto lw = random_values(static_cast<std::size_t>(xs.numel()), rng);

        auto fwd = [&] {
            const auto rm = bn.run_mean.value;
            const auto rv = bn.run_var.value;
            Tape t2;
            t2.set_recording(false);
            const double out = static_cast<double>(
                weighted_sum(t2,
                             *batch_norm(t2, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var,
                                         mode, use_mask ? &mask : nullptr, batched),
                             lw)
                    ->value[0]);
            bn.run_mean.value = rm;  // keep the probe side-effect free
            bn.run_var.value = rv;
            return out;
        };
        Tape tape;
        tape.backward(weighted_sum(
            tape,
            *batch_norm(tape, x, bn.gamma, bn.beta, bn.run_mean, bn.run_var, mode,
                        use_mask ? &mask : nullptr, batched),
            lw));
        for (DiffArray* leaf : {&x, &bn.gamma, &bn.beta})
            CHECK(fd_check_leaf(*leaf, fwd).max_rel_err < 1e-5);
    }
}

TEST_CASE("bn_relu: composition matches the primitive ops") {
    Rng rng(55);
    DiffArray x = DiffArray::from(Shape{2, 7}, random_values(14, rng, -2, 2), true);
    BnFixture a(2), b(2);
    const auto lw = random_values(14, rng);

    Tape t1;
    DiffArray* fused = bn_relu(t1, x, a.gamma, a.beta, a.run_mean, a.run_var, Mode::train);
    Tape t2;
    DiffArray* split =
        relu(t2, *batch_norm(t2, x, b.gamma, b.beta, b.run_mean, b.run_var, Mode::train));
    for (std::size_t i = 0; i < fused->value.size(); ++i)
        CHECK(fused->value[i] == split->value[i]);
    CHECK(a.run_mean.value[0] == b.run_mean.value[0]);

    t1.backward(weighted_sum(t1, *fused, lw));
    const auto gx1 = x.grad;
    x.zero_grad();
    t2.backward(weighted_sum(t2, *split, lw));
    for (std::size_t i = 0; i < gx1.size(); ++i)
        CHECK(gx1[i] == doctest::Approx(x.grad[i]).epsilon(1e-12));
}

TEST_CASE("relu and softmax and mean_pool examples") {
    DiffArray x = DiffArray::from(Shape{3, 1}, {-1, 0, 2}, false);
    Tape tape;
    DiffArray* r = relu(tape, x);
    CHECK(r->value[0] == 0);
    CHECK(r->value[1] == 0);
    CHECK(r->value[2] == 2);

    DiffArray z = DiffArray::from(Shape{2, 1}, {0, 0}, false);
    DiffArray* sm = softmax_over_classes(tape, z);
    CHECK(sm->value[0] == doctest::Approx(0.5));
    CHECK(sm->value[1] == doctest::Approx(0.5));

    DiffArray pool_in = DiffArray::leaf(Shape{1, 9, 4}, false);
    std::fill(pool_in.value.begin(), pool_in.value.end(), real_t{3.25});
    DiffArray* pooled = mean_pool_nodes(tape, pool_in);
    REQUIRE(pooled->shape == Shape{1, 4});
    for (real_t v : pooled->value) CHECK(v == doctest::Approx(3.25));
}

TEST_CASE("softmax: strictly positive columns summing to one") {
    Rng rng(66);
    DiffArray x = DiffArray::from(Shape{4, 30}, random_values(120, rng, -30, 30), false);
    Tape tape;
    DiffArray* sm = softmax_over_classes(tape, x);
    for (int t = 0; t < 30; ++t) {
        real_t sum = 0;
        for (int c = 0; c < 4; ++c) {
            const real_t v = sm->value[static_cast<std::size_t>(c * 30 + t)];
            CHECK(v > 0);
            sum += v;
        }
        CHECK(std::abs(sum - 1) <= 1e-9);
    }
}

TEST_CASE("softmax/relu/pool/residual gradients match finite differences") {
    Rng rng(77);
    for (int inst = 0; inst < 10; ++inst) {
        const int c = rng.uniform_int(2, 4);
        const int n = rng.uniform_int(1, 4);
        const int t = rng.uniform_int(2, 6);
        DiffArray x = DiffArray::from(Shape{c, n, t},
                                      random_values(static_cast<std::size_t>(c * n * t), rng),
                                      true);
        const auto lw = random_values(static_cast<std::size_t>(c * t), rng);
        auto fwd = [&] {
            Tape t2;
            t2.set_recording(false);
            DiffArray* h = relu(t2, x);
            h = mean_pool_nodes(t2, *h);
            h = softmax_over_classes(t2, *h);
            return static_cast<double>(weighted_sum(t2, *h, lw)->value[0]);
        };
        Tape tape;
        DiffArray* h = relu(tape, x);
        h = mean_pool_nodes(tape, *h);
        h = softmax_over_classes(tape, *h);
        tape.backward(weighted_sum(tape, *h, lw));
        CHECK(fd_check_leaf(x, fwd).max_rel_err < 1e-5);
    }
}

TEST_CASE("forward determinism: identical runs produce identical bits") {
    Rng rng(88);
    DiffArray x = DiffArray::from(Shape{3, 2, 16}, random_values(96, rng), false);
    DiffArray w = DiffArray::from(Shape{3, 3, 3}, random_values(27, rng), false);
    DiffArray b = DiffArray::from(Shape{3}, random_values(3, rng), false);
    auto run = [&] {
        Tape tape;
        tape.set_recording(false);
        DiffArray* out = dilated_conv1d(tape, x, w, b, 2, true);
        DiffArray* sm = softmax_over_classes(tape, *mean_pool_nodes(tape, *out));
        return sm->value;
    };
    const auto a = run();
    const auto bvals = run();
    REQUIRE(a.size() == bvals.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == bvals[i]);
}

TEST_CASE("mask_zero and residual_add honor the validity mask") {
    Rng rng(99);
    DiffArray x = DiffArray::from(Shape{1, 2, 4}, random_values(8, rng), true);
    DiffArray y = DiffArray::from(Shape{1, 2, 4}, random_values(8, rng), true);
    Mask mask = Mask::full(1, 4);
    mask.valid[3] = 0;
    Tape tape;
    DiffArray* out = residual_add(tape, x, y, &mask, true);
    for (int c = 0; c < 2; ++c) {
        CHECK(out->value[static_cast<std::size_t>(c * 4 + 3)] == 0);
        for (int t = 0; t < 3; ++t)
            CHECK(out->value[static_cast<std::size_t>(c * 4 + t)] ==
                  doctest::Approx(x.value[static_cast<std::size_t>(c * 4 + t)] +
                                  y.value[static_cast<std::size_t>(c * 4 + t)]));
    }
    tape.backward(sum_all(tape, *out));
    CHECK(x.grad[3] == 0);
    CHECK(x.grad[0] == doctest::Approx(1));
}
