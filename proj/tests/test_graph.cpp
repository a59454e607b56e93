#include <doctest.h>

#include <cmath>
#include <limits>

#include "ckd/graph.hpp"
#include "ckd/networks.hpp"

using namespace ckd;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

ScalarLoss sum_loss(int node) {
    ScalarLoss loss;
    loss.value = [node](const Evaluation& ev) { return ev.value(node).sum(); };
    loss.output_grads = [node](const Evaluation& ev) {
        std::map<int, Tensor> seeds;
        seeds.emplace(node, Tensor::full(ev.value(node).shape(), 1.0));
        return seeds;
    };
    return loss;
}

} // namespace

TEST_CASE("backward: single relu node at x=2 with seed 1 gives input grad 1") {
    ComputeGraph g;
    int x = g.add_input("x");
    int r = g.add_relu("r", x);
    g.mark_output(r);
    ModelParameters params;
    Evaluation ev = forward(g, params, {{"x", Tensor({1}, {2.0})}}, false);
    GradientMap gm = backward(g, params, ev, {{r, Tensor({1}, {1.0})}});
    CHECK(gm.inputs.at("x")[0] == 1.0);
}

TEST_CASE("backward requires a cached forward pass") {
    ComputeGraph g;
    int x = g.add_input("x");
    int r = g.add_relu("r", x);
    g.mark_output(r);
    ModelParameters params;
    Evaluation ev; // never evaluated
    CHECK_THROWS_AS(backward(g, params, ev, {{r, Tensor({1}, {1.0})}}), std::logic_error);
}

TEST_CASE("zero-initialized residual block is a pure skip path") {
    ResidualBlockSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.stride = 1;
    spec.has_downsample = false;

    // Zero convs, identity batchnorm in eval mode with unit running stats.
    ModelParameters params;
    params.add("rb.conv1.kernel", Tensor({2, 2, 3, 3}));
    params.add("rb.bn1.gamma", Tensor::full({2}, 1.0));
    params.add("rb.bn1.beta", Tensor({2}));
    params.add("rb.bn1.running_mean", Tensor({2}), false);
    params.add("rb.bn1.running_var", Tensor::full({2}, 1.0), false);
    params.add("rb.conv2.kernel", Tensor({2, 2, 3, 3}));
    params.add("rb.bn2.gamma", Tensor::full({2}, 1.0));
    params.add("rb.bn2.beta", Tensor({2}));
    params.add("rb.bn2.running_mean", Tensor({2}), false);
    params.add("rb.bn2.running_var", Tensor::full({2}, 1.0), false);

    Rng rng(31);
    Tensor x = random_tensor({2, 4, 4}, rng, 0.1, 1.0); // positive: relu passes everything
    Tensor out = residual_block_forward(x, spec, params, "rb", /*train=*/false);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]));
}

TEST_CASE("residual skip passes the gradient unchanged through zero-initialized blocks") {
    // Eight chained zero-conv blocks: the input gradient must equal the seed
    // exactly (identity skip, positive activations).
    ComputeGraph g;
    std::vector<ParamSpec> specs;
    int n = g.add_input("x");
    ModelParameters params;
    for (int b = 0; b < 8; ++b) {
        const std::string p = "rb" + std::to_string(b);
        params.add(p + ".conv1.kernel", Tensor({2, 2, 3, 3}));
        params.add(p + ".bn1.gamma", Tensor::full({2}, 1.0));
        params.add(p + ".bn1.beta", Tensor({2}));
        params.add(p + ".bn1.running_mean", Tensor({2}), false);
        params.add(p + ".bn1.running_var", Tensor::full({2}, 1.0), false);
        params.add(p + ".conv2.kernel", Tensor({2, 2, 3, 3}));
        params.add(p + ".bn2.gamma", Tensor::full({2}, 1.0));
        params.add(p + ".bn2.beta", Tensor({2}));
        params.add(p + ".bn2.running_mean", Tensor({2}), false);
        params.add(p + ".bn2.running_var", Tensor::full({2}, 1.0), false);

        int c1 = g.add_conv2d(p + ".conv1", n, p + ".conv1.kernel", 1, 1);
        int b1 = g.add_batchnorm2d(p + ".bn1", c1, p + ".bn1");
        int r1 = g.add_relu(p + ".relu1", b1);
        int c2 = g.add_conv2d(p + ".conv2", r1, p + ".conv2.kernel", 1, 1);
        int b2 = g.add_batchnorm2d(p + ".bn2", c2, p + ".bn2");
        int ad = g.add_add(p + ".add", b2, n);
        n = g.add_relu(p + ".relu2", ad);
    }
    g.mark_output(n);

    Rng rng(32);
    Tensor x = random_tensor({2, 4, 4}, rng, 0.5, 1.5);
    Evaluation ev = forward(g, params, {{"x", x}}, false);
    Tensor seed = random_tensor(ev.value(n).shape(), rng, 0.1, 1.0);
    GradientMap gm = backward(g, params, ev, {{n, seed}});
    CHECK(gm.inputs.at("x").norm() == doctest::Approx(seed.norm()).epsilon(0));
    for (std::int64_t i = 0; i < seed.size(); ++i) {
        CHECK(gm.inputs.at("x")[i] == seed[i]);
    }
    (void)specs;
}

TEST_CASE("finite_diff_check: linear loss is exact") {
    ComputeGraph g;
    int x = g.add_input("x");
    int a = g.add_affine("a", x, "w", "b");
    g.mark_output(a);
    ModelParameters params;
    Rng rng(33);
    params.add("w", random_tensor({3, 4}, rng));
    params.add("b", random_tensor({3}, rng));
    std::map<std::string, Tensor> inputs{{"x", random_tensor({4}, rng)}};
    Rng probe_rng(34);
    FiniteDiffReport rep = finite_diff_check(g, params, inputs, sum_loss(a), 1e-5, 100, probe_rng);
    CHECK(rep.max_rel_error < 1e-10);
}

TEST_CASE("finite_diff_check: quadratic loss within 1e-8") {
    ComputeGraph g;
    int x = g.add_input("x");
    int a = g.add_affine("a", x, "w", "b");
    g.mark_output(a);
    ModelParameters params;
    Rng rng(35);
    params.add("w", random_tensor({3, 4}, rng));
    params.add("b", random_tensor({3}, rng));
    std::map<std::string, Tensor> inputs{{"x", random_tensor({4}, rng)}};

    ScalarLoss loss;
    loss.value = [a](const Evaluation& ev) {
        const Tensor& t = ev.value(a);
        return 0.5 * t.dot(t);
    };
    loss.output_grads = [a](const Evaluation& ev) {
        std::map<int, Tensor> seeds;
        seeds.emplace(a, ev.value(a));
        return seeds;
    };
    Rng probe_rng(36);
    FiniteDiffReport rep = finite_diff_check(g, params, inputs, loss, 1e-5, 100, probe_rng);
    CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("forward flags missing inputs and non-finite values") {
    ComputeGraph g;
    int x = g.add_input("x");
    int r = g.add_relu("r", x);
    g.mark_output(r);
    ModelParameters params;
    CHECK_THROWS_AS(forward(g, params, {}, false), std::invalid_argument);
    Tensor bad({1}, {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(forward(g, params, {{"x", bad}}, false), std::domain_error);
}

TEST_CASE("graph rejects duplicate names and unknown parameters") {
    ComputeGraph g;
    int x = g.add_input("x");
    CHECK_THROWS_AS(g.add_input("x"), std::invalid_argument);
    g.add_conv2d("c", x, "missing.kernel", 1, 0);
    ModelParameters params;
    CHECK_THROWS_AS(g.validate_params(params), std::invalid_argument);
}
