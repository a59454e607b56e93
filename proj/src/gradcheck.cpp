#include "ckd/gradcheck.hpp"

#include <cmath>

#include "ckd/loss.hpp"

namespace ckd {

namespace {

constexpr double kH = 1e-5;
constexpr double kTol = 1e-4;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// loss = 0.5 * ||output||^2 summed over all marked outputs.
ScalarLoss quadratic_loss(const ComputeGraph& graph) {
    ScalarLoss loss;
    const std::vector<int> outs = graph.outputs();
    loss.value = [outs](const Evaluation& ev) {
        double acc = 0.0;
        for (int id : outs) {
            const Tensor& t = ev.value(id);
            acc += 0.5 * t.dot(t);
        }
        return acc;
    };
    loss.output_grads = [outs](const Evaluation& ev) {
        std::map<int, Tensor> seeds;
        for (int id : outs) seeds.emplace(id, ev.value(id));
        return seeds;
    };
    return loss;
}

GradCheckResult check_graph(const std::string& name, const ComputeGraph& graph,
                            ModelParameters& params, const std::map<std::string, Tensor>& inputs,
                            const ScalarLoss& loss, int max_probes, Rng& rng,
                            double fault_scale = 1.0) {
    GradCheckResult result;
    result.name = name;
    if (fault_scale == 1.0) {
        FiniteDiffReport rep = finite_diff_check(graph, params, inputs, loss, kH, max_probes, rng);
        result.max_rel_error = rep.max_rel_error;
    } else {
        // Fault injection: scale the largest analytic gradient entry, then
        // compare it against its central difference. The harness must flag it.
        Evaluation ev = forward(graph, params, inputs, true, false);
        GradientMap analytic = backward(graph, params, ev, loss.output_grads(ev));
        std::string victim;
        std::int64_t index = 0;
        double best = -1.0;
        for (const auto& [name, g] : analytic.params) {
            for (std::int64_t i = 0; i < g.size(); ++i) {
                if (std::fabs(g[i]) > best) {
                    best = std::fabs(g[i]);
                    victim = name;
                    index = i;
                }
            }
        }
        Tensor& t = params.at(victim);
        const double saved = t[index];
        t[index] = saved + kH;
        const double fp = loss.value(forward(graph, params, inputs, true, false));
        t[index] = saved - kH;
        const double fm = loss.value(forward(graph, params, inputs, true, false));
        t[index] = saved;
        const double central = (fp - fm) / (2.0 * kH);
        const double a = analytic.params.at(victim)[index] * fault_scale;
        result.max_rel_error = std::fabs(a - central) / std::max(1.0, std::fabs(central));
    }
    result.pass = result.max_rel_error < kTol;
    return result;
}

GradCheckResult check_ckd_grad(const std::string& name, const CkdConfig& cfg, Rng& rng) {
    GradCheckResult result;
    result.name = name;
    double max_rel = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        const int n = 5;
        Tensor student = random_tensor({n}, rng, -2.0, 2.0);
        Tensor teacher = random_tensor({n}, rng, -2.0, 2.0);
        const int target = static_cast<int>(rng.uniform_int(n));
        const Tensor analytic = ckd_loss_grad(student, teacher, target, cfg);
        for (int i = 0; i < n; ++i) {
            const double saved = student[i];
            student[i] = saved + kH;
            const double fp = ckd_loss(student, teacher, target, cfg).total;
            student[i] = saved - kH;
            const double fm = ckd_loss(student, teacher, target, cfg).total;
            student[i] = saved;
            const double central = (fp - fm) / (2.0 * kH);
            max_rel = std::max(max_rel,
                               std::fabs(analytic[i] - central) / std::max(1.0, std::fabs(central)));
        }
    }
    result.max_rel_error = max_rel;
    result.pass = max_rel < kTol;
    return result;
}

} // namespace

std::vector<GradCheckResult> run_gradient_checks(const StudentNetworkSpec& student_spec,
                                                 std::uint64_t seed, bool inject_fault) {
    std::vector<GradCheckResult> results;
    Rng root(seed);

    // conv2d, stride 1 pad 1 and stride 2 pad 0.
    {
        Rng rng = root.child("gc/conv");
        ComputeGraph g;
        std::vector<ParamSpec> specs;
        int x = g.add_input("x");
        specs.push_back({"k1", {3, 2, 3, 3}, true, ParamSpec::Init::UniformFanIn, 18});
        int c1 = g.add_conv2d("c1", x, "k1", 1, 1);
        specs.push_back({"k2", {2, 3, 3, 3}, true, ParamSpec::Init::UniformFanIn, 27});
        int c2 = g.add_conv2d("c2", c1, "k2", 2, 0);
        g.mark_output(c2);
        ModelParameters params = init_params(specs, rng.child("init"));
        std::map<std::string, Tensor> inputs{{"x", random_tensor({2, 6, 6}, rng)}};
        results.push_back(check_graph("conv2d", g, params, inputs, quadratic_loss(g), 64, rng));
    }

    // transposed conv, stride 1 and stride 2.
    {
        Rng rng = root.child("gc/tconv");
        ComputeGraph g;
        std::vector<ParamSpec> specs;
        int x = g.add_input("x");
        specs.push_back({"k1", {2, 3, 3, 3}, true, ParamSpec::Init::UniformFanIn, 18});
        int t1 = g.add_tconv2d("t1", x, "k1", 2, 1);
        specs.push_back({"k2", {3, 2, 3, 3}, true, ParamSpec::Init::UniformFanIn, 27});
        int t2 = g.add_tconv2d("t2", t1, "k2", 1, 0);
        g.mark_output(t2);
        ModelParameters params = init_params(specs, rng.child("init"));
        std::map<std::string, Tensor> inputs{{"x", random_tensor({2, 3, 3}, rng)}};
        results.push_back(check_graph("transposed_conv2d", g, params, inputs, quadratic_loss(g), 64, rng));
    }

    // batchnorm in train mode (batch statistics path).
    {
        Rng rng = root.child("gc/bn");
        ComputeGraph g;
        std::vector<ParamSpec> specs;
        int x = g.add_input("x");
        specs.push_back({"k", {3, 2, 3, 3}, true, ParamSpec::Init::UniformFanIn, 18});
        int c = g.add_conv2d("c", x, "k", 1, 1);
        specs.push_back({"bn.gamma", {3}, true, ParamSpec::Init::Ones, 1});
        specs.push_back({"bn.beta", {3}, true, ParamSpec::Init::Zeros, 1});
        specs.push_back({"bn.running_mean", {3}, false, ParamSpec::Init::Zeros, 1});
        specs.push_back({"bn.running_var", {3}, false, ParamSpec::Init::Ones, 1});
        int b = g.add_batchnorm2d("bn", c, "bn");
        g.mark_output(b);
        ModelParameters params = init_params(specs, rng.child("init"));
        std::map<std::string, Tensor> inputs{{"x", random_tensor({2, 5, 5}, rng)}};
        results.push_back(check_graph("batchnorm2d", g, params, inputs, quadratic_loss(g), 64, rng));
    }

    // relu behind an affine layer (probes pass through the nonlinearity).
    {
        Rng rng = root.child("gc/relu");
        ComputeGraph g;
        std::vector<ParamSpec> specs;
        int x = g.add_input("x");
        specs.push_back({"w", {6, 8}, true, ParamSpec::Init::UniformFanIn, 8});
        specs.push_back({"b", {6}, true, ParamSpec::Init::Zeros, 1});
        int a = g.add_affine("a", x, "w", "b");
        int r = g.add_relu("r", a);
        g.mark_output(r);
        ModelParameters params = init_params(specs, rng.child("init"));
        std::map<std::string, Tensor> inputs{{"x", random_tensor({8}, rng, 0.2, 1.0)}};
        results.push_back(check_graph("relu", g, params, inputs, quadratic_loss(g), 54, rng));
    }

    // nearest-neighbor upsample feeding a conv.
    {
        Rng rng = root.child("gc/upsample");
        ComputeGraph g;
        std::vector<ParamSpec> specs;
        int x = g.add_input("x");
        int u = g.add_upsample("u", x, 6, 6);
        specs.push_back({"k", {2, 2, 3, 3}, true, ParamSpec::Init::UniformFanIn, 18});
        int c = g.add_conv2d("c", u, "k", 1, 0);
        g.mark_output(c);
        ModelParameters params = init_params(specs, rng.child("init"));
        std::map<std::string, Tensor> inputs{{"x", random_tensor({2, 3, 3}, rng)}};
        results.push_back(check_graph("interpolate_upsample", g, params, inputs, quadratic_loss(g), 36, rng));
    }

    // affine plus global average pool head.
    {
        Rng rng = root.child("gc/affine");
        ComputeGraph g;
        std::vector<ParamSpec> specs;
        int x = g.add_input("x");
        int p = g.add_global_avg_pool("p", x);
        specs.push_back({"w", {4, 3}, true, ParamSpec::Init::UniformFanIn, 3});
        specs.push_back({"b", {4}, true, ParamSpec::Init::Zeros, 1});
        int a = g.add_affine("a", p, "w", "b");
        g.mark_output(a);
        ModelParameters params = init_params(specs, rng.child("init"));
        std::map<std::string, Tensor> inputs{{"x", random_tensor({3, 4, 4}, rng)}};
        results.push_back(check_graph("affine+gap", g, params, inputs, quadratic_loss(g), 16, rng));
    }

    // one residual block, downsample variant.
    {
        Rng rng = root.child("gc/resblock");
        ResidualBlockSpec block;
        block.in_channels = 2;
        block.out_channels = 4;
        block.stride = 1;
        block.has_downsample = true;
        ComputeGraph g;
        std::vector<ParamSpec> specs;
        int x = g.add_input("x");
        // Mirror the builder naming by hand for a self-contained block.
        specs.push_back({"rb.conv1.kernel", {4, 2, 3, 3}, true, ParamSpec::Init::UniformFanIn, 18});
        int n = g.add_conv2d("rb.conv1", x, "rb.conv1.kernel", 1, 1);
        specs.push_back({"rb.bn1.gamma", {4}, true, ParamSpec::Init::Ones, 1});
        specs.push_back({"rb.bn1.beta", {4}, true, ParamSpec::Init::Zeros, 1});
        specs.push_back({"rb.bn1.running_mean", {4}, false, ParamSpec::Init::Zeros, 1});
        specs.push_back({"rb.bn1.running_var", {4}, false, ParamSpec::Init::Ones, 1});
        n = g.add_batchnorm2d("rb.bn1", n, "rb.bn1");
        n = g.add_relu("rb.relu1", n);
        specs.push_back({"rb.conv2.kernel", {4, 4, 3, 3}, true, ParamSpec::Init::UniformFanIn, 36});
        n = g.add_conv2d("rb.conv2", n, "rb.conv2.kernel", 1, 1);
        specs.push_back({"rb.bn2.gamma", {4}, true, ParamSpec::Init::Ones, 1});
        specs.push_back({"rb.bn2.beta", {4}, true, ParamSpec::Init::Zeros, 1});
        specs.push_back({"rb.bn2.running_mean", {4}, false, ParamSpec::Init::Zeros, 1});
        specs.push_back({"rb.bn2.running_var", {4}, false, ParamSpec::Init::Ones, 1});
        n = g.add_batchnorm2d("rb.bn2", n, "rb.bn2");
        specs.push_back({"rb.down.kernel", {4, 2, 1, 1}, true, ParamSpec::Init::UniformFanIn, 2});
        int d = g.add_conv2d("rb.down", x, "rb.down.kernel", 1, 0);
        n = g.add_add("rb.add", n, d);
        n = g.add_relu("rb.relu2", n);
        g.mark_output(n);
        ModelParameters params = init_params(specs, rng.child("init"));
        std::map<std::string, Tensor> inputs{{"x", random_tensor({2, 5, 5}, rng)}};
        results.push_back(check_graph("residual_block", g, params, inputs, quadratic_loss(g), 64, rng));
    }

    // CKD loss gradient in every weight/temperature-scale mode.
    for (WeightMode wm : {WeightMode::Adaptive, WeightMode::FixedBeta}) {
        for (TempScaleMode ts : {TempScaleMode::Squared, TempScaleMode::LiteralTimes4}) {
            CkdConfig cfg;
            cfg.temperature = 3.0;
            cfg.weight_mode = wm;
            cfg.temp_scale_mode = ts;
            cfg.alpha = wm == WeightMode::FixedBeta ? 1.5 : 1.0;
            cfg.beta = 4.0;
            Rng rng = root.child("gc/ckd-" + to_string(wm) + "-" + to_string(ts));
            results.push_back(
                check_ckd_grad("ckd_loss(" + to_string(wm) + "," + to_string(ts) + ")", cfg, rng));
        }
    }

    // End-to-end student under the full training loss: CE + CKD + PAM MSE.
    {
        Rng rng = root.child("gc/student");
        BuiltNetwork net = build_student(student_spec);
        ModelParameters params = init_params(net.param_specs, rng.child("init"));
        Tensor csi = random_tensor({student_spec.csi_shape[0], student_spec.csi_shape[1],
                                    student_spec.csi_shape[2]},
                                   rng);
        Tensor teacher_logits = random_tensor({student_spec.num_classes}, rng, -2.0, 2.0);
        Tensor pam_target = random_tensor(
            {2, student_spec.k_keypoints, student_spec.k_keypoints}, rng, 0.0, 1.0);
        const int target = static_cast<int>(rng.uniform_int(student_spec.num_classes));
        CkdConfig ckd_cfg;
        ckd_cfg.temperature = 4.0;
        const double lambda_pam = 1.0;
        const int logits_node = net.logits_node;
        const int pam_node = net.pam_node;

        ScalarLoss loss;
        loss.value = [=](const Evaluation& ev) {
            const Tensor& logits = ev.value(logits_node);
            const Tensor& pam = ev.value(pam_node);
            double mse = 0.0;
            for (std::int64_t i = 0; i < pam.size(); ++i) {
                const double d = pam[i] - pam_target[i];
                mse += d * d;
            }
            mse /= static_cast<double>(pam.size());
            return ckd_cfg.ce_weight * cross_entropy(logits, target) +
                   ckd_loss(logits, teacher_logits, target, ckd_cfg).total + lambda_pam * mse;
        };
        loss.output_grads = [=](const Evaluation& ev) {
            const Tensor& logits = ev.value(logits_node);
            const Tensor& pam = ev.value(pam_node);
            Tensor logit_seed = cross_entropy_grad(logits, target);
            logit_seed *= ckd_cfg.ce_weight;
            logit_seed += ckd_loss_grad(logits, teacher_logits, target, ckd_cfg);
            Tensor pam_seed = Tensor::zeros_like(pam);
            for (std::int64_t i = 0; i < pam.size(); ++i) {
                pam_seed[i] = lambda_pam * 2.0 * (pam[i] - pam_target[i]) /
                              static_cast<double>(pam.size());
            }
            std::map<int, Tensor> seeds;
            seeds.emplace(logits_node, std::move(logit_seed));
            seeds.emplace(pam_node, std::move(pam_seed));
            return seeds;
        };
        std::map<std::string, Tensor> inputs{{"csi", csi}};
        results.push_back(check_graph("student_end_to_end", net.graph, params, inputs, loss, 48,
                                      rng, inject_fault ? 2.0 : 1.0));
    }

    return results;
}

} // namespace ckd
