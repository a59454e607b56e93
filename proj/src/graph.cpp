#include "ckd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ckd {

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::TConv2d: return "tconv2d";
        case OpKind::BatchNorm2d: return "batchnorm2d";
        case OpKind::Relu: return "relu";
        case OpKind::UpsampleNearest: return "upsample_nearest";
        case OpKind::Affine: return "affine";
        case OpKind::Add: return "add";
        case OpKind::GlobalAvgPool: return "global_avg_pool";
        case OpKind::Reshape: return "reshape";
    }
    return "?";
}

// -- ModelParameters -------------------------------------------------------

void ModelParameters::add(const std::string& name, Tensor t, bool trainable) {
    if (values.count(name)) {
        throw std::invalid_argument("ModelParameters: duplicate parameter '" + name + "'");
    }
    names.push_back(name);
    values.emplace(name, std::move(t));
    if (!trainable) non_trainable.insert(name);
}

Tensor& ModelParameters::at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) {
        throw std::invalid_argument("ModelParameters: unknown parameter '" + name + "'");
    }
    return it->second;
}

const Tensor& ModelParameters::at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) {
        throw std::invalid_argument("ModelParameters: unknown parameter '" + name + "'");
    }
    return it->second;
}

std::vector<std::string> ModelParameters::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& n : names) {
        if (is_trainable(n)) out.push_back(n);
    }
    return out;
}

std::int64_t ModelParameters::trainable_size() const {
    std::int64_t total = 0;
    for (const auto& n : names) {
        if (is_trainable(n)) total += values.at(n).size();
    }
    return total;
}

GradientMap& GradientMap::operator+=(const GradientMap& o) {
    for (const auto& [k, v] : o.params) {
        auto it = params.find(k);
        if (it == params.end()) {
            params.emplace(k, v);
        } else {
            it->second += v;
        }
    }
    for (const auto& [k, v] : o.inputs) {
        auto it = inputs.find(k);
        if (it == inputs.end()) {
            inputs.emplace(k, v);
        } else {
            it->second += v;
        }
    }
    return *this;
}

void GradientMap::scale(double s) {
    for (auto& [k, v] : params) v *= s;
    for (auto& [k, v] : inputs) v *= s;
}

// -- ComputeGraph ------------------------------------------------------------

int ComputeGraph::push(Node n) {
    if (name_to_id_.count(n.name)) {
        throw std::invalid_argument("ComputeGraph: duplicate node name '" + n.name + "'");
    }
    for (int in : n.inputs) {
        if (in < 0 || in >= static_cast<int>(nodes_.size())) {
            throw std::invalid_argument("ComputeGraph: node '" + n.name + "' references unknown input");
        }
    }
    const int id = static_cast<int>(nodes_.size());
    name_to_id_.emplace(n.name, id);
    nodes_.push_back(std::move(n));
    return id;
}

int ComputeGraph::add_input(const std::string& name) {
    Node n;
    n.kind = OpKind::Input;
    n.name = name;
    return push(std::move(n));
}

int ComputeGraph::add_conv2d(const std::string& name, int input, const std::string& kernel,
                             int stride, int pad) {
    Node n;
    n.kind = OpKind::Conv2d;
    n.name = name;
    n.inputs = {input};
    n.params = {kernel};
    n.stride = stride;
    n.pad = pad;
    return push(std::move(n));
}

int ComputeGraph::add_tconv2d(const std::string& name, int input, const std::string& kernel,
                              int stride, int pad) {
    Node n;
    n.kind = OpKind::TConv2d;
    n.name = name;
    n.inputs = {input};
    n.params = {kernel};
    n.stride = stride;
    n.pad = pad;
    return push(std::move(n));
}

int ComputeGraph::add_batchnorm2d(const std::string& name, int input, const std::string& prefix,
                                  double eps, double momentum) {
    Node n;
    n.kind = OpKind::BatchNorm2d;
    n.name = name;
    n.inputs = {input};
    n.params = {prefix + ".gamma", prefix + ".beta", prefix + ".running_mean", prefix + ".running_var"};
    n.eps = eps;
    n.momentum = momentum;
    return push(std::move(n));
}

int ComputeGraph::add_relu(const std::string& name, int input) {
    Node n;
    n.kind = OpKind::Relu;
    n.name = name;
    n.inputs = {input};
    return push(std::move(n));
}

int ComputeGraph::add_upsample(const std::string& name, int input, int target_h, int target_w) {
    Node n;
    n.kind = OpKind::UpsampleNearest;
    n.name = name;
    n.inputs = {input};
    n.target_h = target_h;
    n.target_w = target_w;
    return push(std::move(n));
}

int ComputeGraph::add_affine(const std::string& name, int input, const std::string& weight,
                             const std::string& bias) {
    Node n;
    n.kind = OpKind::Affine;
    n.name = name;
    n.inputs = {input};
    n.params = {weight, bias};
    return push(std::move(n));
}

int ComputeGraph::add_add(const std::string& name, int lhs, int rhs) {
    Node n;
    n.kind = OpKind::Add;
    n.name = name;
    n.inputs = {lhs, rhs};
    return push(std::move(n));
}

int ComputeGraph::add_global_avg_pool(const std::string& name, int input) {
    Node n;
    n.kind = OpKind::GlobalAvgPool;
    n.name = name;
    n.inputs = {input};
    return push(std::move(n));
}

int ComputeGraph::add_reshape(const std::string& name, int input, std::vector<int> out_shape) {
    Node n;
    n.kind = OpKind::Reshape;
    n.name = name;
    n.inputs = {input};
    n.out_shape = std::move(out_shape);
    return push(std::move(n));
}

void ComputeGraph::mark_output(int node) {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("ComputeGraph: output refers to unknown node");
    }
    outputs_.push_back(node);
}

int ComputeGraph::node_id(const std::string& name) const {
    auto it = name_to_id_.find(name);
    if (it == name_to_id_.end()) {
        throw std::invalid_argument("ComputeGraph: unknown node '" + name + "'");
    }
    return it->second;
}

std::vector<int> ComputeGraph::input_ids() const {
    std::vector<int> ids;
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
        if (nodes_[static_cast<std::size_t>(i)].kind == OpKind::Input) ids.push_back(i);
    }
    return ids;
}

void ComputeGraph::validate_params(const ModelParameters& params) const {
    for (const auto& n : nodes_) {
        for (const auto& p : n.params) {
            if (!params.has(p)) {
                throw std::invalid_argument("ComputeGraph: node '" + n.name +
                                            "' references missing parameter '" + p + "'");
            }
        }
    }
}

// -- forward -----------------------------------------------------------------

Evaluation forward(const ComputeGraph& graph, ModelParameters& params,
                   const std::map<std::string, Tensor>& inputs, bool train, bool update_running) {
    graph.validate_params(params);
    Evaluation ev;
    ev.train = train;
    ev.values.resize(graph.nodes().size());

    for (int id = 0; id < static_cast<int>(graph.nodes().size()); ++id) {
        const Node& n = graph.node(id);
        switch (n.kind) {
            case OpKind::Input: {
                auto it = inputs.find(n.name);
                if (it == inputs.end()) {
                    throw std::invalid_argument("forward: missing input tensor '" + n.name + "'");
                }
                ev.values[static_cast<std::size_t>(id)] = it->second;
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& x = ev.value(n.inputs[0]);
                ev.values[static_cast<std::size_t>(id)] =
                    conv2d(x, params.at(n.params[0]), n.stride, n.pad);
                break;
            }
            case OpKind::TConv2d: {
                const Tensor& x = ev.value(n.inputs[0]);
                ev.values[static_cast<std::size_t>(id)] =
                    transposed_conv2d(x, params.at(n.params[0]), n.stride, n.pad);
                break;
            }
            case OpKind::BatchNorm2d: {
                const Tensor& x = ev.value(n.inputs[0]);
                BatchNormCache& cache = ev.bn[id];
                ev.values[static_cast<std::size_t>(id)] = batchnorm2d(
                    x, params.at(n.params[0]), params.at(n.params[1]), params.at(n.params[2]),
                    params.at(n.params[3]), train, train && update_running, n.eps, n.momentum, &cache);
                break;
            }
            case OpKind::Relu: {
                ev.values[static_cast<std::size_t>(id)] = relu(ev.value(n.inputs[0]));
                break;
            }
            case OpKind::UpsampleNearest: {
                ev.values[static_cast<std::size_t>(id)] =
                    interpolate_nearest(ev.value(n.inputs[0]), n.target_h, n.target_w);
                break;
            }
            case OpKind::Affine: {
                ev.values[static_cast<std::size_t>(id)] =
                    affine(ev.value(n.inputs[0]), params.at(n.params[0]), params.at(n.params[1]));
                break;
            }
            case OpKind::Add: {
                Tensor t = ev.value(n.inputs[0]);
                t += ev.value(n.inputs[1]);
                ev.values[static_cast<std::size_t>(id)] = std::move(t);
                break;
            }
            case OpKind::GlobalAvgPool: {
                ev.values[static_cast<std::size_t>(id)] = global_avg_pool(ev.value(n.inputs[0]));
                break;
            }
            case OpKind::Reshape: {
                ev.values[static_cast<std::size_t>(id)] =
                    ev.value(n.inputs[0]).reshaped(n.out_shape);
                break;
            }
        }
        ev.values[static_cast<std::size_t>(id)].require_finite(std::string("forward: node '") +
                                                               n.name + "'");
    }
    ev.valid = true;
    return ev;
}

// -- backward ------------------------------------------------------------------

GradientMap backward(const ComputeGraph& graph, const ModelParameters& params,
                     const Evaluation& eval, const std::map<int, Tensor>& seeds) {
    if (!eval.valid) {
        throw std::logic_error("backward: forward pass has not been evaluated");
    }
    GradientMap gm;
    for (const auto& name : params.trainable_names()) {
        gm.params.emplace(name, Tensor::zeros_like(params.at(name)));
    }

    std::vector<std::optional<Tensor>> node_grads(graph.nodes().size());
    for (const auto& [id, seed] : seeds) {
        const Tensor& v = eval.value(id);
        if (!seed.same_shape(v)) {
            throw std::invalid_argument("backward: seed shape " + seed.shape_str() +
                                        " does not match output shape " + v.shape_str());
        }
        auto& slot = node_grads[static_cast<std::size_t>(id)];
        if (slot) {
            *slot += seed;
        } else {
            slot = seed;
        }
    }

    auto grad_into = [&](int id) -> Tensor& {
        auto& slot = node_grads[static_cast<std::size_t>(id)];
        if (!slot) slot = Tensor::zeros_like(eval.value(id));
        return *slot;
    };

    for (int id = static_cast<int>(graph.nodes().size()) - 1; id >= 0; --id) {
        auto& slot = node_grads[static_cast<std::size_t>(id)];
        if (!slot) continue;
        const Node& n = graph.node(id);
        const Tensor& dy = *slot;
        switch (n.kind) {
            case OpKind::Input:
                gm.inputs[n.name] = dy;
                break;
            case OpKind::Conv2d: {
                const Tensor& x = eval.value(n.inputs[0]);
                conv2d_backward(x, params.at(n.params[0]), n.stride, n.pad, dy,
                                &grad_into(n.inputs[0]), &gm.params.at(n.params[0]));
                break;
            }
            case OpKind::TConv2d: {
                const Tensor& x = eval.value(n.inputs[0]);
                transposed_conv2d_backward(x, params.at(n.params[0]), n.stride, n.pad, dy,
                                           &grad_into(n.inputs[0]), &gm.params.at(n.params[0]));
                break;
            }
            case OpKind::BatchNorm2d: {
                auto it = eval.bn.find(id);
                if (it == eval.bn.end()) {
                    throw std::logic_error("backward: batchnorm cache missing for node '" + n.name + "'");
                }
                batchnorm2d_backward(params.at(n.params[0]), params.at(n.params[3]), n.eps,
                                     it->second, dy, &grad_into(n.inputs[0]),
                                     &gm.params.at(n.params[0]), &gm.params.at(n.params[1]));
                break;
            }
            case OpKind::Relu: {
                relu_backward(eval.value(n.inputs[0]), dy, &grad_into(n.inputs[0]));
                break;
            }
            case OpKind::UpsampleNearest: {
                interpolate_nearest_backward(eval.value(n.inputs[0]), n.target_h, n.target_w, dy,
                                             &grad_into(n.inputs[0]));
                break;
            }
            case OpKind::Affine: {
                affine_backward(eval.value(n.inputs[0]), params.at(n.params[0]), dy,
                                &grad_into(n.inputs[0]), &gm.params.at(n.params[0]),
                                &gm.params.at(n.params[1]));
                break;
            }
            case OpKind::Add: {
                grad_into(n.inputs[0]) += dy;
                grad_into(n.inputs[1]) += dy;
                break;
            }
            case OpKind::GlobalAvgPool: {
                global_avg_pool_backward(eval.value(n.inputs[0]), dy, &grad_into(n.inputs[0]));
                break;
            }
            case OpKind::Reshape: {
                grad_into(n.inputs[0]) += dy.reshaped(eval.value(n.inputs[0]).shape());
                break;
            }
        }
        // Release the slot's memory once consumed; outputs of Input nodes were
        // already exported above.
        if (n.kind != OpKind::Input) slot.reset();
    }
    return gm;
}

// -- finite differences ----------------------------------------------------------

FiniteDiffReport finite_diff_check(const ComputeGraph& graph, ModelParameters& params,
                                   const std::map<std::string, Tensor>& inputs,
                                   const ScalarLoss& loss, double h, int max_probes, Rng& rng,
                                   bool train) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");

    Evaluation ev = forward(graph, params, inputs, train, /*update_running=*/false);
    const GradientMap analytic = backward(graph, params, ev, [&] {
        std::map<int, Tensor> seeds = loss.output_grads(ev);
        return seeds;
    }());

    // Enumerate every trainable entry, then sample a subset.
    struct Probe {
        std::string name;
        std::int64_t index;
    };
    std::vector<Probe> all;
    for (const auto& name : params.trainable_names()) {
        const std::int64_t sz = params.at(name).size();
        for (std::int64_t i = 0; i < sz; ++i) all.push_back({name, i});
    }
    std::vector<Probe> chosen;
    if (static_cast<int>(all.size()) <= max_probes) {
        chosen = all;
    } else {
        rng.shuffle(all);
        chosen.assign(all.begin(), all.begin() + max_probes);
    }

    FiniteDiffReport report;
    report.probes = static_cast<int>(chosen.size());
    for (const auto& p : chosen) {
        Tensor& t = params.at(p.name);
        const double saved = t[p.index];

        t[p.index] = saved + h;
        const double f_plus = loss.value(forward(graph, params, inputs, train, false));
        t[p.index] = saved - h;
        const double f_minus = loss.value(forward(graph, params, inputs, train, false));
        t[p.index] = saved;

        const double central = (f_plus - f_minus) / (2.0 * h);
        const double a = analytic.params.at(p.name)[p.index];
        const double rel = std::fabs(a - central) / std::max(1.0, std::fabs(central));
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_param = p.name + "[" + std::to_string(p.index) + "]";
        }
    }
    return report;
}

} // namespace ckd
