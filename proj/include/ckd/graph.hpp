#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ckd/layers.hpp"
#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

enum class OpKind {
    Input,
    Conv2d,
    TConv2d,
    BatchNorm2d,
    Relu,
    UpsampleNearest,
    Affine,
    Add,
    GlobalAvgPool,
    Reshape,
};

const char* op_kind_name(OpKind k);

struct Node {
    OpKind kind = OpKind::Input;
    std::string name;                 // unique within the graph
    std::vector<int> inputs;          // node ids; always < own id (acyclic by construction)
    std::vector<std::string> params;  // parameter names, op-specific order

    int stride = 1;
    int pad = 0;
    int target_h = 0;                 // UpsampleNearest
    int target_w = 0;
    std::vector<int> out_shape;       // Reshape
    double eps = 1e-5;                // BatchNorm2d
    double momentum = 0.1;
};

/// Named parameter store shared by a graph. Running statistics are held here
/// too, flagged non-trainable so the optimizer skips them.
struct ModelParameters {
    std::vector<std::string> names;   // insertion order, for deterministic iteration
    std::map<std::string, Tensor> values;
    std::set<std::string> non_trainable;

    void add(const std::string& name, Tensor t, bool trainable = true);
    bool has(const std::string& name) const { return values.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool is_trainable(const std::string& name) const { return non_trainable.count(name) == 0; }
    std::vector<std::string> trainable_names() const;
    std::int64_t trainable_size() const;
};

struct GradientMap {
    std::map<std::string, Tensor> params;  // every trainable parameter, zeros if unused
    std::map<std::string, Tensor> inputs;  // keyed by input-node name

    GradientMap& operator+=(const GradientMap& o);
    void scale(double s);
};

class ComputeGraph {
public:
    int add_input(const std::string& name);
    int add_conv2d(const std::string& name, int input, const std::string& kernel, int stride, int pad);
    int add_tconv2d(const std::string& name, int input, const std::string& kernel, int stride, int pad);
    /// Registers <prefix>.gamma/.beta (trainable) and .running_mean/.running_var.
    int add_batchnorm2d(const std::string& name, int input, const std::string& prefix,
                        double eps = 1e-5, double momentum = 0.1);
    int add_relu(const std::string& name, int input);
    int add_upsample(const std::string& name, int input, int target_h, int target_w);
    int add_affine(const std::string& name, int input, const std::string& weight,
                   const std::string& bias);
    int add_add(const std::string& name, int lhs, int rhs);
    int add_global_avg_pool(const std::string& name, int input);
    int add_reshape(const std::string& name, int input, std::vector<int> out_shape);

    void mark_output(int node);

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<int>& outputs() const { return outputs_; }
    int node_id(const std::string& name) const;
    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    std::vector<int> input_ids() const;

    /// Every referenced parameter name must resolve in `params`.
    void validate_params(const ModelParameters& params) const;

private:
    int push(Node n);

    std::vector<Node> nodes_;
    std::map<std::string, int> name_to_id_;
    std::vector<int> outputs_;
};

/// Cached forward pass over one graph; required by backward().
struct Evaluation {
    std::vector<Tensor> values;          // per node
    std::map<int, BatchNormCache> bn;    // per BatchNorm2d node
    bool train = false;
    bool valid = false;

    const Tensor& value(int node) const { return values.at(static_cast<std::size_t>(node)); }
};

/// Evaluates the graph in topological order. In train mode batch statistics
/// drive the normalization layers; running stats are updated only when
/// update_running is set (the finite-difference harness turns it off).
Evaluation forward(const ComputeGraph& graph, ModelParameters& params,
                   const std::map<std::string, Tensor>& inputs, bool train,
                   bool update_running = true);

/// Reverse-mode accumulation from the given per-node seed gradients back to
/// every trainable parameter and every graph input.
GradientMap backward(const ComputeGraph& graph, const ModelParameters& params,
                     const Evaluation& eval, const std::map<int, Tensor>& seeds);

/// Scalar loss over graph outputs together with its gradient, used to drive
/// both the analytic backward pass and the central-difference probe.
struct ScalarLoss {
    std::function<double(const Evaluation&)> value;
    std::function<std::map<int, Tensor>(const Evaluation&)> output_grads;
};

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    int probes = 0;
};

/// Central-difference check of backward() against the loss at params +- h.
/// Samples up to max_probes trainable entries. Relative error is
/// |analytic - central| / max(1, |central|).
FiniteDiffReport finite_diff_check(const ComputeGraph& graph, ModelParameters& params,
                                   const std::map<std::string, Tensor>& inputs,
                                   const ScalarLoss& loss, double h, int max_probes, Rng& rng,
                                   bool train = true);

} // namespace ckd
