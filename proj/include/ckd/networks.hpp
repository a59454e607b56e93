#pragma once

#include <array>
#include <string>
#include <vector>

#include "ckd/config.hpp"
#include "ckd/graph.hpp"
#include "ckd/pam.hpp"
#include "ckd/rng.hpp"

namespace ckd {

struct ResidualBlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    bool has_downsample = false;

    void validate() const;
};

struct TConvLayerSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 0;
};

/// CSI student: nearest-neighbor upsample, eight stacked transposed-conv
/// layers growing the antenna grid to the feature size, four residual stages
/// of two basic blocks each (sixteen convolutions), a two-conv decoder, an
/// affine head emitting the 2xKxK pose adjacency prediction, and a
/// global-average-pool classification head emitting logits.
struct StudentNetworkSpec {
    std::array<int, 3> csi_shape{30, 3, 3};
    int upsample_h = 0;  // start of the encoder, filled by the shape planner
    int upsample_w = 0;
    std::vector<TConvLayerSpec> encoder;          // always 8 layers
    std::vector<ResidualBlockSpec> feature_stages; // 4 stage leads, 2 blocks per stage
    std::array<int, 3> feature_shape{64, 6, 6};
    int decoder_channels = 32;
    int num_classes = 8;
    int k_keypoints = 4;

    void validate() const;
};

struct TeacherNetworkSpec {
    std::array<int, 3> frame_shape{3, 32, 32};
    std::vector<int> conv_channels{16, 32, 64}; // stride-2 conv+bn+relu stages
    int num_classes = 8;

    void validate() const;
};

/// How each parameter tensor is created; builders emit these so the graph
/// wiring and the initialization stay in sync.
struct ParamSpec {
    enum class Init { UniformFanIn, Zeros, Ones };
    std::string name;
    std::vector<int> shape;
    bool trainable = true;
    Init init = Init::Zeros;
    int fan_in = 1;
};

struct BuiltNetwork {
    ComputeGraph graph;
    std::vector<ParamSpec> param_specs;
    int input_node = -1;
    int logits_node = -1;
    int pam_node = -1;     // student only
    int feature_node = -1; // student only: feature-generator output
};

/// Weights uniform in +-sqrt(1/fan_in); batchnorm gamma=1, beta=0, running
/// stats (0, 1); biases zero.
ModelParameters init_params(const std::vector<ParamSpec>& specs, Rng rng);

std::int64_t count_trainable(const std::vector<ParamSpec>& specs);

BuiltNetwork build_student(const StudentNetworkSpec& spec);
BuiltNetwork build_teacher(const TeacherNetworkSpec& spec);

struct StudentOutput {
    PoseAdjacencyMatrix pam;
    Tensor logits;
};

StudentOutput student_forward(const BuiltNetwork& net, ModelParameters& params, const Tensor& csi,
                              bool train);
Tensor teacher_forward(const BuiltNetwork& net, ModelParameters& params, const Tensor& frame,
                       bool train);

/// Single residual block evaluated on its own: relu(bn2(conv2(relu(bn1(
/// conv1(x))))) + shortcut(x)). Parameters are read from `params` under
/// `prefix` (same naming the builders use).
Tensor residual_block_forward(const Tensor& x, const ResidualBlockSpec& spec,
                              ModelParameters& params, const std::string& prefix, bool train);

/// Encodes the teacher-side pose annotation into the supervision target.
PoseAdjacencyMatrix teacher_pam_supervision(const PoseAnnotation& annotation);

/// Spec constructors. Desk scale keeps the paper's topology at sizes a CPU
/// trains in minutes; paper scale reproduces the published dimensions.
StudentNetworkSpec make_student_spec_desk(int num_classes = 8, int k_keypoints = 4);
StudentNetworkSpec make_student_spec_paper();
TeacherNetworkSpec make_teacher_spec_desk(int num_classes = 8);

StudentNetworkSpec student_spec_from_config(const Config& cfg);
TeacherNetworkSpec teacher_spec_from_config(const Config& cfg);
void student_spec_to_config(const StudentNetworkSpec& spec, Config& cfg);
void teacher_spec_to_config(const TeacherNetworkSpec& spec, Config& cfg);

} // namespace ckd
