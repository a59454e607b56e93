#include "ckd/networks.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ckd/errors.hpp"

namespace ckd {

void ResidualBlockSpec::validate() const {
    if (in_channels < 1 || out_channels < 1) {
        throw std::invalid_argument("ResidualBlockSpec: channels must be >= 1");
    }
    if (stride < 1) throw std::invalid_argument("ResidualBlockSpec: stride must be >= 1");
    if ((in_channels != out_channels || stride > 1) && !has_downsample) {
        throw std::invalid_argument(
            "ResidualBlockSpec: shape-changing block requires a downsample shortcut");
    }
}

void StudentNetworkSpec::validate() const {
    if (encoder.size() != 8) {
        throw std::invalid_argument("StudentNetworkSpec: encoder must have exactly 8 layers");
    }
    if (feature_stages.size() != 4) {
        throw std::invalid_argument("StudentNetworkSpec: feature generator must have 4 stages");
    }
    if (num_classes < 2) throw std::invalid_argument("StudentNetworkSpec: num_classes must be >= 2");
    if (k_keypoints < 1) throw std::invalid_argument("StudentNetworkSpec: k_keypoints must be >= 1");
    if (upsample_h < 1 || upsample_w < 1) {
        throw std::invalid_argument("StudentNetworkSpec: upsample target not set");
    }

    // Shape plan check: walk the encoder and require it to land exactly on the
    // feature grid, growing monotonically on the way.
    int ch = csi_shape[0], h = upsample_h, w = upsample_w;
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        const TConvLayerSpec& l = encoder[i];
        if (l.in_channels != ch) {
            throw std::invalid_argument("StudentNetworkSpec: encoder layer " + std::to_string(i) +
                                        " expects " + std::to_string(l.in_channels) +
                                        " channels, gets " + std::to_string(ch));
        }
        const int nh = (h - 1) * l.stride - 2 * l.pad + l.kernel;
        const int nw = (w - 1) * l.stride - 2 * l.pad + l.kernel;
        if (nh < h || nw < w) {
            throw std::invalid_argument("StudentNetworkSpec: encoder layer " + std::to_string(i) +
                                        " shrinks the spatial grid");
        }
        ch = l.out_channels;
        h = nh;
        w = nw;
    }
    if (ch != feature_stages.front().in_channels) {
        throw std::invalid_argument("StudentNetworkSpec: encoder output channels " +
                                    std::to_string(ch) + " do not match first feature stage");
    }
    if (h != feature_shape[1] || w != feature_shape[2]) {
        throw std::invalid_argument("StudentNetworkSpec: encoder lands on " + std::to_string(h) +
                                    "x" + std::to_string(w) + ", feature grid wants " +
                                    std::to_string(feature_shape[1]) + "x" +
                                    std::to_string(feature_shape[2]));
    }
    int stage_ch = feature_stages.front().in_channels;
    for (std::size_t i = 0; i < feature_stages.size(); ++i) {
        const ResidualBlockSpec& s = feature_stages[i];
        s.validate();
        if (s.in_channels != stage_ch) {
            throw std::invalid_argument("StudentNetworkSpec: feature stage " + std::to_string(i) +
                                        " channel chain broken");
        }
        if (s.stride != 1) {
            throw std::invalid_argument("StudentNetworkSpec: feature stages must keep the grid size");
        }
        stage_ch = s.out_channels;
    }
    if (stage_ch != feature_shape[0]) {
        throw std::invalid_argument("StudentNetworkSpec: feature stages end at " +
                                    std::to_string(stage_ch) + " channels, feature shape wants " +
                                    std::to_string(feature_shape[0]));
    }
    if (decoder_channels < 1) {
        throw std::invalid_argument("StudentNetworkSpec: decoder_channels must be >= 1");
    }
}

void TeacherNetworkSpec::validate() const {
    if (conv_channels.empty()) {
        throw std::invalid_argument("TeacherNetworkSpec: needs at least one conv stage");
    }
    if (num_classes < 2) throw std::invalid_argument("TeacherNetworkSpec: num_classes must be >= 2");
    int h = frame_shape[1];
    for (std::size_t i = 0; i < conv_channels.size(); ++i) h = (h + 1) / 2;
    if (h < 1) throw std::invalid_argument("TeacherNetworkSpec: too many stride-2 stages for frame");
}

// -- parameter initialization ---------------------------------------------------

ModelParameters init_params(const std::vector<ParamSpec>& specs, Rng rng) {
    ModelParameters params;
    for (const auto& ps : specs) {
        Tensor t(ps.shape);
        switch (ps.init) {
            case ParamSpec::Init::Zeros:
                break;
            case ParamSpec::Init::Ones:
                t.fill(1.0);
                break;
            case ParamSpec::Init::UniformFanIn: {
                const double bound = std::sqrt(1.0 / static_cast<double>(ps.fan_in));
                for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
                break;
            }
        }
        params.add(ps.name, std::move(t), ps.trainable);
    }
    return params;
}

std::int64_t count_trainable(const std::vector<ParamSpec>& specs) {
    std::int64_t total = 0;
    for (const auto& ps : specs) {
        if (ps.trainable) total += Tensor::volume(ps.shape);
    }
    return total;
}

// -- graph builders ---------------------------------------------------------------

namespace {

void emit_conv(std::vector<ParamSpec>& out, const std::string& name, int c_out, int c_in, int k) {
    out.push_back({name, {c_out, c_in, k, k}, true, ParamSpec::Init::UniformFanIn, c_in * k * k});
}

void emit_tconv(std::vector<ParamSpec>& out, const std::string& name, int c_in, int c_out, int k) {
    out.push_back({name, {c_in, c_out, k, k}, true, ParamSpec::Init::UniformFanIn, c_in * k * k});
}

void emit_bn(std::vector<ParamSpec>& out, const std::string& prefix, int c) {
    out.push_back({prefix + ".gamma", {c}, true, ParamSpec::Init::Ones, 1});
    out.push_back({prefix + ".beta", {c}, true, ParamSpec::Init::Zeros, 1});
    out.push_back({prefix + ".running_mean", {c}, false, ParamSpec::Init::Zeros, 1});
    out.push_back({prefix + ".running_var", {c}, false, ParamSpec::Init::Ones, 1});
}

void emit_affine(std::vector<ParamSpec>& out, const std::string& prefix, int n_out, int n_in) {
    out.push_back({prefix + ".weight", {n_out, n_in}, true, ParamSpec::Init::UniformFanIn, n_in});
    out.push_back({prefix + ".bias", {n_out}, true, ParamSpec::Init::Zeros, 1});
}

/// conv1 -> bn1 -> relu -> conv2 -> bn2, plus identity-or-conv shortcut,
/// summed then passed through the final relu.
int append_residual_block(ComputeGraph& g, std::vector<ParamSpec>& specs, int input,
                          const std::string& prefix, const ResidualBlockSpec& block) {
    block.validate();
    emit_conv(specs, prefix + ".conv1.kernel", block.out_channels, block.in_channels, 3);
    int n = g.add_conv2d(prefix + ".conv1", input, prefix + ".conv1.kernel", block.stride, 1);
    emit_bn(specs, prefix + ".bn1", block.out_channels);
    n = g.add_batchnorm2d(prefix + ".bn1", n, prefix + ".bn1");
    n = g.add_relu(prefix + ".relu1", n);
    emit_conv(specs, prefix + ".conv2.kernel", block.out_channels, block.out_channels, 3);
    n = g.add_conv2d(prefix + ".conv2", n, prefix + ".conv2.kernel", 1, 1);
    emit_bn(specs, prefix + ".bn2", block.out_channels);
    n = g.add_batchnorm2d(prefix + ".bn2", n, prefix + ".bn2");

    int shortcut = input;
    if (block.has_downsample) {
        emit_conv(specs, prefix + ".downsample.kernel", block.out_channels, block.in_channels, 1);
        shortcut = g.add_conv2d(prefix + ".downsample", input, prefix + ".downsample.kernel",
                                block.stride, 0);
    }
    n = g.add_add(prefix + ".add", n, shortcut);
    return g.add_relu(prefix + ".relu2", n);
}

} // namespace

BuiltNetwork build_student(const StudentNetworkSpec& spec) {
    spec.validate();
    BuiltNetwork net;
    ComputeGraph& g = net.graph;

    net.input_node = g.add_input("csi");
    int n = g.add_upsample("upsample", net.input_node, spec.upsample_h, spec.upsample_w);

    for (std::size_t i = 0; i < spec.encoder.size(); ++i) {
        const TConvLayerSpec& l = spec.encoder[i];
        const std::string name = "enc" + std::to_string(i);
        emit_tconv(net.param_specs, name + ".kernel", l.in_channels, l.out_channels, l.kernel);
        n = g.add_tconv2d(name, n, name + ".kernel", l.stride, l.pad);
        n = g.add_relu(name + ".relu", n);
    }

    for (std::size_t s = 0; s < spec.feature_stages.size(); ++s) {
        const ResidualBlockSpec& lead = spec.feature_stages[s];
        ResidualBlockSpec tail;
        tail.in_channels = lead.out_channels;
        tail.out_channels = lead.out_channels;
        tail.stride = 1;
        tail.has_downsample = false;
        const std::string stage = "stage" + std::to_string(s);
        n = append_residual_block(g, net.param_specs, n, stage + ".block0", lead);
        n = append_residual_block(g, net.param_specs, n, stage + ".block1", tail);
    }
    net.feature_node = n;

    // Decoder: first conv releases channel-wise information, second
    // reorganizes the spatial content at constant width.
    const int feat_ch = spec.feature_shape[0];
    emit_conv(net.param_specs, "decoder.conv1.kernel", spec.decoder_channels, feat_ch, 3);
    int d = g.add_conv2d("decoder.conv1", n, "decoder.conv1.kernel", 1, 1);
    emit_bn(net.param_specs, "decoder.bn1", spec.decoder_channels);
    d = g.add_batchnorm2d("decoder.bn1", d, "decoder.bn1");
    d = g.add_relu("decoder.relu1", d);
    emit_conv(net.param_specs, "decoder.conv2.kernel", spec.decoder_channels, spec.decoder_channels, 3);
    d = g.add_conv2d("decoder.conv2", d, "decoder.conv2.kernel", 1, 1);

    const int K = spec.k_keypoints;
    const int dec_size = spec.decoder_channels * spec.feature_shape[1] * spec.feature_shape[2];
    emit_affine(net.param_specs, "pam_head", 2 * K * K, dec_size);
    int p = g.add_affine("pam_head", d, "pam_head.weight", "pam_head.bias");
    net.pam_node = g.add_reshape("pam", p, {2, K, K});
    g.mark_output(net.pam_node);

    int c = g.add_global_avg_pool("cls_pool", net.feature_node);
    emit_affine(net.param_specs, "cls_head", spec.num_classes, feat_ch);
    net.logits_node = g.add_affine("logits", c, "cls_head.weight", "cls_head.bias");
    g.mark_output(net.logits_node);

    return net;
}

BuiltNetwork build_teacher(const TeacherNetworkSpec& spec) {
    spec.validate();
    BuiltNetwork net;
    ComputeGraph& g = net.graph;

    net.input_node = g.add_input("frame");
    int n = net.input_node;
    int ch = spec.frame_shape[0];
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        const std::string name = "conv" + std::to_string(i);
        emit_conv(net.param_specs, name + ".kernel", spec.conv_channels[i], ch, 3);
        n = g.add_conv2d(name, n, name + ".kernel", 2, 1);
        emit_bn(net.param_specs, "bn" + std::to_string(i), spec.conv_channels[i]);
        n = g.add_batchnorm2d("bn" + std::to_string(i), n, "bn" + std::to_string(i));
        n = g.add_relu(name + ".relu", n);
        ch = spec.conv_channels[i];
    }
    n = g.add_global_avg_pool("pool", n);
    emit_affine(net.param_specs, "head", spec.num_classes, ch);
    net.logits_node = g.add_affine("logits", n, "head.weight", "head.bias");
    g.mark_output(net.logits_node);
    return net;
}

StudentOutput student_forward(const BuiltNetwork& net, ModelParameters& params, const Tensor& csi,
                              bool train) {
    Evaluation ev = forward(net.graph, params, {{"csi", csi}}, train);
    StudentOutput out;
    out.pam.values = ev.value(net.pam_node);
    out.logits = ev.value(net.logits_node);
    return out;
}

Tensor teacher_forward(const BuiltNetwork& net, ModelParameters& params, const Tensor& frame,
                       bool train) {
    Evaluation ev = forward(net.graph, params, {{"frame", frame}}, train);
    return ev.value(net.logits_node);
}

Tensor residual_block_forward(const Tensor& x, const ResidualBlockSpec& spec,
                              ModelParameters& params, const std::string& prefix, bool train) {
    ComputeGraph g;
    std::vector<ParamSpec> unused;
    const int input = g.add_input("x");
    const int out = append_residual_block(g, unused, input, prefix, spec);
    Evaluation ev = forward(g, params, {{"x", x}}, train);
    return ev.value(out);
}

PoseAdjacencyMatrix teacher_pam_supervision(const PoseAnnotation& annotation) {
    return encode_pam(annotation);
}

// -- spec constructors -------------------------------------------------------------

namespace {

/// Kernel-3 growth plan for the eight encoder layers: d stride-2 layers
/// (2H-1 each), then m unpadded stride-1 layers (+2 each), then identity
/// layers (pad 1). The leading nearest-neighbor upsample supplies the start
/// size S0 with target = 2^d*(S0-1) + 1 + 2m. A stride-2 layer with kernel 3
/// always produces an odd size, so even targets force d = 0.
struct EncoderPlan {
    int start = 0;
    std::vector<TConvLayerSpec> layers;
};

EncoderPlan solve_encoder_plan(int in_hw, int target, int n_layers,
                               const std::vector<int>& channels, int in_channels) {
    for (int require_upsample = 1; require_upsample >= 0; --require_upsample) {
        for (int d = std::min(n_layers, 4); d >= 0; --d) {
            const int pow2 = 1 << d;
            for (int m = n_layers - d; m >= 0; --m) {
                const int num = target - 1 - 2 * m;
                if (num < 0 || num % pow2 != 0) continue;
                const int s0 = num / pow2 + 1;
                if (s0 < 2) continue;
                if (require_upsample && s0 < in_hw) continue;
                EncoderPlan plan;
                plan.start = s0;
                int ch = in_channels;
                for (int i = 0; i < n_layers; ++i) {
                    TConvLayerSpec l;
                    l.in_channels = ch;
                    l.out_channels = channels[static_cast<std::size_t>(i)];
                    l.kernel = 3;
                    if (i < d) {
                        l.stride = 2;
                        l.pad = 1;
                    } else if (i < d + m) {
                        l.stride = 1;
                        l.pad = 0;
                    } else {
                        l.stride = 1;
                        l.pad = 1;
                    }
                    ch = l.out_channels;
                    plan.layers.push_back(l);
                }
                return plan;
            }
        }
    }
    throw std::invalid_argument("solve_encoder_plan: no kernel-3 plan reaches " +
                                std::to_string(target) + " from " + std::to_string(in_hw));
}

StudentNetworkSpec make_student_spec(std::array<int, 3> csi_shape, std::vector<int> encoder_channels,
                                     int feature_channels, int feature_hw, int decoder_channels,
                                     int num_classes, int k_keypoints) {
    StudentNetworkSpec spec;
    spec.csi_shape = csi_shape;
    spec.feature_shape = {feature_channels, feature_hw, feature_hw};
    spec.decoder_channels = decoder_channels;
    spec.num_classes = num_classes;
    spec.k_keypoints = k_keypoints;

    if (csi_shape[1] != csi_shape[2]) {
        throw std::invalid_argument("make_student_spec: antenna grid must be square");
    }
    EncoderPlan plan =
        solve_encoder_plan(csi_shape[1], feature_hw, 8, encoder_channels, csi_shape[0]);
    spec.upsample_h = plan.start;
    spec.upsample_w = plan.start;
    spec.encoder = plan.layers;

    for (int s = 0; s < 4; ++s) {
        ResidualBlockSpec b;
        b.in_channels = feature_channels;
        b.out_channels = feature_channels;
        b.stride = 1;
        b.has_downsample = false;
        spec.feature_stages.push_back(b);
    }
    spec.validate();
    return spec;
}

} // namespace

StudentNetworkSpec make_student_spec_desk(int num_classes, int k_keypoints) {
    return make_student_spec({30, 3, 3}, {32, 32, 32, 48, 48, 64, 64, 64}, 64, 6, 32, num_classes,
                             k_keypoints);
}

StudentNetworkSpec make_student_spec_paper() {
    return make_student_spec({30, 3, 3}, {150, 150, 150, 200, 200, 250, 300, 300}, 300, 18, 64, 8,
                             18);
}

TeacherNetworkSpec make_teacher_spec_desk(int num_classes) {
    TeacherNetworkSpec spec;
    spec.frame_shape = {3, 32, 32};
    spec.conv_channels = {16, 32, 64};
    spec.num_classes = num_classes;
    return spec;
}

StudentNetworkSpec student_spec_from_config(const Config& cfg) {
    const int k = cfg.get_int("synth.k", 4);
    const int classes = cfg.get_int("synth.num_classes", 8);
    std::array<int, 3> csi{cfg.get_int("synth.csi_s", 30), cfg.get_int("synth.csi_tx", 3),
                           cfg.get_int("synth.csi_rx", 3)};
    std::vector<int> enc =
        cfg.get_int_list("student.encoder_channels", {32, 32, 32, 48, 48, 64, 64, 64});
    if (enc.size() != 8) {
        throw ConfigError("student.encoder_channels must list exactly 8 values");
    }
    const int feat_ch = cfg.get_int("student.feature_channels", 64);
    const int feat_hw = cfg.get_int("student.feature_h", 6);
    if (cfg.get_int("student.feature_w", feat_hw) != feat_hw) {
        throw ConfigError("student.feature_w must equal student.feature_h");
    }
    const int dec_ch = cfg.get_int("student.decoder_channels", 32);
    return make_student_spec(csi, enc, feat_ch, feat_hw, dec_ch, classes, k);
}

TeacherNetworkSpec teacher_spec_from_config(const Config& cfg) {
    TeacherNetworkSpec spec;
    spec.frame_shape = {3, cfg.get_int("synth.frame_h", 32), cfg.get_int("synth.frame_w", 32)};
    spec.conv_channels = cfg.get_int_list("teacher.channels", {16, 32, 64});
    spec.num_classes = cfg.get_int("synth.num_classes", 8);
    spec.validate();
    return spec;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

} // namespace

void student_spec_to_config(const StudentNetworkSpec& spec, Config& cfg) {
    cfg.set("synth.k", std::to_string(spec.k_keypoints));
    cfg.set("synth.num_classes", std::to_string(spec.num_classes));
    cfg.set("synth.csi_s", std::to_string(spec.csi_shape[0]));
    cfg.set("synth.csi_tx", std::to_string(spec.csi_shape[1]));
    cfg.set("synth.csi_rx", std::to_string(spec.csi_shape[2]));
    std::vector<int> enc;
    for (const auto& l : spec.encoder) enc.push_back(l.out_channels);
    cfg.set("student.encoder_channels", join_ints(enc));
    cfg.set("student.feature_channels", std::to_string(spec.feature_shape[0]));
    cfg.set("student.feature_h", std::to_string(spec.feature_shape[1]));
    cfg.set("student.feature_w", std::to_string(spec.feature_shape[2]));
    cfg.set("student.decoder_channels", std::to_string(spec.decoder_channels));
}

void teacher_spec_to_config(const TeacherNetworkSpec& spec, Config& cfg) {
    cfg.set("synth.frame_h", std::to_string(spec.frame_shape[1]));
    cfg.set("synth.frame_w", std::to_string(spec.frame_shape[2]));
    cfg.set("teacher.channels", join_ints(spec.conv_channels));
    cfg.set("synth.num_classes", std::to_string(spec.num_classes));
}

} // namespace ckd
