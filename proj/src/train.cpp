#include "ckd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ckd/errors.hpp"

namespace ckd {

// -- Adam -----------------------------------------------------------------

AdamState make_adam_state(const ModelParameters& params, double lr) {
    AdamState st;
    st.lr = lr;
    for (const auto& name : params.trainable_names()) {
        st.m.emplace(name, Tensor::zeros_like(params.at(name)));
        st.v.emplace(name, Tensor::zeros_like(params.at(name)));
    }
    return st;
}

void adam_step(ModelParameters& params, const GradientMap& grads, AdamState& state) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (const auto& name : params.trainable_names()) {
        auto git = grads.params.find(name);
        if (git == grads.params.end()) {
            throw std::invalid_argument("adam_step: gradient map lacks parameter '" + name + "'");
        }
        Tensor& p = params.at(name);
        const Tensor& g = git->second;
        if (!p.same_shape(g)) {
            throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
        }
        Tensor& m = state.m.at(name);
        Tensor& v = state.v.at(name);
        for (std::int64_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

double lr_at_epoch(const LrSchedule& schedule, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at_epoch: epoch must be >= 0");
    int hits = 0;
    for (int m : schedule.milestones) {
        if (m <= epoch) ++hits;
    }
    return schedule.initial_lr * std::pow(schedule.gamma, static_cast<double>(hits));
}

// -- config plumbing ----------------------------------------------------------

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.get_int("train.epochs", 20);
    tc.batch_size = cfg.get_int("train.batch_size", 32);
    tc.schedule.initial_lr = cfg.get_double("train.lr", 0.001);
    tc.schedule.milestones = cfg.get_int_list("train.milestones", {7, 10, 18});
    tc.schedule.gamma = cfg.get_double("train.gamma", 0.5);
    tc.lambda_pam = cfg.get_double("train.lambda_pam", 1.0);
    tc.ckd_scale = cfg.get_double("distill.ckd_scale", 1.0);
    tc.seed = static_cast<std::uint64_t>(cfg.get_int64("seed", 42));

    tc.ckd.temperature = cfg.get_double("ckd.temperature", 4.0);
    tc.ckd.alpha = cfg.get_double("ckd.alpha", 1.0);
    tc.ckd.beta = cfg.get_double("ckd.beta", 8.0);
    tc.ckd.weight_mode = weight_mode_from_string(cfg.get_string("ckd.weight_mode", "adaptive"));
    tc.ckd.warmup_epochs = cfg.get_int("ckd.warmup_epochs", 5);
    tc.ckd.ce_weight = cfg.get_double("ckd.ce_weight", 1.0);
    tc.ckd.temp_scale_mode =
        temp_scale_mode_from_string(cfg.get_string("ckd.temp_scale_mode", "squared"));

    if (tc.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (tc.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(tc.schedule.gamma > 0.0 && tc.schedule.gamma <= 1.0)) {
        throw ConfigError("train.gamma must be in (0,1]");
    }
    for (std::size_t i = 1; i < tc.schedule.milestones.size(); ++i) {
        if (tc.schedule.milestones[i] <= tc.schedule.milestones[i - 1]) {
            throw ConfigError("train.milestones must be strictly increasing");
        }
    }
    if (tc.lambda_pam < 0.0) throw ConfigError("train.lambda_pam must be >= 0");
    tc.ckd.validate();
    return tc;
}

void train_config_to(const TrainConfig& tc, Config& cfg) {
    cfg.set("train.epochs", std::to_string(tc.epochs));
    cfg.set("train.batch_size", std::to_string(tc.batch_size));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", tc.schedule.initial_lr);
    cfg.set("train.lr", buf);
    std::string ms;
    for (std::size_t i = 0; i < tc.schedule.milestones.size(); ++i) {
        if (i) ms += ",";
        ms += std::to_string(tc.schedule.milestones[i]);
    }
    cfg.set("train.milestones", ms);
    std::snprintf(buf, sizeof(buf), "%.17g", tc.schedule.gamma);
    cfg.set("train.gamma", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", tc.lambda_pam);
    cfg.set("train.lambda_pam", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", tc.ckd_scale);
    cfg.set("distill.ckd_scale", buf);
    cfg.set("seed", std::to_string(tc.seed));
    std::snprintf(buf, sizeof(buf), "%.17g", tc.ckd.temperature);
    cfg.set("ckd.temperature", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", tc.ckd.alpha);
    cfg.set("ckd.alpha", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", tc.ckd.beta);
    cfg.set("ckd.beta", buf);
    cfg.set("ckd.weight_mode", to_string(tc.ckd.weight_mode));
    cfg.set("ckd.warmup_epochs", std::to_string(tc.ckd.warmup_epochs));
    std::snprintf(buf, sizeof(buf), "%.17g", tc.ckd.ce_weight);
    cfg.set("ckd.ce_weight", buf);
    cfg.set("ckd.temp_scale_mode", to_string(tc.ckd.temp_scale_mode));
}

// -- checkpoint IO ---------------------------------------------------------------

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(buf, 8);
}

void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

void put_string(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}

void put_tensor(std::string& out, const Tensor& t) {
    put_u64(out, static_cast<std::uint64_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(out, static_cast<std::uint64_t>(t.dim(i)));
    put_bytes(out, t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        }
        pos += 8;
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        const std::uint64_t rank = u64();
        if (rank > 8) throw DataError("checkpoint: implausible tensor rank");
        std::vector<int> shape;
        for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(u64()));
        Tensor t(shape);
        const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(double);
        need(bytes);
        std::memcpy(t.data(), buf.data() + pos, bytes);
        pos += bytes;
        return t;
    }
};

void put_params(std::string& out, const ModelParameters& params) {
    put_u64(out, params.names.size());
    for (const auto& name : params.names) {
        put_string(out, name);
        out.push_back(params.is_trainable(name) ? 1 : 0);
        put_tensor(out, params.at(name));
    }
}

ModelParameters read_params(Reader& r) {
    ModelParameters params;
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        r.need(1);
        const bool trainable = r.buf[r.pos++] != 0;
        params.add(name, r.tensor(), trainable);
    }
    return params;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out;
    out += "CKD1";
    out.push_back(ckpt.kind == NetworkKind::Teacher ? 'T' : 'S');
    put_string(out, ckpt.spec_config.render());
    put_params(out, ckpt.params);

    put_u64(out, ckpt.adam.m.size());
    for (const auto& [name, m] : ckpt.adam.m) {
        put_string(out, name);
        put_tensor(out, m);
        put_tensor(out, ckpt.adam.v.at(name));
    }
    put_u64(out, static_cast<std::uint64_t>(ckpt.adam.t));
    put_bytes(out, &ckpt.adam.lr, sizeof(double));
    put_u64(out, static_cast<std::uint64_t>(ckpt.epoch));

    put_u64(out, ckpt.history.size());
    for (const auto& row : ckpt.history) {
        put_u64(out, static_cast<std::uint64_t>(row.epoch));
        put_u64(out, static_cast<std::uint64_t>(row.batch));
        const double vals[7] = {row.ce,        row.tkd,     row.skd,  row.ckd_weight,
                                row.ckd_total, row.pam_mse, row.total};
        put_bytes(out, vals, sizeof(vals));
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("save_checkpoint: cannot open '" + tmp + "'");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw DataError("save_checkpoint: write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 5 || buf.compare(0, 4, "CKD1") != 0) {
        throw DataError("load_checkpoint: '" + path + "' is not a CKD1 checkpoint");
    }
    Checkpoint ckpt;
    ckpt.kind = buf[4] == 'T' ? NetworkKind::Teacher : NetworkKind::Student;
    Reader r{buf, 5};
    ckpt.spec_config = Config::parse_text(r.str());
    ckpt.params = read_params(r);

    const std::uint64_t n_adam = r.u64();
    for (std::uint64_t i = 0; i < n_adam; ++i) {
        std::string name = r.str();
        Tensor m = r.tensor();
        Tensor v = r.tensor();
        ckpt.adam.m.emplace(name, std::move(m));
        ckpt.adam.v.emplace(name, std::move(v));
    }
    ckpt.adam.t = static_cast<std::int64_t>(r.u64());
    r.need(sizeof(double));
    std::memcpy(&ckpt.adam.lr, buf.data() + r.pos, sizeof(double));
    r.pos += sizeof(double);
    ckpt.epoch = static_cast<int>(r.u64());

    const std::uint64_t n_rows = r.u64();
    for (std::uint64_t i = 0; i < n_rows; ++i) {
        LossRow row;
        row.epoch = static_cast<int>(r.u64());
        row.batch = static_cast<int>(r.u64());
        double vals[7];
        r.need(sizeof(vals));
        std::memcpy(vals, buf.data() + r.pos, sizeof(vals));
        r.pos += sizeof(vals);
        row.ce = vals[0];
        row.tkd = vals[1];
        row.skd = vals[2];
        row.ckd_weight = vals[3];
        row.ckd_total = vals[4];
        row.pam_mse = vals[5];
        row.total = vals[6];
        ckpt.history.push_back(row);
    }
    if (r.pos != buf.size()) throw DataError("load_checkpoint: trailing bytes in '" + path + "'");
    return ckpt;
}

// -- dataset view ------------------------------------------------------------------

TrainingSet make_training_set(const std::vector<FrameRecord>& frames,
                              const std::vector<CsiSample>& csi,
                              const std::vector<SyncedPair>& pairs,
                              const std::vector<int>& pair_ids) {
    // Normalization statistics come from the full synchronized dataset so the
    // train and test views share the same scaling.
    std::vector<CsiSample> paired_csi;
    paired_csi.reserve(pairs.size());
    for (const auto& p : pairs) paired_csi.push_back(csi.at(static_cast<std::size_t>(p.csi_id)));
    std::vector<Tensor> normalized = magnitude_normalize(paired_csi);

    TrainingSet set;
    for (int id : pair_ids) {
        const SyncedPair& p = pairs.at(static_cast<std::size_t>(id));
        const FrameRecord& fr = frames.at(static_cast<std::size_t>(p.frame_id));
        if (!fr.class_label) throw DataError("make_training_set: frame lacks a class label");
        if (!fr.pose) throw DataError("make_training_set: frame lacks a pose annotation");
        set.frames.push_back(&fr);
        set.csi.push_back(normalized.at(static_cast<std::size_t>(id)));
        set.labels.push_back(*fr.class_label);
        set.pam_targets.push_back(teacher_pam_supervision(*fr.pose));
    }
    return set;
}

// -- teacher training -----------------------------------------------------------------

TeacherTrainResult train_teacher(const TrainingSet& data, const TeacherNetworkSpec& spec,
                                 const TrainConfig& cfg) {
    if (data.frames.empty()) throw DataError("train_teacher: empty dataset");
    BuiltNetwork net = build_teacher(spec);
    Rng rng = Rng(cfg.seed).child("init/teacher");
    ModelParameters params = init_params(net.param_specs, rng);
    AdamState adam = make_adam_state(params, cfg.schedule.initial_lr);
    Rng order_rng = Rng(cfg.seed).child("teacher/order");

    TeacherTrainResult result;
    const int n = static_cast<int>(data.frames.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.lr = lr_at_epoch(cfg.schedule, epoch);
        order_rng.shuffle(order);
        double ce_sum = 0.0;
        int correct = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int stop = std::min(n, start + cfg.batch_size);
            GradientMap batch_grads;
            for (const auto& name : params.trainable_names()) {
                batch_grads.params.emplace(name, Tensor::zeros_like(params.at(name)));
            }
            for (int i = start; i < stop; ++i) {
                const int id = order[static_cast<std::size_t>(i)];
                const FrameRecord& fr = *data.frames[static_cast<std::size_t>(id)];
                const int label = data.labels[static_cast<std::size_t>(id)];
                Evaluation ev = forward(net.graph, params, {{"frame", fr.frame}}, true);
                const Tensor& logits = ev.value(net.logits_node);
                ce_sum += cross_entropy(logits, label);
                int argmax = 0;
                for (std::int64_t c = 1; c < logits.size(); ++c) {
                    if (logits[c] > logits[argmax]) argmax = static_cast<int>(c);
                }
                if (argmax == label) ++correct;
                GradientMap g = backward(net.graph, params, ev,
                                         {{net.logits_node, cross_entropy_grad(logits, label)}});
                batch_grads += g;
            }
            batch_grads.scale(1.0 / static_cast<double>(stop - start));
            adam_step(params, batch_grads, adam);
        }
        result.epoch_ce.push_back(ce_sum / n);
        result.epoch_accuracy.push_back(static_cast<double>(correct) / n);
    }

    Checkpoint ckpt;
    ckpt.kind = NetworkKind::Teacher;
    teacher_spec_to_config(spec, ckpt.spec_config);
    train_config_to(cfg, ckpt.spec_config);
    ckpt.params = std::move(params);
    ckpt.adam = std::move(adam);
    ckpt.epoch = cfg.epochs;
    for (std::size_t e = 0; e < result.epoch_ce.size(); ++e) {
        LossRow row;
        row.epoch = static_cast<int>(e);
        row.batch = -1; // epoch summary rows for the teacher
        row.ce = result.epoch_ce[e];
        row.total = result.epoch_ce[e];
        ckpt.history.push_back(row);
    }
    result.checkpoint = std::move(ckpt);
    return result;
}

// -- distillation -----------------------------------------------------------------------

DistillResult distill_student(const TrainingSet& data, const Checkpoint& teacher_ckpt,
                              const StudentNetworkSpec& student_spec, const TrainConfig& cfg) {
    if (data.frames.empty()) throw DataError("distill_student: empty dataset");
    if (teacher_ckpt.kind != NetworkKind::Teacher) {
        throw DataError("distill_student: checkpoint is not a teacher checkpoint");
    }
    TeacherNetworkSpec teacher_spec = teacher_spec_from_config(teacher_ckpt.spec_config);
    if (teacher_spec.num_classes != student_spec.num_classes) {
        throw DataError("distill_student: teacher has " + std::to_string(teacher_spec.num_classes) +
                        " classes, student expects " + std::to_string(student_spec.num_classes));
    }
    BuiltNetwork teacher = build_teacher(teacher_spec);
    ModelParameters teacher_params = teacher_ckpt.params; // frozen: evaluated, never updated

    BuiltNetwork student = build_student(student_spec);
    Rng rng = Rng(cfg.seed).child("init/student");
    ModelParameters params = init_params(student.param_specs, rng);
    AdamState adam = make_adam_state(params, cfg.schedule.initial_lr);
    Rng order_rng = Rng(cfg.seed).child("distill/order");

    const int n = static_cast<int>(data.frames.size());
    const int K = student_spec.k_keypoints;
    const std::int64_t pam_numel = static_cast<std::int64_t>(2) * K * K;
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    DistillResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.lr = lr_at_epoch(cfg.schedule, epoch);
        const double ramp = warmup_ramp(epoch, cfg.ckd.warmup_epochs);
        order_rng.shuffle(order);
        int batch_no = 0;
        for (int start = 0; start < n; start += cfg.batch_size, ++batch_no) {
            const int stop = std::min(n, start + cfg.batch_size);
            const int bsz = stop - start;
            GradientMap batch_grads;
            for (const auto& name : params.trainable_names()) {
                batch_grads.params.emplace(name, Tensor::zeros_like(params.at(name)));
            }
            double ce_sum = 0.0, tkd_sum = 0.0, skd_sum = 0.0, wskd_sum = 0.0, pam_sum = 0.0;
            for (int i = start; i < stop; ++i) {
                const int id = order[static_cast<std::size_t>(i)];
                const FrameRecord& fr = *data.frames[static_cast<std::size_t>(id)];
                const int label = data.labels[static_cast<std::size_t>(id)];

                const Tensor teacher_logits =
                    teacher_forward(teacher, teacher_params, fr.frame, /*train=*/false);

                Evaluation ev =
                    forward(student.graph, params, {{"csi", data.csi[static_cast<std::size_t>(id)]}},
                            /*train=*/true);
                const Tensor& logits = ev.value(student.logits_node);
                const Tensor& pam_pred = ev.value(student.pam_node);
                const Tensor& pam_target = data.pam_targets[static_cast<std::size_t>(id)].values;

                // Loss pieces.
                const double ce = cross_entropy(logits, label);
                const CkdLossValue ckd = ckd_loss(logits, teacher_logits, label, cfg.ckd);
                double mse = 0.0;
                Tensor pam_seed({2, K, K});
                for (std::int64_t e2 = 0; e2 < pam_numel; ++e2) {
                    const double d = pam_pred[e2] - pam_target[e2];
                    mse += d * d;
                    pam_seed[e2] = cfg.lambda_pam * 2.0 * d / static_cast<double>(pam_numel);
                }
                mse /= static_cast<double>(pam_numel);

                ce_sum += ce;
                tkd_sum += ckd.tkd;
                skd_sum += ckd.skd;
                wskd_sum += ckd.weight * ckd.skd;
                pam_sum += mse;

                // Seeds: d(total)/d(logits) and d(total)/d(pam prediction).
                Tensor logit_seed = cross_entropy_grad(logits, label);
                logit_seed *= cfg.ckd.ce_weight;
                if (cfg.ckd_scale != 0.0 && ramp > 0.0) {
                    Tensor g = ckd_loss_grad(logits, teacher_logits, label, cfg.ckd);
                    g *= ramp * cfg.ckd_scale;
                    logit_seed += g;
                }
                GradientMap g = backward(student.graph, params, ev,
                                         {{student.logits_node, logit_seed},
                                          {student.pam_node, pam_seed}});
                batch_grads += g;
            }
            batch_grads.scale(1.0 / static_cast<double>(bsz));
            adam_step(params, batch_grads, adam);

            // Batch means; the logged ckd_total and total columns are defined
            // as their recompositions from the logged components.
            LossRow row;
            row.epoch = epoch;
            row.batch = batch_no;
            row.ce = ce_sum / bsz;
            row.tkd = tkd_sum / bsz;
            row.skd = skd_sum / bsz;
            row.ckd_weight = row.skd > 0.0 ? (wskd_sum / bsz) / row.skd
                                           : (cfg.ckd.weight_mode == WeightMode::FixedBeta
                                                  ? cfg.ckd.beta
                                                  : 0.0);
            row.ckd_total = row.tkd + row.ckd_weight * row.skd;
            row.pam_mse = pam_sum / bsz;
            row.total = cfg.ckd.ce_weight * row.ce + ramp * cfg.ckd_scale * row.ckd_total +
                        cfg.lambda_pam * row.pam_mse;
            result.curves.push_back(row);
        }
    }

    Checkpoint ckpt;
    ckpt.kind = NetworkKind::Student;
    student_spec_to_config(student_spec, ckpt.spec_config);
    train_config_to(cfg, ckpt.spec_config);
    ckpt.params = std::move(params);
    ckpt.adam = std::move(adam);
    ckpt.epoch = cfg.epochs;
    ckpt.history = result.curves;
    result.checkpoint = std::move(ckpt);
    return result;
}

} // namespace ckd
