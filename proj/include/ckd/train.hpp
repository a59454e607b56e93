#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ckd/config.hpp"
#include "ckd/data.hpp"
#include "ckd/graph.hpp"
#include "ckd/loss.hpp"
#include "ckd/networks.hpp"

namespace ckd {

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 0.001;
};

AdamState make_adam_state(const ModelParameters& params, double lr);

/// Standard bias-corrected Adam update over every trainable parameter;
/// t increments once per call.
void adam_step(ModelParameters& params, const GradientMap& grads, AdamState& state);

struct LrSchedule {
    double initial_lr = 0.001;
    std::vector<int> milestones{7, 10, 18}; // strictly increasing
    double gamma = 0.5;
};

/// initial_lr * gamma^(number of milestones <= epoch).
double lr_at_epoch(const LrSchedule& schedule, int epoch);

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    LrSchedule schedule;
    CkdConfig ckd;
    double lambda_pam = 1.0;
    double ckd_scale = 1.0;  // 0 disables distillation (baseline arm)
    std::uint64_t seed = 42;
};

TrainConfig train_config_from(const Config& cfg);
void train_config_to(const TrainConfig& tc, Config& cfg);

/// One per-batch curve row; column order matches the CSV contract
/// epoch,batch,ce,tkd,skd,ckd_weight,ckd_total,pam_mse,total.
struct LossRow {
    int epoch = 0;
    int batch = 0;
    double ce = 0.0;
    double tkd = 0.0;
    double skd = 0.0;
    double ckd_weight = 0.0;
    double ckd_total = 0.0;
    double pam_mse = 0.0;
    double total = 0.0;
};

enum class NetworkKind { Teacher, Student };

struct Checkpoint {
    std::string version = "CKD1";
    NetworkKind kind = NetworkKind::Teacher;
    Config spec_config;       // everything needed to rebuild the network spec
    ModelParameters params;
    AdamState adam;
    int epoch = 0;
    std::vector<LossRow> history;
};

/// Versioned binary: magic "CKD1", then length-prefixed sections (spec as
/// config text, named parameter tensors, optimizer state, history). Writes
/// are atomic (temp file + rename). Round-trips bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// A dataset view the training loops consume: synchronized, normalized,
/// with per-pair teacher-side annotations.
struct TrainingSet {
    std::vector<const FrameRecord*> frames;  // per pair
    std::vector<Tensor> csi;                 // per pair, magnitude-normalized
    std::vector<int> labels;                 // per pair
    std::vector<PoseAdjacencyMatrix> pam_targets;
};

TrainingSet make_training_set(const std::vector<FrameRecord>& frames,
                              const std::vector<CsiSample>& csi,
                              const std::vector<SyncedPair>& pairs,
                              const std::vector<int>& pair_ids);

struct TeacherTrainResult {
    Checkpoint checkpoint;
    std::vector<double> epoch_ce;
    std::vector<double> epoch_accuracy;
};

TeacherTrainResult train_teacher(const TrainingSet& data, const TeacherNetworkSpec& spec,
                                 const TrainConfig& cfg);

struct DistillResult {
    Checkpoint checkpoint;
    std::vector<LossRow> curves;  // per batch
};

/// Algorithm wiring: teacher logits from the frame with no gradient, student
/// forward on CSI, loss = ce_weight*CE + ramp*ckd_scale*CKD(logits) +
/// lambda_pam*MSE(predicted PAM, supervision PAM), one Adam step per batch.
DistillResult distill_student(const TrainingSet& data, const Checkpoint& teacher_ckpt,
                              const StudentNetworkSpec& student_spec, const TrainConfig& cfg);

} // namespace ckd
