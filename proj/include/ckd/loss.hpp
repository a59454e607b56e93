#pragma once

#include <cstdint>
#include <string>

#include "ckd/tensor.hpp"

namespace ckd {

/// Correlated knowledge distillation loss: the class-probability
/// decompositions, the normalized squared error between log-probability
/// vectors, and the two-component loss (binary teacher-class term plus
/// target-excluded student-class term) with analytic gradients with respect
/// to the student logits. Teacher logits are always treated as constants.

enum class WeightMode { Adaptive, FixedBeta };
enum class TempScaleMode { Squared, LiteralTimes4 };

struct CkdConfig {
    double temperature = 4.0;
    double alpha = 1.0;            // multiplies the binary term in fixed-weight mode
    double beta = 8.0;             // fixed weight of the masked term
    WeightMode weight_mode = WeightMode::Adaptive;
    int warmup_epochs = 5;
    double ce_weight = 1.0;
    TempScaleMode temp_scale_mode = TempScaleMode::Squared;

    void validate() const;
    double temp_scale() const;
};

WeightMode weight_mode_from_string(const std::string& s);
std::string to_string(WeightMode m);
TempScaleMode temp_scale_mode_from_string(const std::string& s);
std::string to_string(TempScaleMode m);

struct BinaryProbabilities {
    double p_r = 0.0;   // relevant-class mass
    double p_nr = 0.0;  // everything else
};

struct MaskedProbabilities {
    Tensor p_hat;            // length N-1, renormalized without the relevant class
    int excluded_index = 0;
};

/// Temperature softmax, p_i = exp(l_i/T) / sum_j exp(l_j/T), max-subtracted.
Tensor softmax_probs(const Tensor& logits, double temperature);

BinaryProbabilities binary_probs(const Tensor& probs, int relevant);

MaskedProbabilities masked_probs(const Tensor& logits, int relevant, double temperature);

/// Mean squared difference of log probabilities, ||log p1 - log p2||^2 / N.
double nse(const Tensor& p1, const Tensor& p2);

double tkd_loss(const Tensor& student, const Tensor& teacher, int target, const CkdConfig& cfg);

double skd_loss(const Tensor& student, const Tensor& teacher, int target, const CkdConfig& cfg);

struct CkdLossValue {
    double total = 0.0;
    double tkd = 0.0;     // includes the alpha factor in fixed-weight mode
    double skd = 0.0;
    double weight = 0.0;  // 1 - p_r of the teacher (adaptive) or beta (fixed)
};

/// total = tkd + weight * skd, exactly as recomposable from the parts.
CkdLossValue ckd_loss(const Tensor& student, const Tensor& teacher, int target,
                      const CkdConfig& cfg);

/// Negative log softmax probability of the target class at temperature 1.
double cross_entropy(const Tensor& logits, int target);
Tensor cross_entropy_grad(const Tensor& logits, int target);

/// min(epoch / warmup, 1).
double warmup_ramp(int epoch, int warmup_epochs);

/// ce_weight * CE + warmup_ramp(epoch) * ckd_loss(...).total.
double total_training_loss(const Tensor& student, const Tensor& teacher, int target, int epoch,
                           const CkdConfig& cfg);

/// d(ckd_loss(...).total) / d(student logits).
Tensor ckd_loss_grad(const Tensor& student, const Tensor& teacher, int target,
                     const CkdConfig& cfg);

/// Probabilities are floored at 1e-300 before any log; floor hits are counted
/// here for run diagnostics.
std::int64_t log_clamp_count();
void reset_log_clamp_count();

} // namespace ckd
