#include "ckd/loss.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ckd {

namespace {

std::atomic<std::int64_t> g_clamp_count{0};

double safe_log(double p) {
    if (p < 1e-300) {
        g_clamp_count.fetch_add(1, std::memory_order_relaxed);
        p = 1e-300;
    }
    return std::log(p);
}

void require_logits(const Tensor& logits, const char* what) {
    if (logits.rank() != 1 || logits.size() < 2) {
        throw std::invalid_argument(std::string(what) + ": logits must be a vector of length >= 2, got " +
                                    logits.shape_str());
    }
    logits.require_finite(what);
}

void require_target(const Tensor& logits, int target, const char* what) {
    if (target < 0 || target >= logits.size()) {
        throw std::out_of_range(std::string(what) + ": class index " + std::to_string(target) +
                                " out of range for " + std::to_string(logits.size()) + " classes");
    }
}

} // namespace

std::int64_t log_clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }
void reset_log_clamp_count() { g_clamp_count.store(0, std::memory_order_relaxed); }

void CkdConfig::validate() const {
    if (temperature <= 0.0) throw std::invalid_argument("CkdConfig: temperature must be > 0");
    if (warmup_epochs < 1) throw std::invalid_argument("CkdConfig: warmup_epochs must be >= 1");
    if (ce_weight < 0.0) throw std::invalid_argument("CkdConfig: ce_weight must be >= 0");
}

double CkdConfig::temp_scale() const {
    return temp_scale_mode == TempScaleMode::Squared ? temperature * temperature
                                                     : 4.0 * temperature;
}

WeightMode weight_mode_from_string(const std::string& s) {
    if (s == "adaptive") return WeightMode::Adaptive;
    if (s == "fixed_beta") return WeightMode::FixedBeta;
    throw std::invalid_argument("unknown weight mode '" + s + "' (expected adaptive|fixed_beta)");
}

std::string to_string(WeightMode m) {
    return m == WeightMode::Adaptive ? "adaptive" : "fixed_beta";
}

TempScaleMode temp_scale_mode_from_string(const std::string& s) {
    if (s == "squared") return TempScaleMode::Squared;
    if (s == "literal_times4") return TempScaleMode::LiteralTimes4;
    throw std::invalid_argument("unknown temp scale mode '" + s + "' (expected squared|literal_times4)");
}

std::string to_string(TempScaleMode m) {
    return m == TempScaleMode::Squared ? "squared" : "literal_times4";
}

Tensor softmax_probs(const Tensor& logits, double temperature) {
    require_logits(logits, "softmax_probs");
    if (temperature <= 0.0) throw std::invalid_argument("softmax_probs: temperature must be > 0");
    const std::int64_t n = logits.size();
    Tensor p({static_cast<int>(n)});
    double max_l = logits[0];
    for (std::int64_t i = 1; i < n; ++i) max_l = std::max(max_l, logits[i]);
    double z = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        p[i] = std::exp((logits[i] - max_l) / temperature);
        z += p[i];
    }
    for (std::int64_t i = 0; i < n; ++i) p[i] /= z;
    return p;
}

BinaryProbabilities binary_probs(const Tensor& probs, int relevant) {
    require_target(probs, relevant, "binary_probs");
    BinaryProbabilities b;
    b.p_r = probs[relevant];
    double rest = 0.0;
    for (std::int64_t i = 0; i < probs.size(); ++i) {
        if (i != relevant) rest += probs[i];
    }
    b.p_nr = rest;
    return b;
}

MaskedProbabilities masked_probs(const Tensor& logits, int relevant, double temperature) {
    require_logits(logits, "masked_probs");
    require_target(logits, relevant, "masked_probs");
    const std::int64_t n = logits.size();
    MaskedProbabilities m;
    m.excluded_index = relevant;
    m.p_hat = Tensor({static_cast<int>(n - 1)});

    double max_l = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < n; ++i) {
        if (i != relevant) max_l = std::max(max_l, logits[i]);
    }
    double z = 0.0;
    std::int64_t j = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (i == relevant) continue;
        m.p_hat[j] = std::exp((logits[i] - max_l) / temperature);
        z += m.p_hat[j];
        ++j;
    }
    for (std::int64_t k = 0; k < n - 1; ++k) m.p_hat[k] /= z;
    return m;
}

double nse(const Tensor& p1, const Tensor& p2) {
    if (p1.size() != p2.size()) {
        throw std::invalid_argument("nse: length mismatch " + p1.shape_str() + " vs " + p2.shape_str());
    }
    const std::int64_t n = p1.size();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (p1[i] <= 0.0 || p2[i] <= 0.0) {
            throw std::domain_error("nse: probabilities must be strictly positive");
        }
        const double d = safe_log(p1[i]) - safe_log(p2[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

namespace {

double nse_binary(const BinaryProbabilities& a, const BinaryProbabilities& b) {
    const double d0 = safe_log(a.p_r) - safe_log(b.p_r);
    const double d1 = safe_log(a.p_nr) - safe_log(b.p_nr);
    return (d0 * d0 + d1 * d1) / 2.0;
}

} // namespace

double tkd_loss(const Tensor& student, const Tensor& teacher, int target, const CkdConfig& cfg) {
    if (student.size() != teacher.size()) {
        throw std::invalid_argument("tkd_loss: class count mismatch");
    }
    const BinaryProbabilities s = binary_probs(softmax_probs(student, cfg.temperature), target);
    const BinaryProbabilities t = binary_probs(softmax_probs(teacher, cfg.temperature), target);
    return cfg.temp_scale() * nse_binary(s, t);
}

double skd_loss(const Tensor& student, const Tensor& teacher, int target, const CkdConfig& cfg) {
    if (student.size() != teacher.size()) {
        throw std::invalid_argument("skd_loss: class count mismatch");
    }
    if (student.size() < 3) {
        throw std::invalid_argument("skd_loss: needs at least 3 classes for a nontrivial masked term");
    }
    const MaskedProbabilities s = masked_probs(student, target, cfg.temperature);
    const MaskedProbabilities t = masked_probs(teacher, target, cfg.temperature);
    return cfg.temp_scale() * nse(s.p_hat, t.p_hat);
}

CkdLossValue ckd_loss(const Tensor& student, const Tensor& teacher, int target,
                      const CkdConfig& cfg) {
    cfg.validate();
    CkdLossValue v;
    const double tkd_raw = tkd_loss(student, teacher, target, cfg);
    v.skd = skd_loss(student, teacher, target, cfg);
    if (cfg.weight_mode == WeightMode::Adaptive) {
        const BinaryProbabilities t = binary_probs(softmax_probs(teacher, cfg.temperature), target);
        v.weight = 1.0 - t.p_r;
        v.tkd = tkd_raw;
    } else {
        v.weight = cfg.beta;
        v.tkd = cfg.alpha * tkd_raw;
    }
    v.total = v.tkd + v.weight * v.skd;
    return v;
}

double cross_entropy(const Tensor& logits, int target) {
    require_logits(logits, "cross_entropy");
    require_target(logits, target, "cross_entropy");
    const Tensor p = softmax_probs(logits, 1.0);
    return -safe_log(p[target]);
}

Tensor cross_entropy_grad(const Tensor& logits, int target) {
    Tensor g = softmax_probs(logits, 1.0);
    g[target] -= 1.0;
    return g;
}

double warmup_ramp(int epoch, int warmup_epochs) {
    if (epoch < 0) throw std::invalid_argument("warmup_ramp: epoch must be >= 0");
    if (warmup_epochs < 1) throw std::invalid_argument("warmup_ramp: warmup must be >= 1");
    return std::min(static_cast<double>(epoch) / static_cast<double>(warmup_epochs), 1.0);
}

double total_training_loss(const Tensor& student, const Tensor& teacher, int target, int epoch,
                           const CkdConfig& cfg) {
    const double ce = cross_entropy(student, target);
    const double ramp = warmup_ramp(epoch, cfg.warmup_epochs);
    return cfg.ce_weight * ce + ramp * ckd_loss(student, teacher, target, cfg).total;
}

Tensor ckd_loss_grad(const Tensor& student, const Tensor& teacher, int target,
                     const CkdConfig& cfg) {
    cfg.validate();
    if (student.size() != teacher.size()) {
        throw std::invalid_argument("ckd_loss_grad: class count mismatch");
    }
    const std::int64_t n = student.size();
    const double T = cfg.temperature;
    const double scale = cfg.temp_scale();

    const Tensor q = softmax_probs(student, T);      // student full distribution
    const Tensor qt = softmax_probs(teacher, T);     // teacher full distribution
    const BinaryProbabilities sb = binary_probs(q, target);
    const BinaryProbabilities tb = binary_probs(qt, target);
    const MaskedProbabilities sm = masked_probs(student, target, T);
    const MaskedProbabilities tm = masked_probs(teacher, target, T);

    const double alpha_eff = cfg.weight_mode == WeightMode::FixedBeta ? cfg.alpha : 1.0;
    const double weight =
        cfg.weight_mode == WeightMode::FixedBeta ? cfg.beta : 1.0 - tb.p_r;

    Tensor grad({static_cast<int>(n)});

    // Binary term: d nse2 / d p_r times d p_r / d s_i, with p_nr = 1 - p_r.
    {
        const double dl_dpr = (safe_log(sb.p_r) - safe_log(tb.p_r)) / sb.p_r -
                              (safe_log(sb.p_nr) - safe_log(tb.p_nr)) / sb.p_nr;
        const double coeff = alpha_eff * scale * dl_dpr;
        for (std::int64_t i = 0; i < n; ++i) {
            const double ind = (i == target) ? 1.0 : 0.0;
            grad[i] += coeff * sb.p_r * (ind - q[i]) / T;
        }
    }

    // Masked term: softmax over the non-target classes only; the target logit
    // does not enter (exact exclusion).
    {
        const std::int64_t m = n - 1;
        double weighted_sum = 0.0;  // sum_i (log m_i - log u_i)
        std::vector<double> diff(static_cast<std::size_t>(m));
        for (std::int64_t k = 0; k < m; ++k) {
            diff[static_cast<std::size_t>(k)] = safe_log(sm.p_hat[k]) - safe_log(tm.p_hat[k]);
            weighted_sum += diff[static_cast<std::size_t>(k)];
        }
        const double coeff = weight * scale * 2.0 / (static_cast<double>(m) * T);
        std::int64_t k = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (i == target) continue;
            grad[i] += coeff * (diff[static_cast<std::size_t>(k)] - sm.p_hat[k] * weighted_sum);
            ++k;
        }
    }

    return grad;
}

} // namespace ckd
