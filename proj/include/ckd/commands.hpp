#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "ckd/config.hpp"
#include "ckd/eval.hpp"
#include "ckd/gradcheck.hpp"

namespace ckd {

/// Command bodies behind the CLI; errors surface as ConfigError/DataError/
/// VerifyError, which the executable maps to exit codes 1/2/3.

struct SynthSummary {
    int frames = 0;
    int csi_samples = 0;
    std::uint64_t seed = 0;
};

SynthSummary run_synth(const Config& cfg, const std::string& out_dir, std::ostream& log);

struct SyncSummary {
    int pairs = 0;
    int dropped = 0;
};

SyncSummary run_sync(const std::string& csi_path, const std::string& frames_meta_path,
                     std::int64_t tolerance_ms, const std::string& out_csv, std::ostream& log);

struct TeacherSummary {
    std::string checkpoint_path;
    double final_accuracy = 0.0;
    double final_ce = 0.0;
};

TeacherSummary run_train_teacher(const Config& cfg, const std::string& data_dir,
                                 const std::string& out_dir, std::ostream& log);

struct DistillSummary {
    std::string checkpoint_path;
    CurveSummary curves;
};

DistillSummary run_distill(const Config& cfg, const std::string& data_dir,
                           const std::string& teacher_ckpt_path, const std::string& out_dir,
                           std::ostream& log);

MetricsReport run_eval(const std::string& ckpt_path, const std::string& data_dir,
                       const std::string& split, const std::string& report_path, std::ostream& log);

/// Prints one line per check; throws VerifyError when any check fails.
std::vector<GradCheckResult> run_gradcheck(const Config& cfg, bool inject_fault, std::ostream& log);

} // namespace ckd
