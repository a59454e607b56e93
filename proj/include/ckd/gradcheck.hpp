#pragma once

#include <string>
#include <vector>

#include "ckd/networks.hpp"

namespace ckd {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    bool pass = false;
};

/// Central-difference verification of every layer type, the distillation
/// loss in all weight/temperature-scale modes, and the end-to-end student
/// graph under the full training loss. h = 1e-5, pass threshold 1e-4.
/// `inject_fault` perturbs one analytic gradient to prove the harness
/// detects wrong gradients.
std::vector<GradCheckResult> run_gradient_checks(const StudentNetworkSpec& student_spec,
                                                 std::uint64_t seed, bool inject_fault = false);

} // namespace ckd
