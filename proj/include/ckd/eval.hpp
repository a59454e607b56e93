#pragma once

#include <string>
#include <vector>

#include "ckd/pam.hpp"
#include "ckd/train.hpp"

namespace ckd {

struct MetricsReport {
    double mean_keypoint_error = 0.0; // normalized coordinate units
    double pck_at_0_2 = 0.0;
    double class_accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    int n_samples = 0;
    int degenerate_torso_skipped = 0;

    std::string to_json() const;
    static MetricsReport from_json(const std::string& text);
};

/// Mean Euclidean distance over the K keypoints, normalized coordinates.
double keypoint_error(const PoseAnnotation& pred, const PoseAnnotation& truth);

/// Torso reference points for the PCK threshold: mean of the shoulder
/// indices to mean of the hip indices. Defaults follow the 18-keypoint
/// layout; smaller rigs fall back to first/last keypoint.
struct TorsoSpec {
    std::vector<int> shoulder_indices;
    std::vector<int> hip_indices;

    static TorsoSpec for_k(int k);
};

struct PckResult {
    double pck = 0.0;
    int skipped_degenerate = 0; // zero torso diameter
};

/// Fraction of keypoints within threshold * torso diameter of the truth.
PckResult pck(const std::vector<PoseAnnotation>& preds, const std::vector<PoseAnnotation>& truths,
              double threshold, const TorsoSpec& torso);

struct CurveSummary {
    double first_epoch_mean_total = 0.0;
    double last_epoch_mean_total = 0.0;
    double ratio = 0.0; // last / first, the acceptance quantity
    int epochs = 0;
};

/// Writes <prefix>_batches.csv (one row per logged step), <prefix>_epochs.csv
/// (per-epoch means) and <prefix>_summary.txt. Values are printed in
/// round-trip precision so re-parsing recovers the logged doubles exactly.
CurveSummary export_curves(const std::vector<LossRow>& history, const std::string& prefix);

std::vector<LossRow> parse_batch_curves_csv(const std::string& text);

struct RunComparison {
    std::vector<double> keypoint_error_delta; // ckd - baseline, per seed
    std::vector<double> pck_delta;
    int seeds_ckd_better = 0; // strictly lower keypoint error
    int n_seeds = 0;

    std::string to_json() const;
};

/// Paired per-seed comparison; reports must arrive in matching seed order.
RunComparison compare_runs(const std::vector<MetricsReport>& ckd_reports,
                           const std::vector<MetricsReport>& baseline_reports);

} // namespace ckd
