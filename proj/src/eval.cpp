#include "ckd/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ckd/errors.hpp"

namespace ckd {

double keypoint_error(const PoseAnnotation& pred, const PoseAnnotation& truth) {
    if (pred.k() != truth.k()) {
        throw std::invalid_argument("keypoint_error: keypoint count mismatch (" +
                                    std::to_string(pred.k()) + " vs " + std::to_string(truth.k()) +
                                    ")");
    }
    double acc = 0.0;
    for (int i = 0; i < pred.k(); ++i) {
        const double dx = pred.keypoints[static_cast<std::size_t>(i)].x -
                          truth.keypoints[static_cast<std::size_t>(i)].x;
        const double dy = pred.keypoints[static_cast<std::size_t>(i)].y -
                          truth.keypoints[static_cast<std::size_t>(i)].y;
        acc += std::sqrt(dx * dx + dy * dy);
    }
    return acc / pred.k();
}

TorsoSpec TorsoSpec::for_k(int k) {
    TorsoSpec spec;
    if (k >= 12) {
        // 18-keypoint layout: right/left shoulders at 2/5, hips at 8/11.
        spec.shoulder_indices = {2, 5};
        spec.hip_indices = {8, 11};
    } else {
        spec.shoulder_indices = {0};
        spec.hip_indices = {k - 1};
    }
    return spec;
}

namespace {

std::pair<double, double> mean_point(const PoseAnnotation& pose, const std::vector<int>& indices) {
    double x = 0.0, y = 0.0;
    for (int i : indices) {
        x += pose.keypoints.at(static_cast<std::size_t>(i)).x;
        y += pose.keypoints.at(static_cast<std::size_t>(i)).y;
    }
    return {x / indices.size(), y / indices.size()};
}

} // namespace

PckResult pck(const std::vector<PoseAnnotation>& preds, const std::vector<PoseAnnotation>& truths,
              double threshold, const TorsoSpec& torso) {
    if (preds.size() != truths.size()) {
        throw std::invalid_argument("pck: prediction/truth count mismatch");
    }
    PckResult result;
    std::int64_t hits = 0, total = 0;
    for (std::size_t s = 0; s < preds.size(); ++s) {
        const auto [sx, sy] = mean_point(truths[s], torso.shoulder_indices);
        const auto [hx, hy] = mean_point(truths[s], torso.hip_indices);
        const double torso_diam = std::sqrt((sx - hx) * (sx - hx) + (sy - hy) * (sy - hy));
        if (torso_diam <= 0.0) {
            ++result.skipped_degenerate;
            continue;
        }
        const double limit = threshold * torso_diam;
        for (int i = 0; i < truths[s].k(); ++i) {
            const double dx = preds[s].keypoints[static_cast<std::size_t>(i)].x -
                              truths[s].keypoints[static_cast<std::size_t>(i)].x;
            const double dy = preds[s].keypoints[static_cast<std::size_t>(i)].y -
                              truths[s].keypoints[static_cast<std::size_t>(i)].y;
            if (std::sqrt(dx * dx + dy * dy) <= limit) ++hits;
            ++total;
        }
    }
    result.pck = total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    return result;
}

// -- curve export -------------------------------------------------------------

namespace {

void append_g17(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

void write_file_or_throw(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("export_curves: cannot open '" + path + "'");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw DataError("export_curves: write failed for '" + path + "'");
}

} // namespace

CurveSummary export_curves(const std::vector<LossRow>& history, const std::string& prefix) {
    if (history.empty()) throw DataError("export_curves: empty loss history");

    std::string batches = "epoch,batch,ce,tkd,skd,ckd_weight,ckd_total,pam_mse,total\n";
    std::map<int, std::pair<int, LossRow>> per_epoch; // epoch -> (count, sums)
    for (const auto& row : history) {
        batches += std::to_string(row.epoch) + "," + std::to_string(row.batch) + ",";
        append_g17(batches, row.ce);
        batches += ",";
        append_g17(batches, row.tkd);
        batches += ",";
        append_g17(batches, row.skd);
        batches += ",";
        append_g17(batches, row.ckd_weight);
        batches += ",";
        append_g17(batches, row.ckd_total);
        batches += ",";
        append_g17(batches, row.pam_mse);
        batches += ",";
        append_g17(batches, row.total);
        batches += "\n";

        auto& [count, sums] = per_epoch[row.epoch];
        ++count;
        sums.ce += row.ce;
        sums.tkd += row.tkd;
        sums.skd += row.skd;
        sums.ckd_weight += row.ckd_weight;
        sums.ckd_total += row.ckd_total;
        sums.pam_mse += row.pam_mse;
        sums.total += row.total;
    }
    write_file_or_throw(prefix + "_batches.csv", batches);

    std::string epochs = "epoch,ce,tkd,skd,ckd_weight,ckd_total,pam_mse,total\n";
    CurveSummary summary;
    summary.epochs = static_cast<int>(per_epoch.size());
    bool first = true;
    for (const auto& [epoch, entry] : per_epoch) {
        const auto& [count, sums] = entry;
        const double inv = 1.0 / count;
        epochs += std::to_string(epoch) + ",";
        append_g17(epochs, sums.ce * inv);
        epochs += ",";
        append_g17(epochs, sums.tkd * inv);
        epochs += ",";
        append_g17(epochs, sums.skd * inv);
        epochs += ",";
        append_g17(epochs, sums.ckd_weight * inv);
        epochs += ",";
        append_g17(epochs, sums.ckd_total * inv);
        epochs += ",";
        append_g17(epochs, sums.pam_mse * inv);
        epochs += ",";
        append_g17(epochs, sums.total * inv);
        epochs += "\n";
        if (first) {
            summary.first_epoch_mean_total = sums.total * inv;
            first = false;
        }
        summary.last_epoch_mean_total = sums.total * inv;
    }
    write_file_or_throw(prefix + "_epochs.csv", epochs);

    summary.ratio = summary.first_epoch_mean_total != 0.0
                        ? summary.last_epoch_mean_total / summary.first_epoch_mean_total
                        : 0.0;
    std::string txt;
    txt += "first_epoch_mean_total=";
    append_g17(txt, summary.first_epoch_mean_total);
    txt += "\nlast_epoch_mean_total=";
    append_g17(txt, summary.last_epoch_mean_total);
    txt += "\nlast_over_first_ratio=";
    append_g17(txt, summary.ratio);
    txt += "\nepochs=" + std::to_string(summary.epochs) + "\n";
    write_file_or_throw(prefix + "_summary.txt", txt);
    return summary;
}

std::vector<LossRow> parse_batch_curves_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("curves: empty file");
    if (line != "epoch,batch,ce,tkd,skd,ckd_weight,ckd_total,pam_mse,total") {
        throw DataError("curves: unexpected header '" + line + "'");
    }
    std::vector<LossRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossRow row;
        const char* p = line.data();
        const char* end = p + line.size();
        auto read_int = [&](int& out) {
            auto res = std::from_chars(p, end, out);
            if (res.ec != std::errc()) throw DataError("curves: malformed row '" + line + "'");
            p = res.ptr;
            if (p < end && *p == ',') ++p;
        };
        auto read_double = [&](double& out) {
            auto res = std::from_chars(p, end, out);
            if (res.ec != std::errc()) throw DataError("curves: malformed row '" + line + "'");
            p = res.ptr;
            if (p < end && *p == ',') ++p;
        };
        read_int(row.epoch);
        read_int(row.batch);
        read_double(row.ce);
        read_double(row.tkd);
        read_double(row.skd);
        read_double(row.ckd_weight);
        read_double(row.ckd_total);
        read_double(row.pam_mse);
        read_double(row.total);
        rows.push_back(row);
    }
    return rows;
}

// -- reports ---------------------------------------------------------------------

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["mean_keypoint_error"] = mean_keypoint_error;
    j["pck_at_0.2"] = pck_at_0_2;
    j["class_accuracy"] = class_accuracy;
    j["per_class_accuracy"] = per_class_accuracy;
    j["n_samples"] = n_samples;
    j["degenerate_torso_skipped"] = degenerate_torso_skipped;
    return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("metrics report: malformed JSON: ") + e.what());
    }
    MetricsReport r;
    r.mean_keypoint_error = j.at("mean_keypoint_error").get<double>();
    r.pck_at_0_2 = j.at("pck_at_0.2").get<double>();
    r.class_accuracy = j.at("class_accuracy").get<double>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    r.n_samples = j.at("n_samples").get<int>();
    r.degenerate_torso_skipped = j.at("degenerate_torso_skipped").get<int>();
    return r;
}

RunComparison compare_runs(const std::vector<MetricsReport>& ckd_reports,
                           const std::vector<MetricsReport>& baseline_reports) {
    if (ckd_reports.size() != baseline_reports.size() || ckd_reports.empty()) {
        throw std::invalid_argument("compare_runs: reports must pair up per seed");
    }
    RunComparison cmp;
    cmp.n_seeds = static_cast<int>(ckd_reports.size());
    for (std::size_t i = 0; i < ckd_reports.size(); ++i) {
        const double dk = ckd_reports[i].mean_keypoint_error - baseline_reports[i].mean_keypoint_error;
        const double dp = ckd_reports[i].pck_at_0_2 - baseline_reports[i].pck_at_0_2;
        cmp.keypoint_error_delta.push_back(dk);
        cmp.pck_delta.push_back(dp);
        if (dk < 0.0) ++cmp.seeds_ckd_better;
    }
    return cmp;
}

std::string RunComparison::to_json() const {
    nlohmann::json j;
    j["keypoint_error_delta"] = keypoint_error_delta;
    j["pck_delta"] = pck_delta;
    j["seeds_ckd_better"] = seeds_ckd_better;
    j["n_seeds"] = n_seeds;
    return j.dump(2);
}

} // namespace ckd
