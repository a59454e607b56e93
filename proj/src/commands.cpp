#include "ckd/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "ckd/dataset_io.hpp"
#include "ckd/errors.hpp"
#include "ckd/train.hpp"

namespace fs = std::filesystem;

namespace ckd {

namespace {

SynthConfig synth_config_from(const Config& cfg) {
    SynthConfig sc;
    sc.num_classes = cfg.get_int("synth.num_classes", 8);
    sc.samples_per_class = cfg.get_int("synth.samples_per_class", 100);
    sc.noise_sigma = cfg.get_double("synth.noise_sigma", 0.05);
    sc.jitter = cfg.get_double("synth.jitter", 0.02);
    sc.channel_mixing_seed = static_cast<std::uint64_t>(cfg.get_int64("synth.channel_mixing_seed", 7));
    sc.k_keypoints = cfg.get_int("synth.k", 4);
    sc.frame_h = cfg.get_int("synth.frame_h", 32);
    sc.frame_w = cfg.get_int("synth.frame_w", 32);
    sc.csi_s = cfg.get_int("synth.csi_s", 30);
    sc.csi_tx = cfg.get_int("synth.csi_tx", 3);
    sc.csi_rx = cfg.get_int("synth.csi_rx", 3);
    sc.validate();
    return sc;
}

void echo_config(const Config& cfg, const std::string& out_dir) {
    write_file((fs::path(out_dir) / "effective.conf").string(), cfg.render());
}

struct PreparedData {
    LoadedDataset loaded;
    SyncResult sync;
    DatasetSplit split;
};

PreparedData prepare_data(const Config& cfg, const std::string& data_dir) {
    PreparedData pd;
    pd.loaded = load_dataset(data_dir, cfg.get_int("synth.k", 4));
    pd.sync = synchronize(pd.loaded.frames, pd.loaded.csi,
                          cfg.get_int64("sync.tolerance_ms", 25));
    if (pd.sync.pairs.empty()) throw DataError("dataset produced no synchronized pairs");
    pd.split = split_dataset(static_cast<int>(pd.sync.pairs.size()),
                             cfg.get_double("split.ratio", 0.85),
                             static_cast<std::uint64_t>(cfg.get_int64("seed", 42)));
    return pd;
}

} // namespace

SynthSummary run_synth(const Config& cfg, const std::string& out_dir, std::ostream& log) {
    cfg.require_known_keys(config_schema());
    SynthConfig sc = synth_config_from(cfg);
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int64("seed", 42));
    SynthDataset ds = synth_generate(sc, Rng(seed));
    fs::create_directories(out_dir);
    save_dataset(out_dir, ds, sc);
    echo_config(cfg, out_dir);

    SynthSummary summary;
    summary.frames = static_cast<int>(ds.frames.size());
    summary.csi_samples = static_cast<int>(ds.csi.size());
    summary.seed = seed;
    log << "synth: " << summary.frames << " frames, " << summary.csi_samples
        << " csi samples, seed " << seed << ", classes " << sc.num_classes << " x "
        << sc.samples_per_class << " -> " << out_dir << "\n";
    return summary;
}

SyncSummary run_sync(const std::string& csi_path, const std::string& frames_meta_path,
                     std::int64_t tolerance_ms, const std::string& out_csv, std::ostream& log) {
    CsiParseResult csi = parse_csi_file(read_file(csi_path));
    FrameMeta meta = parse_frame_meta(read_file(frames_meta_path));

    std::vector<FrameRecord> frames;
    for (const auto& [index, ts] : meta.timestamps) {
        FrameRecord fr;
        fr.frame_index = index;
        fr.timestamp_ms = ts;
        frames.push_back(std::move(fr));
    }
    std::stable_sort(frames.begin(), frames.end(), [](const FrameRecord& a, const FrameRecord& b) {
        return a.timestamp_ms < b.timestamp_ms;
    });

    SyncResult sync = synchronize(frames, csi.samples, tolerance_ms);
    std::string out = "frame_index,csi_row,lag_ms\n";
    for (const auto& p : sync.pairs) {
        out += std::to_string(frames[static_cast<std::size_t>(p.frame_id)].frame_index) + "," +
               std::to_string(csi.samples[static_cast<std::size_t>(p.csi_id)].source_row) + "," +
               std::to_string(p.lag_ms) + "\n";
    }
    write_file(out_csv, out);

    SyncSummary summary;
    summary.pairs = static_cast<int>(sync.pairs.size());
    summary.dropped = sync.dropped_frames;
    log << "sync: " << summary.pairs << " pairs, " << summary.dropped << " frames dropped, "
        << csi.non_monotone_warnings << " timestamp warnings -> " << out_csv << "\n";
    return summary;
}

TeacherSummary run_train_teacher(const Config& cfg, const std::string& data_dir,
                                 const std::string& out_dir, std::ostream& log) {
    cfg.require_known_keys(config_schema());
    fs::create_directories(out_dir);
    PreparedData pd = prepare_data(cfg, data_dir);
    TrainingSet train_set =
        make_training_set(pd.loaded.frames, pd.loaded.csi, pd.sync.pairs, pd.split.train);

    TeacherNetworkSpec spec = teacher_spec_from_config(cfg);
    TrainConfig tc = train_config_from(cfg);
    TeacherTrainResult result = train_teacher(train_set, spec, tc);

    const std::string ckpt_path = (fs::path(out_dir) / "teacher.ckpt").string();
    save_checkpoint(result.checkpoint, ckpt_path);
    echo_config(cfg, out_dir);

    std::string curve = "epoch,ce,accuracy\n";
    for (std::size_t e = 0; e < result.epoch_ce.size(); ++e) {
        std::ostringstream row;
        row << e << "," << std::setprecision(17) << result.epoch_ce[e] << ","
            << result.epoch_accuracy[e] << "\n";
        curve += row.str();
    }
    write_file((fs::path(out_dir) / "teacher_epochs.csv").string(), curve);

    TeacherSummary summary;
    summary.checkpoint_path = ckpt_path;
    summary.final_accuracy = result.epoch_accuracy.empty() ? 0.0 : result.epoch_accuracy.back();
    summary.final_ce = result.epoch_ce.empty() ? 0.0 : result.epoch_ce.back();
    log << "train-teacher: " << train_set.frames.size() << " train pairs, " << tc.epochs
        << " epochs, final accuracy " << summary.final_accuracy << " -> " << ckpt_path << "\n";
    return summary;
}

DistillSummary run_distill(const Config& cfg, const std::string& data_dir,
                           const std::string& teacher_ckpt_path, const std::string& out_dir,
                           std::ostream& log) {
    cfg.require_known_keys(config_schema());
    fs::create_directories(out_dir);
    PreparedData pd = prepare_data(cfg, data_dir);
    TrainingSet train_set =
        make_training_set(pd.loaded.frames, pd.loaded.csi, pd.sync.pairs, pd.split.train);

    Checkpoint teacher = load_checkpoint(teacher_ckpt_path);
    StudentNetworkSpec spec = student_spec_from_config(cfg);
    TrainConfig tc = train_config_from(cfg);

    reset_log_clamp_count();
    DistillResult result = distill_student(train_set, teacher, spec, tc);
    const std::string ckpt_path = (fs::path(out_dir) / "student.ckpt").string();
    save_checkpoint(result.checkpoint, ckpt_path);
    echo_config(cfg, out_dir);

    DistillSummary summary;
    summary.checkpoint_path = ckpt_path;
    summary.curves = export_curves(result.curves, (fs::path(out_dir) / "distill").string());
    log << "distill: " << train_set.frames.size() << " train pairs, " << tc.epochs
        << " epochs, loss " << summary.curves.first_epoch_mean_total << " -> "
        << summary.curves.last_epoch_mean_total << " (ratio "
        << summary.curves.ratio << "), log-floor hits " << log_clamp_count() << " -> "
        << ckpt_path << "\n";
    return summary;
}

MetricsReport run_eval(const std::string& ckpt_path, const std::string& data_dir,
                       const std::string& split_name, const std::string& report_path,
                       std::ostream& log) {
    if (split_name != "train" && split_name != "test") {
        throw ConfigError("eval: split must be 'train' or 'test', got '" + split_name + "'");
    }
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Config& cfg = ckpt.spec_config; // evaluation reuses the training-time data settings
    PreparedData pd = prepare_data(cfg, data_dir);
    const std::vector<int>& ids = split_name == "train" ? pd.split.train : pd.split.test;
    if (ids.empty()) throw DataError("eval: split '" + split_name + "' is empty");
    TrainingSet set = make_training_set(pd.loaded.frames, pd.loaded.csi, pd.sync.pairs, ids);

    MetricsReport report;
    report.n_samples = static_cast<int>(set.frames.size());
    const int num_classes = cfg.get_int("synth.num_classes", 8);
    std::vector<int> class_total(static_cast<std::size_t>(num_classes), 0);
    std::vector<int> class_hit(static_cast<std::size_t>(num_classes), 0);

    if (ckpt.kind == NetworkKind::Teacher) {
        TeacherNetworkSpec spec = teacher_spec_from_config(cfg);
        BuiltNetwork net = build_teacher(spec);
        ModelParameters params = ckpt.params;
        int correct = 0;
        for (std::size_t i = 0; i < set.frames.size(); ++i) {
            const Tensor logits = teacher_forward(net, params, set.frames[i]->frame, false);
            int argmax = 0;
            for (std::int64_t c = 1; c < logits.size(); ++c) {
                if (logits[c] > logits[argmax]) argmax = static_cast<int>(c);
            }
            const int label = set.labels[i];
            ++class_total[static_cast<std::size_t>(label)];
            if (argmax == label) {
                ++correct;
                ++class_hit[static_cast<std::size_t>(label)];
            }
        }
        report.class_accuracy = static_cast<double>(correct) / report.n_samples;
    } else {
        StudentNetworkSpec spec = student_spec_from_config(cfg);
        BuiltNetwork net = build_student(spec);
        ModelParameters params = ckpt.params;
        std::vector<PoseAnnotation> preds, truths;
        int correct = 0;
        for (std::size_t i = 0; i < set.frames.size(); ++i) {
            StudentOutput out = student_forward(net, params, set.csi[i], false);
            preds.push_back(decode_pam(out.pam));
            truths.push_back(*set.frames[i]->pose);
            int argmax = 0;
            for (std::int64_t c = 1; c < out.logits.size(); ++c) {
                if (out.logits[c] > out.logits[argmax]) argmax = static_cast<int>(c);
            }
            const int label = set.labels[i];
            ++class_total[static_cast<std::size_t>(label)];
            if (argmax == label) {
                ++correct;
                ++class_hit[static_cast<std::size_t>(label)];
            }
        }
        double err = 0.0;
        for (std::size_t i = 0; i < preds.size(); ++i) err += keypoint_error(preds[i], truths[i]);
        report.mean_keypoint_error = err / preds.size();
        PckResult pr = pck(preds, truths, 0.2, TorsoSpec::for_k(spec.k_keypoints));
        report.pck_at_0_2 = pr.pck;
        report.degenerate_torso_skipped = pr.skipped_degenerate;
        report.class_accuracy = static_cast<double>(correct) / report.n_samples;
    }

    for (int c = 0; c < num_classes; ++c) {
        const int total = class_total[static_cast<std::size_t>(c)];
        report.per_class_accuracy.push_back(
            total > 0 ? static_cast<double>(class_hit[static_cast<std::size_t>(c)]) / total : 0.0);
    }

    if (!report_path.empty()) write_file(report_path, report.to_json());
    log << "eval(" << split_name << "): n=" << report.n_samples << " keypoint_err="
        << report.mean_keypoint_error << " pck@0.2=" << report.pck_at_0_2 << " acc="
        << report.class_accuracy << "\n";
    return report;
}

std::vector<GradCheckResult> run_gradcheck(const Config& cfg, bool inject_fault,
                                           std::ostream& log) {
    cfg.require_known_keys(config_schema());
    StudentNetworkSpec spec = student_spec_from_config(cfg);
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int64("seed", 42));
    std::vector<GradCheckResult> results = run_gradient_checks(spec, seed, inject_fault);
    bool all_pass = true;
    for (const auto& r : results) {
        log << (r.pass ? "  ok   " : "  FAIL ") << r.name << "  max_rel_err="
            << std::setprecision(3) << std::scientific << r.max_rel_error << std::defaultfloat
            << "\n";
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) throw VerifyError("gradient check failed");
    return results;
}

} // namespace ckd
