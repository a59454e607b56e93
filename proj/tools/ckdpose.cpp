#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ckd/commands.hpp"
#include "ckd/errors.hpp"

namespace {

ckd::Config load_config(const std::string& path_flag,
                        const std::vector<std::string>& overrides) {
    std::string path = path_flag;
    if (path.empty()) {
        if (const char* env = std::getenv("CKDPOSE_CONFIG")) path = env;
    }
    ckd::Config cfg = path.empty() ? ckd::Config() : ckd::Config::parse_file(path);
    for (const auto& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ckd::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.require_known_keys(ckd::config_schema());
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Correlated knowledge distillation for RF-based pose estimation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "Config file (default: $CKDPOSE_CONFIG)");
    app.add_option("--set", overrides, "Override a config key, key=value")->take_all();

    auto* synth = app.add_subcommand("synth", "Generate the synthetic cross-modal dataset");
    std::string synth_out = "dataset";
    synth->add_option("--out", synth_out, "Output directory");

    auto* sync = app.add_subcommand("sync", "Pair frames with CSI by timestamp");
    std::string sync_csi, sync_meta, sync_out = "pairs.csv";
    std::int64_t sync_tol = 25;
    sync->add_option("--csi", sync_csi, "CSI file")->required();
    sync->add_option("--frames-meta", sync_meta, "Frame timestamp sidecar")->required();
    sync->add_option("--tolerance-ms", sync_tol, "Pairing tolerance in ms");
    sync->add_option("--out", sync_out, "Pair index CSV");

    auto* teach = app.add_subcommand("train-teacher", "Train the camera-side classifier");
    std::string teach_data, teach_out = "teacher_run";
    teach->add_option("--data", teach_data, "Dataset directory")->required();
    teach->add_option("--out", teach_out, "Output directory");

    auto* distill = app.add_subcommand("distill", "Distill the CSI student against a teacher");
    std::string distill_data, distill_teacher, distill_out = "distill_run";
    std::string weight_mode, temp_scale;
    double temperature = -1.0;
    distill->add_option("--data", distill_data, "Dataset directory")->required();
    distill->add_option("--teacher", distill_teacher, "Teacher checkpoint")->required();
    distill->add_option("--out", distill_out, "Output directory");
    distill->add_option("--weight-mode", weight_mode, "adaptive|fixed_beta");
    distill->add_option("--temperature", temperature, "Distillation temperature");
    distill->add_option("--temp-scale", temp_scale, "squared|literal_times4");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_out = "report.json";
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--split", eval_split, "train|test");
    eval->add_option("--out", eval_out, "Report JSON path");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    bool inject_fault = false;
    gradcheck->add_flag("--inject-fault", inject_fault,
                        "Corrupt one gradient to prove detection works");

    CLI11_PARSE(app, argc, argv);

    try {
        ckd::Config cfg = load_config(config_path, overrides);
        if (synth->parsed()) {
            ckd::run_synth(cfg, synth_out, std::cout);
        } else if (sync->parsed()) {
            ckd::run_sync(sync_csi, sync_meta, sync_tol, sync_out, std::cout);
        } else if (teach->parsed()) {
            ckd::run_train_teacher(cfg, teach_data, teach_out, std::cout);
        } else if (distill->parsed()) {
            if (!weight_mode.empty()) cfg.set("ckd.weight_mode", weight_mode);
            if (!temp_scale.empty()) cfg.set("ckd.temp_scale_mode", temp_scale);
            if (temperature > 0.0) cfg.set("ckd.temperature", std::to_string(temperature));
            ckd::run_distill(cfg, distill_data, distill_teacher, distill_out, std::cout);
        } else if (eval->parsed()) {
            ckd::run_eval(eval_ckpt, eval_data, eval_split, eval_out, std::cout);
        } else if (gradcheck->parsed()) {
            ckd::run_gradcheck(cfg, inject_fault, std::cout);
            std::cout << "gradcheck: all checks passed\n";
        }
    } catch (const ckd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ckd::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ckd::VerifyError& e) {
        std::cerr << "verification failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
