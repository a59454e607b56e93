#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ckd/errors.hpp"
#include "ckd/train.hpp"
#include "oracles.hpp"

using namespace ckd;

namespace {

std::string temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "ckdpose_test_train";
    std::filesystem::create_directories(dir);
    return dir.string();
}

/// Tiny two-class training set with well-separated poses.
TrainingSet tiny_set(const SynthDataset& ds, const std::vector<SyncedPair>& pairs,
                     const std::vector<int>& ids) {
    return make_training_set(ds.frames, ds.csi, pairs, ids);
}

} // namespace

TEST_CASE("adam_step: zero gradients leave parameters unchanged, t increments") {
    ModelParameters params;
    params.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
    AdamState st = make_adam_state(params, 0.01);
    GradientMap g;
    g.params.emplace("w", Tensor({3}));
    adam_step(params, g, st);
    CHECK(st.t == 1);
    CHECK(params.at("w")[0] == 1.0);
    CHECK(params.at("w")[1] == -2.0);
    CHECK(params.at("w")[2] == 0.5);
}

TEST_CASE("adam_step: first step matches the closed-form oracle") {
    ModelParameters params;
    params.add("w", Tensor({1}, {0.3}));
    AdamState st = make_adam_state(params, 0.001);
    GradientMap g;
    g.params.emplace("w", Tensor({1}, {0.5}));
    adam_step(params, g, st);
    const double want = oracle::adam_first_step_ref(0.3, 0.5, 0.001, st.beta1, st.beta2, st.eps);
    CHECK(params.at("w")[0] == doctest::Approx(want).epsilon(1e-15));
    // update ~ -lr * sign(g) up to the eps correction
    CHECK(params.at("w")[0] == doctest::Approx(0.3 - 0.001).epsilon(1e-4));
}

TEST_CASE("adam trajectories are bitwise identical across twin runs") {
    auto run = [] {
        ModelParameters params;
        params.add("w", Tensor({2}, {1.0, -1.0}));
        AdamState st = make_adam_state(params, 0.05);
        for (int i = 0; i < 50; ++i) {
            GradientMap g;
            g.params.emplace("w", Tensor({2}, {params.at("w")[0], 0.3 * params.at("w")[1]}));
            adam_step(params, g, st);
        }
        return std::make_pair(params.at("w")[0], params.at("w")[1]);
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("lr_at_epoch reproduces the milestone schedule") {
    LrSchedule s;
    s.initial_lr = 0.001;
    s.milestones = {7, 10, 18};
    s.gamma = 0.5;
    for (int e = 0; e <= 6; ++e) CHECK(lr_at_epoch(s, e) == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(lr_at_epoch(s, 7) == doctest::Approx(0.0005).epsilon(1e-15));
    CHECK(lr_at_epoch(s, 10) == doctest::Approx(0.00025).epsilon(1e-15));
    CHECK(lr_at_epoch(s, 18) == doctest::Approx(0.000125).epsilon(1e-15));
    CHECK(lr_at_epoch(s, 19) == doctest::Approx(0.000125).epsilon(1e-15));

    for (int e = 1; e < 25; ++e) CHECK(lr_at_epoch(s, e) <= lr_at_epoch(s, e - 1));

    LrSchedule flat;
    flat.milestones = {};
    CHECK(lr_at_epoch(flat, 12) == flat.initial_lr);
    LrSchedule unit;
    unit.gamma = 1.0;
    CHECK(lr_at_epoch(unit, 12) == unit.initial_lr);
}

TEST_CASE("checkpoint save/load round-trips bit-exactly; corrupt files are rejected") {
    Checkpoint ckpt;
    ckpt.kind = NetworkKind::Student;
    ckpt.spec_config = Config::parse_text("seed = 3\ntrain.lr = 0.001\n");
    Rng rng(81);
    Tensor w({2, 3});
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
    ckpt.params.add("w", w);
    ckpt.params.add("rv", Tensor::full({2}, 1.0), false);
    ckpt.adam = make_adam_state(ckpt.params, 0.001);
    ckpt.adam.t = 17;
    ckpt.epoch = 4;
    LossRow row;
    row.epoch = 1;
    row.batch = 2;
    row.ce = 0.25;
    row.tkd = 0.5;
    row.skd = 0.125;
    row.ckd_weight = 0.75;
    row.ckd_total = row.tkd + row.ckd_weight * row.skd;
    row.pam_mse = 0.01;
    row.total = 1.0;
    ckpt.history.push_back(row);

    const std::string path = temp_dir() + "/roundtrip.ckpt";
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.kind == NetworkKind::Student);
    CHECK(back.spec_config.get_int("seed", 0) == 3);
    CHECK(back.params.names == ckpt.params.names);
    for (std::int64_t i = 0; i < w.size(); ++i) CHECK(back.params.at("w")[i] == w[i]);
    CHECK_FALSE(back.params.is_trainable("rv"));
    CHECK(back.adam.t == 17);
    CHECK(back.epoch == 4);
    REQUIRE(back.history.size() == 1);
    CHECK(back.history[0].ckd_total == row.ckd_total);

    // Corrupt header.
    const std::string bad_path = temp_dir() + "/bad.ckpt";
    {
        std::ofstream f(bad_path, std::ios::binary);
        f << "NOPE";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), doctest::Contains("not a CKD1"), DataError);

    // Truncated body.
    std::string full = [&] {
        std::ifstream f(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }();
    const std::string trunc_path = temp_dir() + "/trunc.ckpt";
    {
        std::ofstream f(trunc_path, std::ios::binary);
        f.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(trunc_path), doctest::Contains("truncated"), DataError);
}

TEST_CASE("teacher training separates a 2-class toy set and is seed-deterministic") {
    SynthConfig sc;
    sc.num_classes = 2;
    sc.samples_per_class = 12;
    sc.noise_sigma = 0.0;
    sc.k_keypoints = 4;
    SynthDataset ds = synth_generate(sc, Rng(5));
    SyncResult sync = synchronize(ds.frames, ds.csi, 25);
    REQUIRE(sync.pairs.size() == 24);
    std::vector<int> ids(sync.pairs.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    TrainingSet set = tiny_set(ds, sync.pairs, ids);

    TeacherNetworkSpec spec = make_teacher_spec_desk(2);
    spec.conv_channels = {8, 16};
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.seed = 11;

    TeacherTrainResult result = train_teacher(set, spec, cfg);
    CHECK(result.epoch_accuracy.back() >= 0.99);

    TeacherTrainResult twin = train_teacher(set, spec, cfg);
    CHECK(twin.epoch_ce.back() == result.epoch_ce.back());

    // Zero epochs: checkpoint equals initialization.
    TrainConfig zero = cfg;
    zero.epochs = 0;
    TeacherTrainResult init = train_teacher(set, spec, zero);
    BuiltNetwork net = build_teacher(spec);
    ModelParameters fresh = init_params(net.param_specs, Rng(cfg.seed).child("init/teacher"));
    for (const auto& name : fresh.names) {
        const Tensor& a = fresh.at(name);
        const Tensor& b = init.checkpoint.params.at(name);
        for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("distillation: logged rows recompose exactly and the run is deterministic") {
    SynthConfig sc;
    sc.num_classes = 3;
    sc.samples_per_class = 8;
    sc.noise_sigma = 0.02;
    sc.k_keypoints = 3;
    SynthDataset ds = synth_generate(sc, Rng(6));
    SyncResult sync = synchronize(ds.frames, ds.csi, 25);
    std::vector<int> ids(sync.pairs.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    TrainingSet set = tiny_set(ds, sync.pairs, ids);

    TeacherNetworkSpec tspec = make_teacher_spec_desk(3);
    tspec.conv_channels = {8, 16};
    TrainConfig tcfg;
    tcfg.epochs = 6;
    tcfg.batch_size = 8;
    tcfg.seed = 21;
    TeacherTrainResult teacher = train_teacher(set, tspec, tcfg);

    StudentNetworkSpec sspec = make_student_spec_desk(3, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 22;
    cfg.ckd.warmup_epochs = 2;

    DistillResult result = distill_student(set, teacher.checkpoint, sspec, cfg);
    REQUIRE_FALSE(result.curves.empty());
    for (const auto& row : result.curves) {
        CHECK(row.ckd_total == row.tkd + row.ckd_weight * row.skd); // exact recomposition
        const double ramp = warmup_ramp(row.epoch, cfg.ckd.warmup_epochs);
        const double want_total = cfg.ckd.ce_weight * row.ce + ramp * cfg.ckd_scale * row.ckd_total +
                                  cfg.lambda_pam * row.pam_mse;
        CHECK(row.total == want_total);
        if (row.epoch == 0) {
            // Warmup: no distillation contribution in epoch zero.
            CHECK(row.total == cfg.ckd.ce_weight * row.ce + cfg.lambda_pam * row.pam_mse);
        }
    }

    DistillResult twin = distill_student(set, teacher.checkpoint, sspec, cfg);
    REQUIRE(twin.curves.size() == result.curves.size());
    for (std::size_t i = 0; i < twin.curves.size(); ++i) {
        CHECK(twin.curves[i].total == result.curves[i].total);
    }

    // Class-count mismatch is rejected.
    StudentNetworkSpec wrong = make_student_spec_desk(4, 3);
    CHECK_THROWS_WITH_AS(distill_student(set, teacher.checkpoint, wrong, cfg),
                         doctest::Contains("classes"), DataError);
}

TEST_CASE("train_config round-trips through config text") {
    TrainConfig tc;
    tc.epochs = 13;
    tc.batch_size = 16;
    tc.schedule.initial_lr = 0.002;
    tc.schedule.milestones = {3, 9};
    tc.schedule.gamma = 0.25;
    tc.lambda_pam = 0.75;
    tc.ckd_scale = 0.0;
    tc.seed = 99;
    tc.ckd.temperature = 3.5;
    tc.ckd.weight_mode = WeightMode::FixedBeta;
    tc.ckd.beta = 6.0;
    tc.ckd.temp_scale_mode = TempScaleMode::LiteralTimes4;

    Config cfg;
    train_config_to(tc, cfg);
    TrainConfig back = train_config_from(cfg);
    CHECK(back.epochs == 13);
    CHECK(back.schedule.milestones == std::vector<int>{3, 9});
    CHECK(back.schedule.gamma == 0.25);
    CHECK(back.ckd_scale == 0.0);
    CHECK(back.ckd.temperature == 3.5);
    CHECK(back.ckd.weight_mode == WeightMode::FixedBeta);
    CHECK(back.ckd.temp_scale_mode == TempScaleMode::LiteralTimes4);
    CHECK(back.seed == 99);
}
