#include <doctest.h>

#include <cmath>

#include "ckd/errors.hpp"
#include "ckd/pam.hpp"
#include "ckd/rng.hpp"

using namespace ckd;

namespace {

PoseAnnotation random_pose(int k, Rng& rng) {
    PoseAnnotation pose;
    pose.keypoints.resize(static_cast<std::size_t>(k));
    for (auto& kp : pose.keypoints) {
        kp.x = rng.uniform();
        kp.y = rng.uniform();
        kp.confidence = rng.uniform();
    }
    return pose;
}

} // namespace

TEST_CASE("encode_pam: coincident keypoints give a constant diagonal") {
    PoseAnnotation pose;
    pose.keypoints.assign(4, Keypoint{0.5, 0.5, 1.0});
    PoseAdjacencyMatrix pam = encode_pam(pose);
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                CHECK(pam.values.at(c, i, j) == (i == j ? 0.5 : 0.0));
            }
        }
    }
}

TEST_CASE("encode_pam: K=2 hand case") {
    PoseAnnotation pose;
    pose.keypoints = {{0.0, 0.0, 1.0}, {1.0, 1.0, 1.0}};
    PoseAdjacencyMatrix pam = encode_pam(pose);
    // Channel 0 (x): [[0, -1], [1, 1]].
    CHECK(pam.values.at(0, 0, 0) == 0.0);
    CHECK(pam.values.at(0, 0, 1) == -1.0);
    CHECK(pam.values.at(0, 1, 0) == 1.0);
    CHECK(pam.values.at(0, 1, 1) == 1.0);
}

TEST_CASE("encode_pam rejects out-of-range coordinates") {
    PoseAnnotation pose;
    pose.keypoints = {{1.5, 0.0, 1.0}, {0.0, 0.0, 1.0}};
    CHECK_THROWS_AS(encode_pam(pose), std::invalid_argument);
}

TEST_CASE("decode(encode(p)) recovers coordinates exactly; off-diagonals are ignored") {
    Rng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + static_cast<int>(rng.uniform_int(17));
        PoseAnnotation pose = random_pose(k, rng);
        PoseAdjacencyMatrix pam = encode_pam(pose);
        PoseAnnotation back = decode_pam(pam);
        REQUIRE(back.k() == k);
        for (int i = 0; i < k; ++i) {
            CHECK(back.keypoints[static_cast<std::size_t>(i)].x ==
                  pose.keypoints[static_cast<std::size_t>(i)].x);
            CHECK(back.keypoints[static_cast<std::size_t>(i)].y ==
                  pose.keypoints[static_cast<std::size_t>(i)].y);
            CHECK(back.keypoints[static_cast<std::size_t>(i)].confidence == 1.0);
        }

        // Corrupt the off-diagonals: decode still reads the diagonal.
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                if (i != j) pam.values.at(0, i, j) = rng.uniform(-5.0, 5.0);
            }
        }
        PoseAnnotation noisy = decode_pam(pam);
        for (int i = 0; i < k; ++i) {
            CHECK(noisy.keypoints[static_cast<std::size_t>(i)].x ==
                  pose.keypoints[static_cast<std::size_t>(i)].x);
        }
    }
}

TEST_CASE("decode_pam reads the diagonal and clamps to [0,1]") {
    PoseAdjacencyMatrix pam;
    pam.values = Tensor({2, 3, 3});
    const double diag[3] = {0.1, 0.5, 0.9};
    for (int i = 0; i < 3; ++i) {
        pam.values.at(0, i, i) = diag[i];
        pam.values.at(1, i, i) = diag[i];
    }
    PoseAnnotation pose = decode_pam(pam);
    for (int i = 0; i < 3; ++i) CHECK(pose.keypoints[static_cast<std::size_t>(i)].x == diag[i]);

    pam.values.at(0, 0, 0) = 1.7; // predicted matrices can overshoot
    pam.values.at(1, 1, 1) = -0.3;
    PoseAnnotation clamped = decode_pam(pam);
    CHECK(clamped.keypoints[0].x == 1.0);
    CHECK(clamped.keypoints[1].y == 0.0);

    PoseAdjacencyMatrix bad;
    bad.values = Tensor({3, 2, 2});
    CHECK_THROWS_AS(decode_pam(bad), std::invalid_argument);
}

TEST_CASE("pam antisymmetry and translation covariance") {
    Rng rng(52);
    PoseAnnotation pose = random_pose(6, rng);
    for (auto& kp : pose.keypoints) {
        kp.x = 0.2 + 0.5 * kp.x;
        kp.y = 0.2 + 0.5 * kp.y;
    }
    PoseAdjacencyMatrix pam = encode_pam(pose);
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                if (i != j) CHECK(pam.values.at(c, i, j) + pam.values.at(c, j, i) == 0.0);
            }
        }
    }

    PoseAnnotation shifted = pose;
    for (auto& kp : shifted.keypoints) {
        kp.x += 0.1;
        kp.y -= 0.05;
    }
    PoseAdjacencyMatrix pam2 = encode_pam(shifted);
    for (int i = 0; i < 6; ++i) {
        CHECK(pam2.values.at(0, i, i) == doctest::Approx(pam.values.at(0, i, i) + 0.1).epsilon(1e-15));
        CHECK(pam2.values.at(1, i, i) == doctest::Approx(pam.values.at(1, i, i) - 0.05).epsilon(1e-15));
    }
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                if (i != j) {
                    CHECK(pam2.values.at(c, i, j) ==
                          doctest::Approx(pam.values.at(c, i, j)).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("pam_consistency: zero for encoded, mean |eps| under off-diagonal noise") {
    Rng rng(53);
    PoseAnnotation pose = random_pose(5, rng);
    PoseAdjacencyMatrix pam = encode_pam(pose);
    CHECK(pam_consistency(pam) == 0.0);

    const double eps = 0.125;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j) {
                if (i != j) pam.values.at(c, i, j) += eps;
            }
        }
    }
    CHECK(pam_consistency(pam) == doctest::Approx(eps).epsilon(1e-12));

    // Mixed-sign perturbation checked against a direct loop.
    PoseAdjacencyMatrix pam2 = encode_pam(pose);
    double acc = 0.0;
    int count = 0;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j) {
                if (i == j) continue;
                const double delta = rng.uniform(-0.3, 0.3);
                pam2.values.at(c, i, j) += delta;
                acc += std::fabs(delta);
                ++count;
            }
        }
    }
    CHECK(pam_consistency(pam2) == doctest::Approx(acc / count).epsilon(1e-12));
}

TEST_CASE("parse_alphapose_json: normalization, ordering, multi-person drops") {
    FrameMeta meta;
    meta.width = 1280;
    meta.height = 720;
    meta.timestamps = {{0, 1000}, {1, 1050}, {2, 1100}};

    const std::string json = R"([
      {"image_id": "1.jpg", "keypoints": [640, 360, 0.9, 0, 0, 0.5, 1280, 720, 0.7], "score": 0.9},
      {"image_id": "0.jpg", "keypoints": [128, 72, 1.0, 256, 144, 1.0, 384, 216, 1.0], "score": 0.8},
      {"image_id": "1.jpg", "keypoints": [1, 2, 0.1, 3, 4, 0.2, 5, 6, 0.3], "score": 0.4}
    ])";
    AlphaPoseParseResult result = parse_alphapose_json(json, meta, 3);
    REQUIRE(result.poses.size() == 2);
    CHECK(result.dropped_extra_persons == 1);
    CHECK(result.frame_indices[0] == 0);
    CHECK(result.frame_indices[1] == 1);
    CHECK(result.poses[1].keypoints[0].x == doctest::Approx(0.5));
    CHECK(result.poses[1].keypoints[0].y == doctest::Approx(0.5));
    CHECK(result.poses[1].keypoints[2].x == doctest::Approx(1.0));
    CHECK(result.poses[0].timestamp_ms == 1000);
    CHECK(result.poses[1].timestamp_ms == 1050);
}

TEST_CASE("parse_alphapose_json: arity and JSON errors") {
    FrameMeta meta;
    meta.width = 100;
    meta.height = 100;
    meta.timestamps = {{0, 0}};

    const std::string bad_arity = R"([{"image_id": "0.jpg", "keypoints": [1, 2, 0.5, 3, 4], "score": 1}])";
    CHECK_THROWS_WITH_AS(parse_alphapose_json(bad_arity, meta, 2),
                         doctest::Contains("record 0"), DataError);

    CHECK_THROWS_AS(parse_alphapose_json("not json at all", meta, 2), DataError);
}

TEST_CASE("parse_frame_meta parses header and rows") {
    FrameMeta meta = parse_frame_meta("#frames 1280 720\n0,100\n1,150\n");
    CHECK(meta.width == 1280);
    CHECK(meta.height == 720);
    REQUIRE(meta.timestamps.size() == 2);
    CHECK(meta.timestamp_for(1) == 150);
    CHECK_THROWS_AS(parse_frame_meta("1280 720\n"), DataError);
    CHECK_THROWS_AS(meta.timestamp_for(9), DataError);
}
