#include "ckd/pam.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ckd/errors.hpp"

namespace ckd {

void PoseAdjacencyMatrix::require_valid() const {
    if (values.rank() != 3 || values.dim(0) != 2 || values.dim(1) != values.dim(2)) {
        throw std::invalid_argument("PoseAdjacencyMatrix: expected shape [2,K,K], got " +
                                    values.shape_str());
    }
}

PoseAdjacencyMatrix encode_pam(const PoseAnnotation& pose) {
    const int K = pose.k();
    if (K < 1) throw std::invalid_argument("encode_pam: pose has no keypoints");
    for (int i = 0; i < K; ++i) {
        const Keypoint& kp = pose.keypoints[static_cast<std::size_t>(i)];
        if (kp.x < 0.0 || kp.x > 1.0 || kp.y < 0.0 || kp.y > 1.0) {
            throw std::invalid_argument("encode_pam: keypoint " + std::to_string(i) +
                                        " outside [0,1] normalized range");
        }
    }
    PoseAdjacencyMatrix pam;
    pam.values = Tensor({2, K, K});
    for (int c = 0; c < 2; ++c) {
        auto coord = [&](int i) {
            const Keypoint& kp = pose.keypoints[static_cast<std::size_t>(i)];
            return c == 0 ? kp.x : kp.y;
        };
        for (int i = 0; i < K; ++i) {
            for (int j = 0; j < K; ++j) {
                pam.values.at(c, i, j) = i == j ? coord(i) : coord(i) - coord(j);
            }
        }
    }
    return pam;
}

PoseAnnotation decode_pam(const PoseAdjacencyMatrix& pam) {
    pam.require_valid();
    const int K = pam.k();
    PoseAnnotation pose;
    pose.keypoints.resize(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) {
        Keypoint& kp = pose.keypoints[static_cast<std::size_t>(i)];
        kp.x = std::clamp(pam.values.at(0, i, i), 0.0, 1.0);
        kp.y = std::clamp(pam.values.at(1, i, i), 0.0, 1.0);
        kp.confidence = 1.0;
    }
    return pose;
}

double pam_consistency(const PoseAdjacencyMatrix& pam) {
    pam.require_valid();
    const int K = pam.k();
    if (K < 2) return 0.0;
    double acc = 0.0;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < K; ++i) {
            for (int j = 0; j < K; ++j) {
                if (i == j) continue;
                const double expected = pam.values.at(c, i, i) - pam.values.at(c, j, j);
                acc += std::fabs(pam.values.at(c, i, j) - expected);
            }
        }
    }
    return acc / (2.0 * K * (K - 1));
}

std::int64_t FrameMeta::timestamp_for(int frame_index) const {
    for (const auto& [idx, ts] : timestamps) {
        if (idx == frame_index) return ts;
    }
    throw DataError("frame meta: no timestamp for frame index " + std::to_string(frame_index));
}

FrameMeta parse_frame_meta(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("frame meta: empty file");
    FrameMeta meta;
    {
        std::istringstream hs(line);
        std::string tag;
        hs >> tag >> meta.width >> meta.height;
        if (tag != "#frames" || meta.width < 1 || meta.height < 1) {
            throw DataError("frame meta: expected header '#frames W H', got '" + line + "'");
        }
    }
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        int idx = 0;
        long long ts = 0;
        char comma = 0;
        std::istringstream ls(line);
        if (!(ls >> idx >> comma >> ts) || comma != ',') {
            throw DataError("frame meta: malformed line " + std::to_string(line_no) + ": '" + line + "'");
        }
        meta.timestamps.emplace_back(idx, static_cast<std::int64_t>(ts));
    }
    return meta;
}

namespace {

int frame_index_from_image_id(const std::string& image_id) {
    // Leading integer of the stem, e.g. "12.jpg" -> 12, "frame_0042.png" -> 42.
    std::string digits;
    for (char c : image_id) {
        if (c >= '0' && c <= '9') {
            digits.push_back(c);
        } else if (!digits.empty()) {
            break;
        }
    }
    if (digits.empty()) {
        throw DataError("alphapose: cannot derive frame index from image_id '" + image_id + "'");
    }
    return std::stoi(digits);
}

} // namespace

AlphaPoseParseResult parse_alphapose_json(const std::string& json_text, const FrameMeta& meta,
                                          int expected_k) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("alphapose: malformed JSON: ") + e.what());
    }
    if (!doc.is_array()) throw DataError("alphapose: top-level value must be an array of records");

    std::map<int, PoseAnnotation> by_frame;
    AlphaPoseParseResult result;
    int record_no = -1;
    for (const auto& rec : doc) {
        ++record_no;
        if (!rec.is_object() || !rec.contains("image_id") || !rec.contains("keypoints")) {
            throw DataError("alphapose: record " + std::to_string(record_no) +
                            " lacks image_id/keypoints");
        }
        const int frame = frame_index_from_image_id(rec.at("image_id").get<std::string>());
        const auto& kps = rec.at("keypoints");
        if (!kps.is_array() || kps.size() % 3 != 0 ||
            static_cast<int>(kps.size()) != 3 * expected_k) {
            throw DataError("alphapose: record " + std::to_string(record_no) + " (image_id '" +
                            rec.at("image_id").get<std::string>() + "') has " +
                            std::to_string(kps.size()) + " keypoint values, expected " +
                            std::to_string(3 * expected_k));
        }
        if (by_frame.count(frame)) {
            ++result.dropped_extra_persons; // first person per frame wins
            continue;
        }
        PoseAnnotation pose;
        pose.timestamp_ms = meta.timestamp_for(frame);
        pose.keypoints.resize(static_cast<std::size_t>(expected_k));
        for (int i = 0; i < expected_k; ++i) {
            Keypoint& kp = pose.keypoints[static_cast<std::size_t>(i)];
            kp.x = std::clamp(kps[static_cast<std::size_t>(3 * i)].get<double>() / meta.width, 0.0, 1.0);
            kp.y = std::clamp(kps[static_cast<std::size_t>(3 * i + 1)].get<double>() / meta.height, 0.0, 1.0);
            kp.confidence = std::clamp(kps[static_cast<std::size_t>(3 * i + 2)].get<double>(), 0.0, 1.0);
        }
        by_frame.emplace(frame, std::move(pose));
    }
    for (auto& [frame, pose] : by_frame) {
        result.frame_indices.push_back(frame);
        result.poses.push_back(std::move(pose));
    }
    return result;
}

std::string pose_to_alphapose_record(const PoseAnnotation& pose, int frame_index, int width,
                                     int height) {
    nlohmann::json rec;
    rec["image_id"] = std::to_string(frame_index) + ".jpg";
    nlohmann::json kps = nlohmann::json::array();
    for (const auto& kp : pose.keypoints) {
        kps.push_back(kp.x * width);
        kps.push_back(kp.y * height);
        kps.push_back(kp.confidence);
    }
    rec["keypoints"] = std::move(kps);
    rec["score"] = 1.0;
    return rec.dump();
}

} // namespace ckd
