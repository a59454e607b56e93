#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ckd/tensor.hpp"

namespace ckd {

struct Keypoint {
    double x = 0.0;          // normalized image coordinates in [0,1]
    double y = 0.0;
    double confidence = 1.0; // in [0,1]
};

struct PoseAnnotation {
    std::vector<Keypoint> keypoints;
    std::int64_t timestamp_ms = 0;
    std::optional<int> class_label;

    int k() const { return static_cast<int>(keypoints.size()); }
};

/// Two-channel K x K matrix. Channel c's diagonal holds coordinate c of each
/// keypoint; off-diagonal [c,i,j] holds coord_c(i) - coord_c(j), so the
/// off-diagonal part is antisymmetric and fully determined by the diagonal.
struct PoseAdjacencyMatrix {
    Tensor values; // shape [2, K, K]

    int k() const { return values.empty() ? 0 : values.dim(1); }
    void require_valid() const;
};

PoseAdjacencyMatrix encode_pam(const PoseAnnotation& pose);

/// Reads keypoint k from the diagonals, clamped to [0,1]; off-diagonals are
/// ignored so inconsistent predicted matrices still decode. Confidence is 1.
PoseAnnotation decode_pam(const PoseAdjacencyMatrix& pam);

/// Mean absolute violation of values[c,i,j] = values[c,i,i] - values[c,j,j]
/// over the off-diagonal entries. Zero for encoded matrices.
double pam_consistency(const PoseAdjacencyMatrix& pam);

struct FrameMeta {
    int width = 0;
    int height = 0;
    std::vector<std::pair<int, std::int64_t>> timestamps; // frame_index -> epoch ms

    std::int64_t timestamp_for(int frame_index) const;
};

/// Sidecar format: header "#frames W H", then one "frame_index,epoch_ms" line
/// per frame.
FrameMeta parse_frame_meta(const std::string& text);

struct AlphaPoseParseResult {
    std::vector<PoseAnnotation> poses;           // ordered by frame index
    std::vector<int> frame_indices;              // parallel to poses
    int dropped_extra_persons = 0;               // later records for a frame already seen
};

/// AlphaPose-format records: [{"image_id": "...", "keypoints": [x,y,c,...],
/// "score": s}, ...]. Coordinates are normalized by the sidecar frame size and
/// clamped to [0,1]; timestamps come from the sidecar. Frame index is the
/// leading integer of image_id's stem. A record whose keypoints array is not
/// a multiple of 3 in length raises an error naming the record.
AlphaPoseParseResult parse_alphapose_json(const std::string& json_text, const FrameMeta& meta,
                                          int expected_k);

std::string pose_to_alphapose_record(const PoseAnnotation& pose, int frame_index, int width,
                                     int height);

} // namespace ckd
