#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ckd/pam.hpp"
#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

struct CsiSample {
    std::int64_t timestamp_ms = 0;
    std::vector<int> shape;                 // [S, TX, RX]
    std::vector<std::complex<double>> csi;  // row-major over shape
    int source_row = -1;                    // originating line in the CSI file
};

struct FrameRecord {
    std::int64_t timestamp_ms = 0;
    Tensor frame;  // [3, H, W], values in [0,1]
    std::optional<PoseAnnotation> pose;
    std::optional<int> class_label;
    int frame_index = -1;
};

struct SyncedPair {
    int frame_id = 0;  // index into the frame list
    int csi_id = 0;    // index into the CSI list
    std::int64_t lag_ms = 0;  // csi timestamp minus frame timestamp
};

struct SyncResult {
    std::vector<SyncedPair> pairs;
    int dropped_frames = 0;
};

struct DatasetSplit {
    std::vector<int> train;  // pair ids
    std::vector<int> test;
    std::uint64_t seed = 0;
};

struct CsiParseResult {
    std::vector<CsiSample> samples;  // ordered by timestamp (stable)
    int non_monotone_warnings = 0;
};

/// Text interchange format: header "#csi S TX RX", then one line per sample:
/// epoch_ms,re_0,im_0,...,re_{S*TX*RX-1},im_{S*TX*RX-1}.
CsiParseResult parse_csi_file(const std::string& text);
std::string serialize_csi(const std::vector<CsiSample>& samples, int S, int TX, int RX);

/// Per-sample |csi| followed by dataset-level standardization (global mean
/// and std over all magnitude entries, std floored at 1e-8).
std::vector<Tensor> magnitude_normalize(const std::vector<CsiSample>& samples);

/// Greedy in frame order: each frame takes the nearest unused CSI sample
/// within the tolerance (ties break toward the earlier sample); unmatched
/// frames are dropped and counted. Inputs must be timestamp-sorted.
SyncResult synchronize(const std::vector<FrameRecord>& frames,
                       const std::vector<CsiSample>& csi, std::int64_t tolerance_ms);

/// Deterministic shuffle by seed, first floor(ratio*n) ids to train.
DatasetSplit split_dataset(int n_pairs, double ratio, std::uint64_t seed);

struct SynthConfig {
    int num_classes = 8;
    int samples_per_class = 100;
    double noise_sigma = 0.05;
    double jitter = 0.02;
    std::uint64_t channel_mixing_seed = 7;
    int k_keypoints = 4;
    int frame_h = 32;
    int frame_w = 32;
    int csi_s = 30;
    int csi_tx = 3;
    int csi_rx = 3;

    void validate() const;
};

struct SynthDataset {
    std::vector<FrameRecord> frames;  // with poses and labels, 20 fps timestamps
    std::vector<CsiSample> csi;       // 100 Hz timestamps
    std::vector<SyncedPair> truth_pairs;
    std::vector<PoseAnnotation> templates;  // one per class
};

/// Synthetic cross-modal data: per class a template pose, jittered per
/// sample; the frame is a stick-figure rasterization; the CSI is a fixed
/// seeded linear mix of the keypoint vector through tanh plus Gaussian noise.
/// With noise_sigma = 0 the CSI is an exact deterministic function of the
/// pose.
SynthDataset synth_generate(const SynthConfig& cfg, Rng rng);

/// Raw float-map frame file: text header "P7 C H W\n" followed by C*H*W
/// little-endian 64-bit floats.
std::string serialize_frame(const Tensor& frame);
Tensor parse_frame(const std::string& bytes);

} // namespace ckd
