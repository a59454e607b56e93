#pragma once

#include <string>
#include <vector>

#include "ckd/data.hpp"

namespace ckd {

/// On-disk dataset layout under one directory:
///   csi.txt       "#csi S TX RX" header + one sample per line
///   frames.meta   "#frames W H" header + "frame_index,epoch_ms" lines
///   frames/frame_NNNNNN.fmap   "P7 C H W" + raw little-endian doubles
///   poses.json    AlphaPose-format keypoint records
///   labels.csv    "frame_index,class" lines
void save_dataset(const std::string& dir, const SynthDataset& ds, const SynthConfig& cfg);

struct LoadedDataset {
    std::vector<FrameRecord> frames;  // timestamp-sorted, poses/labels attached
    std::vector<CsiSample> csi;       // timestamp-sorted
    FrameMeta meta;
    int csi_warnings = 0;
};

LoadedDataset load_dataset(const std::string& dir, int expected_k);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

} // namespace ckd
