#include "ckd/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ckd/errors.hpp"

namespace fs = std::filesystem;

namespace ckd {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw DataError("write failed for '" + path + "'");
}

namespace {

std::string frame_filename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d.fmap", index);
    return buf;
}

} // namespace

void save_dataset(const std::string& dir, const SynthDataset& ds, const SynthConfig& cfg) {
    fs::create_directories(fs::path(dir) / "frames");

    write_file((fs::path(dir) / "csi.txt").string(),
               serialize_csi(ds.csi, cfg.csi_s, cfg.csi_tx, cfg.csi_rx));

    std::string meta = "#frames " + std::to_string(cfg.frame_w) + " " + std::to_string(cfg.frame_h) + "\n";
    std::string labels;
    std::string poses = "[\n";
    bool first = true;
    for (const auto& fr : ds.frames) {
        meta += std::to_string(fr.frame_index) + "," + std::to_string(fr.timestamp_ms) + "\n";
        labels += std::to_string(fr.frame_index) + "," + std::to_string(*fr.class_label) + "\n";
        if (!first) poses += ",\n";
        poses += pose_to_alphapose_record(*fr.pose, fr.frame_index, cfg.frame_w, cfg.frame_h);
        first = false;
        write_file((fs::path(dir) / "frames" / frame_filename(fr.frame_index)).string(),
                   serialize_frame(fr.frame));
    }
    poses += "\n]\n";
    write_file((fs::path(dir) / "frames.meta").string(), meta);
    write_file((fs::path(dir) / "labels.csv").string(), labels);
    write_file((fs::path(dir) / "poses.json").string(), poses);
}

LoadedDataset load_dataset(const std::string& dir, int expected_k) {
    LoadedDataset out;
    out.meta = parse_frame_meta(read_file((fs::path(dir) / "frames.meta").string()));

    CsiParseResult csi = parse_csi_file(read_file((fs::path(dir) / "csi.txt").string()));
    out.csi = std::move(csi.samples);
    out.csi_warnings = csi.non_monotone_warnings;

    AlphaPoseParseResult poses = parse_alphapose_json(
        read_file((fs::path(dir) / "poses.json").string()), out.meta, expected_k);
    std::map<int, const PoseAnnotation*> pose_by_frame;
    for (std::size_t i = 0; i < poses.poses.size(); ++i) {
        pose_by_frame[poses.frame_indices[i]] = &poses.poses[i];
    }

    std::map<int, int> label_by_frame;
    {
        std::istringstream in(read_file((fs::path(dir) / "labels.csv").string()));
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            int idx = 0, label = 0;
            char comma = 0;
            std::istringstream ls(line);
            if (!(ls >> idx >> comma >> label) || comma != ',') {
                throw DataError("labels.csv line " + std::to_string(line_no) + ": malformed");
            }
            label_by_frame[idx] = label;
        }
    }

    for (const auto& [index, ts] : out.meta.timestamps) {
        FrameRecord fr;
        fr.frame_index = index;
        fr.timestamp_ms = ts;
        fr.frame = parse_frame(read_file((fs::path(dir) / "frames" / frame_filename(index)).string()));
        auto pit = pose_by_frame.find(index);
        if (pit != pose_by_frame.end()) fr.pose = *pit->second;
        auto lit = label_by_frame.find(index);
        if (lit != label_by_frame.end()) fr.class_label = lit->second;
        out.frames.push_back(std::move(fr));
    }
    std::stable_sort(out.frames.begin(), out.frames.end(),
                     [](const FrameRecord& a, const FrameRecord& b) {
                         return a.timestamp_ms < b.timestamp_ms;
                     });
    return out;
}

} // namespace ckd
