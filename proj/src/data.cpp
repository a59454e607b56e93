#include "ckd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ckd/errors.hpp"

namespace ckd {

namespace {

static_assert(sizeof(double) == 8, "64-bit doubles required");

void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v); // shortest round-trip form
    out.append(buf, res.ptr);
}

double parse_double(const char*& p, const char* end, const char* what, int line_no) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    double v = 0.0;
    auto res = std::from_chars(p, end, v);
    if (res.ec != std::errc()) {
        throw DataError(std::string(what) + ": line " + std::to_string(line_no) +
                        ": expected a number");
    }
    p = res.ptr;
    return v;
}

} // namespace

// -- CSI interchange ---------------------------------------------------------

CsiParseResult parse_csi_file(const std::string& text) {
    CsiParseResult result;
    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= text.size()) return false;
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        line = std::string_view(text).substr(pos, nl - pos);
        pos = nl + 1;
        return true;
    };

    std::string_view header;
    if (!next_line(header)) throw DataError("csi: empty file (missing '#csi S TX RX' header)");
    int S = 0, TX = 0, RX = 0;
    {
        std::istringstream hs{std::string(header)};
        std::string tag;
        hs >> tag >> S >> TX >> RX;
        if (tag != "#csi" || S < 1 || TX < 1 || RX < 1) {
            throw DataError("csi: expected header '#csi S TX RX', got '" + std::string(header) + "'");
        }
    }
    const int M = S * TX * RX;

    std::string_view line;
    int line_no = 1;
    int row = 0;
    std::int64_t prev_ts = std::numeric_limits<std::int64_t>::min();
    while (next_line(line)) {
        ++line_no;
        if (line.empty()) continue;
        const char* p = line.data();
        const char* end = p + line.size();

        CsiSample sample;
        sample.shape = {S, TX, RX};
        sample.source_row = row;

        long long ts = 0;
        auto res = std::from_chars(p, end, ts);
        if (res.ec != std::errc()) {
            throw DataError("csi: line " + std::to_string(line_no) + ": expected a timestamp");
        }
        p = res.ptr;
        sample.timestamp_ms = ts;

        sample.csi.reserve(static_cast<std::size_t>(M));
        int values = 0;
        while (p < end) {
            while (p < end && (*p == ' ' || *p == '\t')) ++p;
            if (p >= end) break;
            if (*p != ',') {
                throw DataError("csi: line " + std::to_string(line_no) + ": expected ','");
            }
            ++p;
            const double re = parse_double(p, end, "csi", line_no);
            while (p < end && (*p == ' ' || *p == '\t')) ++p;
            if (p >= end || *p != ',') {
                throw DataError("csi: line " + std::to_string(line_no) +
                                ": dangling real value without imaginary part");
            }
            ++p;
            const double im = parse_double(p, end, "csi", line_no);
            sample.csi.emplace_back(re, im);
            values += 2;
        }
        if (values != 2 * M) {
            throw DataError("csi: line " + std::to_string(line_no) + ": expected " +
                            std::to_string(2 * M) + " values, got " + std::to_string(values));
        }
        if (sample.timestamp_ms < prev_ts) ++result.non_monotone_warnings;
        prev_ts = sample.timestamp_ms;
        result.samples.push_back(std::move(sample));
        ++row;
    }

    std::stable_sort(result.samples.begin(), result.samples.end(),
                     [](const CsiSample& a, const CsiSample& b) {
                         return a.timestamp_ms < b.timestamp_ms;
                     });
    return result;
}

std::string serialize_csi(const std::vector<CsiSample>& samples, int S, int TX, int RX) {
    const int M = S * TX * RX;
    std::string out;
    out.reserve(samples.size() * static_cast<std::size_t>(M) * 20 + 64);
    out += "#csi " + std::to_string(S) + " " + std::to_string(TX) + " " + std::to_string(RX) + "\n";
    for (const auto& s : samples) {
        if (static_cast<int>(s.csi.size()) != M) {
            throw DataError("serialize_csi: sample has " + std::to_string(s.csi.size()) +
                            " entries, expected " + std::to_string(M));
        }
        out += std::to_string(s.timestamp_ms);
        for (const auto& z : s.csi) {
            out += ',';
            append_double(out, z.real());
            out += ',';
            append_double(out, z.imag());
        }
        out += '\n';
    }
    return out;
}

// -- normalization -------------------------------------------------------------

std::vector<Tensor> magnitude_normalize(const std::vector<CsiSample>& samples) {
    if (samples.empty()) throw DataError("magnitude_normalize: empty sample list");
    std::vector<Tensor> mags;
    mags.reserve(samples.size());
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& s : samples) {
        Tensor t(s.shape);
        for (std::size_t i = 0; i < s.csi.size(); ++i) {
            t[static_cast<std::int64_t>(i)] = std::abs(s.csi[i]);
        }
        sum += t.sum();
        count += t.size();
        mags.push_back(std::move(t));
    }
    const double mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (const auto& t : mags) {
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const double d = t[i] - mean;
            var += d * d;
        }
    }
    var /= static_cast<double>(count);
    const double std_dev = std::max(std::sqrt(var), 1e-8);
    for (auto& t : mags) {
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = (t[i] - mean) / std_dev;
    }
    return mags;
}

// -- synchronization --------------------------------------------------------------

SyncResult synchronize(const std::vector<FrameRecord>& frames,
                       const std::vector<CsiSample>& csi, std::int64_t tolerance_ms) {
    for (std::size_t i = 1; i < frames.size(); ++i) {
        if (frames[i].timestamp_ms < frames[i - 1].timestamp_ms) {
            throw DataError("synchronize: frame list is not timestamp-sorted");
        }
    }
    for (std::size_t i = 1; i < csi.size(); ++i) {
        if (csi[i].timestamp_ms < csi[i - 1].timestamp_ms) {
            throw DataError("synchronize: csi list is not timestamp-sorted");
        }
    }

    SyncResult result;
    std::vector<bool> used(csi.size(), false);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::int64_t ts = frames[f].timestamp_ms;
        // First CSI with timestamp >= ts.
        auto it = std::lower_bound(csi.begin(), csi.end(), ts,
                                   [](const CsiSample& s, std::int64_t t) {
                                       return s.timestamp_ms < t;
                                   });
        std::size_t right = static_cast<std::size_t>(it - csi.begin());
        // Nearest unused candidate within tolerance; ties go to the earlier
        // sample, so probe the left side first at equal distance.
        std::ptrdiff_t best = -1;
        std::int64_t best_abs = tolerance_ms + 1;
        std::size_t l = right;
        while (l > 0) {
            --l;
            if (ts - csi[l].timestamp_ms > tolerance_ms) break;
            if (!used[l]) {
                best = static_cast<std::ptrdiff_t>(l);
                best_abs = ts - csi[l].timestamp_ms;
                break;
            }
        }
        for (std::size_t r = right; r < csi.size(); ++r) {
            const std::int64_t d = csi[r].timestamp_ms - ts;
            if (d > tolerance_ms || d >= best_abs) break;
            if (!used[r]) {
                best = static_cast<std::ptrdiff_t>(r);
                best_abs = d;
                break;
            }
        }
        if (best < 0) {
            ++result.dropped_frames;
            continue;
        }
        used[static_cast<std::size_t>(best)] = true;
        SyncedPair p;
        p.frame_id = static_cast<int>(f);
        p.csi_id = static_cast<int>(best);
        p.lag_ms = csi[static_cast<std::size_t>(best)].timestamp_ms - ts;
        result.pairs.push_back(p);
    }
    return result;
}

// -- splitting -----------------------------------------------------------------------

DatasetSplit split_dataset(int n_pairs, double ratio, std::uint64_t seed) {
    if (n_pairs < 1) throw DataError("split_dataset: empty input");
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw DataError("split_dataset: ratio must be in (0,1)");
    }
    std::vector<int> ids(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) ids[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng(seed).child("split");
    rng.shuffle(ids);
    const int n_train = static_cast<int>(std::floor(ratio * n_pairs));
    DatasetSplit split;
    split.seed = seed;
    split.train.assign(ids.begin(), ids.begin() + n_train);
    split.test.assign(ids.begin() + n_train, ids.end());
    return split;
}

// -- synthetic dataset -----------------------------------------------------------------

void SynthConfig::validate() const {
    if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
    if (samples_per_class < 1) throw ConfigError("synth: samples_per_class must be >= 1");
    if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
    if (jitter <= 0.0) throw ConfigError("synth: jitter must be > 0");
    if (k_keypoints < 2) throw ConfigError("synth: k must be >= 2");
    if (frame_h < 8 || frame_w < 8) throw ConfigError("synth: frame size too small");
    if (csi_s < 1 || csi_tx < 1 || csi_rx < 1) throw ConfigError("synth: bad csi shape");
}

namespace {

double pose_distance(const PoseAnnotation& a, const PoseAnnotation& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.keypoints.size(); ++i) {
        const double dx = a.keypoints[i].x - b.keypoints[i].x;
        const double dy = a.keypoints[i].y - b.keypoints[i].y;
        acc += std::sqrt(dx * dx + dy * dy);
    }
    return acc / static_cast<double>(a.keypoints.size());
}

void draw_point(Tensor& frame, int ch, double nx, double ny) {
    const int H = frame.dim(1), W = frame.dim(2);
    const int cx = std::clamp(static_cast<int>(nx * (W - 1) + 0.5), 0, W - 1);
    const int cy = std::clamp(static_cast<int>(ny * (H - 1) + 0.5), 0, H - 1);
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            const int x = cx + dx, y = cy + dy;
            if (x >= 0 && x < W && y >= 0 && y < H) frame.at(ch, y, x) = 1.0;
        }
    }
}

void draw_line(Tensor& frame, int ch, double x0, double y0, double x1, double y1) {
    const int H = frame.dim(1), W = frame.dim(2);
    const int steps = 2 * std::max(H, W);
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const double nx = x0 + t * (x1 - x0);
        const double ny = y0 + t * (y1 - y0);
        const int x = std::clamp(static_cast<int>(nx * (W - 1) + 0.5), 0, W - 1);
        const int y = std::clamp(static_cast<int>(ny * (H - 1) + 0.5), 0, H - 1);
        frame.at(ch, y, x) = std::max(frame.at(ch, y, x), 0.6);
    }
}

std::vector<std::pair<int, int>> skeleton_edges(int K) {
    if (K == 18) {
        // Nose, neck, shoulders/elbows/wrists, hips/knees/ankles, eyes, ears.
        return {{0, 1},  {1, 2},   {2, 3},   {3, 4},  {1, 5},  {5, 6},  {6, 7},
                {1, 8},  {8, 9},   {9, 10},  {1, 11}, {11, 12}, {12, 13}, {0, 14},
                {14, 16}, {0, 15}, {15, 17}};
    }
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i + 1 < K; ++i) edges.emplace_back(i, i + 1);
    return edges;
}

Tensor rasterize_pose(const PoseAnnotation& pose, int H, int W) {
    Tensor frame({3, H, W});
    const auto edges = skeleton_edges(pose.k());
    int e = 0;
    for (const auto& [a, b] : edges) {
        draw_line(frame, e % 3, pose.keypoints[static_cast<std::size_t>(a)].x,
                  pose.keypoints[static_cast<std::size_t>(a)].y,
                  pose.keypoints[static_cast<std::size_t>(b)].x,
                  pose.keypoints[static_cast<std::size_t>(b)].y);
        ++e;
    }
    for (int i = 0; i < pose.k(); ++i) {
        draw_point(frame, i % 3, pose.keypoints[static_cast<std::size_t>(i)].x,
                   pose.keypoints[static_cast<std::size_t>(i)].y);
    }
    return frame;
}

} // namespace

SynthDataset synth_generate(const SynthConfig& cfg, Rng rng) {
    cfg.validate();
    SynthDataset ds;
    Rng template_rng = rng.child("synth/templates");
    Rng jitter_rng = rng.child("synth/jitter");
    Rng noise_rng = rng.child("synth/noise");
    Rng mix_rng(cfg.channel_mixing_seed); // fixed channel model, independent of the root seed

    // Class templates, resampled until pairwise separation clears the jitter.
    const double min_sep = 5.0 * cfg.jitter;
    for (int attempt = 0; attempt < 1000 && static_cast<int>(ds.templates.size()) < cfg.num_classes;
         ++attempt) {
        PoseAnnotation candidate;
        candidate.keypoints.resize(static_cast<std::size_t>(cfg.k_keypoints));
        for (auto& kp : candidate.keypoints) {
            kp.x = template_rng.uniform(0.15, 0.85);
            kp.y = template_rng.uniform(0.15, 0.85);
            kp.confidence = 1.0;
        }
        bool ok = true;
        for (const auto& t : ds.templates) {
            if (pose_distance(candidate, t) <= min_sep) {
                ok = false;
                break;
            }
        }
        if (ok) ds.templates.push_back(std::move(candidate));
    }
    if (static_cast<int>(ds.templates.size()) < cfg.num_classes) {
        throw DataError("synth_generate: could not separate class templates by 5x jitter");
    }

    // Fixed mixing map: keypoint vector (2K) -> CSI entries (2M reals) via tanh.
    const int M = cfg.csi_s * cfg.csi_tx * cfg.csi_rx;
    const int in_dim = 2 * cfg.k_keypoints;
    std::vector<double> mix_w(static_cast<std::size_t>(2 * M) * in_dim);
    std::vector<double> mix_b(static_cast<std::size_t>(2 * M));
    const double w_scale = 3.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& w : mix_w) w = mix_rng.normal() * w_scale;
    for (auto& b : mix_b) b = mix_rng.normal() * 0.3;

    auto csi_from_pose = [&](const PoseAnnotation& pose, std::int64_t ts) {
        CsiSample s;
        s.timestamp_ms = ts;
        s.shape = {cfg.csi_s, cfg.csi_tx, cfg.csi_rx};
        s.csi.resize(static_cast<std::size_t>(M));
        std::vector<double> v(static_cast<std::size_t>(in_dim));
        for (int i = 0; i < cfg.k_keypoints; ++i) {
            v[static_cast<std::size_t>(2 * i)] = pose.keypoints[static_cast<std::size_t>(i)].x;
            v[static_cast<std::size_t>(2 * i + 1)] = pose.keypoints[static_cast<std::size_t>(i)].y;
        }
        for (int m = 0; m < 2 * M; ++m) {
            double acc = mix_b[static_cast<std::size_t>(m)];
            const double* wrow = mix_w.data() + static_cast<std::size_t>(m) * in_dim;
            for (int i = 0; i < in_dim; ++i) acc += wrow[i] * v[static_cast<std::size_t>(i)];
            double z = std::tanh(acc);
            if (cfg.noise_sigma > 0.0) z += cfg.noise_sigma * noise_rng.normal();
            if (m % 2 == 0) {
                s.csi[static_cast<std::size_t>(m / 2)].real(z);
            } else {
                s.csi[static_cast<std::size_t>(m / 2)].imag(z);
            }
        }
        return s;
    };

    // Round-robin over classes at 20 fps; CSI at 100 Hz (five per frame slot,
    // the one at the frame timestamp is the ground-truth partner).
    int frame_index = 0;
    for (int s = 0; s < cfg.samples_per_class; ++s) {
        for (int c = 0; c < cfg.num_classes; ++c) {
            PoseAnnotation pose = ds.templates[static_cast<std::size_t>(c)];
            for (auto& kp : pose.keypoints) {
                kp.x = std::clamp(kp.x + cfg.jitter * jitter_rng.normal(), 0.0, 1.0);
                kp.y = std::clamp(kp.y + cfg.jitter * jitter_rng.normal(), 0.0, 1.0);
            }
            const std::int64_t ts = static_cast<std::int64_t>(frame_index) * 50;
            pose.timestamp_ms = ts;
            pose.class_label = c;

            FrameRecord fr;
            fr.timestamp_ms = ts;
            fr.frame = rasterize_pose(pose, cfg.frame_h, cfg.frame_w);
            fr.pose = pose;
            fr.class_label = c;
            fr.frame_index = frame_index;
            ds.frames.push_back(std::move(fr));

            for (int sub = 0; sub < 5; ++sub) {
                CsiSample cs = csi_from_pose(pose, ts + 10 * sub);
                cs.source_row = static_cast<int>(ds.csi.size());
                if (sub == 0) {
                    SyncedPair p;
                    p.frame_id = frame_index;
                    p.csi_id = static_cast<int>(ds.csi.size());
                    p.lag_ms = 0;
                    ds.truth_pairs.push_back(p);
                }
                ds.csi.push_back(std::move(cs));
            }
            ++frame_index;
        }
    }
    return ds;
}

// -- frame float-map format ---------------------------------------------------------

std::string serialize_frame(const Tensor& frame) {
    if (frame.rank() != 3) throw DataError("serialize_frame: expected a (C,H,W) tensor");
    std::string out = "P7 " + std::to_string(frame.dim(0)) + " " + std::to_string(frame.dim(1)) +
                      " " + std::to_string(frame.dim(2)) + "\n";
    const std::size_t bytes = static_cast<std::size_t>(frame.size()) * sizeof(double);
    const std::size_t header = out.size();
    out.resize(header + bytes);
    std::memcpy(out.data() + header, frame.data(), bytes); // little-endian hosts only
    return out;
}

Tensor parse_frame(const std::string& bytes) {
    const std::size_t nl = bytes.find('\n');
    if (nl == std::string::npos) throw DataError("frame: missing 'P7 C H W' header");
    std::istringstream hs(bytes.substr(0, nl));
    std::string tag;
    int C = 0, H = 0, W = 0;
    hs >> tag >> C >> H >> W;
    if (tag != "P7" || C < 1 || H < 1 || W < 1) {
        throw DataError("frame: malformed header '" + bytes.substr(0, nl) + "'");
    }
    const std::size_t expect = static_cast<std::size_t>(C) * H * W * sizeof(double);
    if (bytes.size() - nl - 1 != expect) {
        throw DataError("frame: payload size " + std::to_string(bytes.size() - nl - 1) +
                        " does not match header (expected " + std::to_string(expect) + " bytes)");
    }
    Tensor t({C, H, W});
    std::memcpy(t.data(), bytes.data() + nl + 1, expect);
    return t;
}

} // namespace ckd
