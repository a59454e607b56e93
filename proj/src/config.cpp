#include "ckd/config.hpp"

#include <fstream>
#include <sstream>

#include "ckd/errors.hpp"

namespace ckd {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

Config Config::parse_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                              line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        cfg.kv_[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string Config::get_string(const std::string& key, const std::string& def) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
}

double Config::get_double(const std::string& key, double def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
}

int Config::get_int(const std::string& key, int def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t pos = 0;
        int v = std::stoi(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second + "'");
    }
}

std::int64_t Config::get_int64(const std::string& key, std::int64_t def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t pos = 0;
        long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return static_cast<std::int64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second + "'");
    }
}

bool Config::get_bool(const std::string& key, bool def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true|false, got '" + it->second + "'");
}

std::vector<int> Config::get_int_list(const std::string& key, std::vector<int> def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::vector<int> out;
    std::istringstream in(it->second);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected comma-separated integers, got '" +
                              it->second + "'");
        }
    }
    return out;
}

void Config::require_known_keys(const std::set<std::string>& schema) const {
    for (const auto& [key, value] : kv_) {
        if (!schema.count(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

std::string Config::render() const {
    std::ostringstream out;
    for (const auto& [key, value] : kv_) {
        out << key << " = " << value << "\n";
    }
    return out.str();
}

const std::set<std::string>& config_schema() {
    static const std::set<std::string> schema = {
        "seed",
        // synthetic dataset
        "synth.num_classes",
        "synth.samples_per_class",
        "synth.noise_sigma",
        "synth.jitter",
        "synth.channel_mixing_seed",
        "synth.k",
        "synth.frame_h",
        "synth.frame_w",
        "synth.csi_s",
        "synth.csi_tx",
        "synth.csi_rx",
        // pairing / split
        "sync.tolerance_ms",
        "split.ratio",
        // teacher network
        "teacher.channels",
        // student network
        "student.encoder_channels",
        "student.feature_channels",
        "student.feature_h",
        "student.feature_w",
        "student.decoder_channels",
        // training
        "train.epochs",
        "train.batch_size",
        "train.lr",
        "train.milestones",
        "train.gamma",
        "train.lambda_pam",
        // distillation loss
        "ckd.temperature",
        "ckd.alpha",
        "ckd.beta",
        "ckd.weight_mode",
        "ckd.warmup_epochs",
        "ckd.ce_weight",
        "ckd.temp_scale_mode",
        "distill.ckd_scale",
    };
    return schema;
}

} // namespace ckd
