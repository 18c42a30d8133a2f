#pragma once

// Flat key-value experiment configuration. One key per line, `key = value`,
// `#` comments, unknown keys rejected. serialize_config / parse_config
// round-trip exactly (doubles written with 17 significant digits).

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"

namespace fedapa {

struct ExperimentConfig {
    // data source: synthetic unless data_csv is set
    std::string data_csv;
    SynthSpec synth;

    // protocol
    std::string mode = "fedapa";
    int rounds = 200;
    double static_lambda = 1.0;  // only used by fedapa_static_lambda

    // local optimization
    int batch = 16;
    double lr = 0.01;
    double momentum = 0.5;
    double weight_decay = 1e-5;
    int local_epochs = 1;

    // prototypes & losses
    double tau_agg = 0.5;
    double tau_loss = 0.5;
    int d_feat = 256;
    double lambda_min = 0.0;
    double lambda_max = 1.0;
    int warmup_rounds = 50;

    // per-client encoder presets; a single entry broadcasts to every client
    std::vector<std::string> arch = {"middle"};

    // run plumbing
    std::uint64_t seed = 1;
    std::string out = "runs/out";
    int threads = 0;                    // 0 = sequential client execution
    std::string server_log = "sparse";  // off | sparse | full
    bool exclude_self = false;
    bool sample_weighted_padding = false;

    bool operator==(const ExperimentConfig&) const = default;

    bool is_fedapa_family() const {
        return mode == "fedapa" || mode == "fedapa_no_lc" ||
               mode == "fedapa_static_lambda";
    }

    void validate() const {
        if (rounds < 1) throw ConfigError("rounds: must be >= 1");
        if (mode != "fedapa" && mode != "uniform_proto" && mode != "local_only" &&
            mode != "fedapa_no_lc" && mode != "fedapa_static_lambda")
            throw ConfigError("mode: unrecognized '" + mode + "'");
        if (batch < 1) throw ConfigError("batch: must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr: must be > 0");
        if (momentum < 0.0) throw ConfigError("momentum: must be >= 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay: must be >= 0");
        if (local_epochs < 1) throw ConfigError("local_epochs: must be >= 1");
        if (!(tau_agg > 0.0)) throw ConfigError("tau_agg: must be > 0");
        if (!(tau_loss > 0.0)) throw ConfigError("tau_loss: must be > 0");
        if (d_feat < 1) throw ConfigError("d_feat: must be >= 1");
        if (lambda_min > lambda_max)
            throw ConfigError("lambda_min: exceeds lambda_max");
        if (lambda_min < 0.0) throw ConfigError("lambda_min: must be >= 0");
        if (warmup_rounds < 1) throw ConfigError("warmup_rounds: must be >= 1");
        if (static_lambda < 0.0) throw ConfigError("static_lambda: must be >= 0");
        if (arch.empty()) throw ConfigError("arch: at least one preset required");
        for (const auto& a : arch)
            if (a != "tiny" && a != "middle" && a != "large")
                throw ConfigError("arch: unknown preset '" + a + "'");
        if (threads < 0) throw ConfigError("threads: must be >= 0");
        if (server_log != "off" && server_log != "sparse" && server_log != "full")
            throw ConfigError("server_log: must be off|sparse|full");
        if (out.empty()) throw ConfigError("out: must not be empty");
        if (data_csv.empty()) {
            try {
                synth.validate();
            } catch (const Error& e) {
                throw ConfigError(std::string("synthetic data: ") + e.what());
            }
            if (arch.size() != 1 &&
                static_cast<int>(arch.size()) != synth.num_clients)
                throw ConfigError("arch: list length " + std::to_string(arch.size()) +
                                  " != clients " + std::to_string(synth.num_clients));
        }
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        // stoull tolerates a sign and wraps silently; refuse both
        if (v.empty() || v[0] == '-' || v[0] == '+')
            throw std::invalid_argument("sign on unsigned value");
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");

        if (key == "mode") cfg.mode = val;
        else if (key == "rounds") cfg.rounds = static_cast<int>(detail::parse_int(key, val));
        else if (key == "seed") cfg.seed = detail::parse_u64(key, val);
        else if (key == "out") cfg.out = val;
        else if (key == "threads") cfg.threads = static_cast<int>(detail::parse_int(key, val));
        else if (key == "server_log") cfg.server_log = val;
        else if (key == "data_csv") cfg.data_csv = val;
        else if (key == "clients") cfg.synth.num_clients = static_cast<int>(detail::parse_int(key, val));
        else if (key == "classes") cfg.synth.num_classes = static_cast<int>(detail::parse_int(key, val));
        else if (key == "input_dim") cfg.synth.input_dim = static_cast<int>(detail::parse_int(key, val));
        else if (key == "samples_per_client") cfg.synth.samples_per_client = static_cast<int>(detail::parse_int(key, val));
        else if (key == "dirichlet_beta") cfg.synth.dirichlet_beta = detail::parse_double(key, val);
        else if (key == "feature_skew") cfg.synth.feature_skew_strength = detail::parse_double(key, val);
        else if (key == "class_separation") cfg.synth.class_separation = detail::parse_double(key, val);
        else if (key == "noise_sigma") cfg.synth.noise_sigma = detail::parse_double(key, val);
        else if (key == "train_fraction") cfg.synth.train_fraction = detail::parse_double(key, val);
        else if (key == "batch") cfg.batch = static_cast<int>(detail::parse_int(key, val));
        else if (key == "lr") cfg.lr = detail::parse_double(key, val);
        else if (key == "momentum") cfg.momentum = detail::parse_double(key, val);
        else if (key == "weight_decay") cfg.weight_decay = detail::parse_double(key, val);
        else if (key == "local_epochs") cfg.local_epochs = static_cast<int>(detail::parse_int(key, val));
        else if (key == "tau_agg") cfg.tau_agg = detail::parse_double(key, val);
        else if (key == "tau_loss") cfg.tau_loss = detail::parse_double(key, val);
        else if (key == "d_feat") cfg.d_feat = static_cast<int>(detail::parse_int(key, val));
        else if (key == "lambda_min") cfg.lambda_min = detail::parse_double(key, val);
        else if (key == "lambda_max") cfg.lambda_max = detail::parse_double(key, val);
        else if (key == "warmup_rounds") cfg.warmup_rounds = static_cast<int>(detail::parse_int(key, val));
        else if (key == "static_lambda") cfg.static_lambda = detail::parse_double(key, val);
        else if (key == "exclude_self") cfg.exclude_self = detail::parse_bool(key, val);
        else if (key == "sample_weighted_padding") cfg.sample_weighted_padding = detail::parse_bool(key, val);
        else if (key == "arch") {
            cfg.arch.clear();
            std::istringstream as(val);
            std::string tok;
            while (std::getline(as, tok, ',')) {
                tok = detail::trim(tok);
                if (!tok.empty()) cfg.arch.push_back(tok);
            }
            if (cfg.arch.empty()) throw ConfigError("arch: empty list");
        } else {
            throw ConfigError("unknown key '" + key + "' (line " +
                              std::to_string(lineno) + ")");
        }
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "mode = " << cfg.mode << '\n';
    os << "rounds = " << cfg.rounds << '\n';
    os << "seed = " << cfg.seed << '\n';
    os << "out = " << cfg.out << '\n';
    os << "threads = " << cfg.threads << '\n';
    os << "server_log = " << cfg.server_log << '\n';
    os << "data_csv = " << cfg.data_csv << '\n';
    os << "clients = " << cfg.synth.num_clients << '\n';
    os << "classes = " << cfg.synth.num_classes << '\n';
    os << "input_dim = " << cfg.synth.input_dim << '\n';
    os << "samples_per_client = " << cfg.synth.samples_per_client << '\n';
    os << "dirichlet_beta = " << detail::fmt_double(cfg.synth.dirichlet_beta) << '\n';
    os << "feature_skew = " << detail::fmt_double(cfg.synth.feature_skew_strength) << '\n';
    os << "class_separation = " << detail::fmt_double(cfg.synth.class_separation) << '\n';
    os << "noise_sigma = " << detail::fmt_double(cfg.synth.noise_sigma) << '\n';
    os << "train_fraction = " << detail::fmt_double(cfg.synth.train_fraction) << '\n';
    os << "batch = " << cfg.batch << '\n';
    os << "lr = " << detail::fmt_double(cfg.lr) << '\n';
    os << "momentum = " << detail::fmt_double(cfg.momentum) << '\n';
    os << "weight_decay = " << detail::fmt_double(cfg.weight_decay) << '\n';
    os << "local_epochs = " << cfg.local_epochs << '\n';
    os << "tau_agg = " << detail::fmt_double(cfg.tau_agg) << '\n';
    os << "tau_loss = " << detail::fmt_double(cfg.tau_loss) << '\n';
    os << "d_feat = " << cfg.d_feat << '\n';
    os << "lambda_min = " << detail::fmt_double(cfg.lambda_min) << '\n';
    os << "lambda_max = " << detail::fmt_double(cfg.lambda_max) << '\n';
    os << "warmup_rounds = " << cfg.warmup_rounds << '\n';
    os << "static_lambda = " << detail::fmt_double(cfg.static_lambda) << '\n';
    std::string archs;
    for (const auto& a : cfg.arch) {
        if (!archs.empty()) archs += ",";
        archs += a;
    }
    os << "arch = " << archs << '\n';
    os << "exclude_self = " << (cfg.exclude_self ? "true" : "false") << '\n';
    os << "sample_weighted_padding = "
       << (cfg.sample_weighted_padding ? "true" : "false") << '\n';
    return os.str();
}

}  // namespace fedapa
