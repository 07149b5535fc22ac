#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mdcs/dataset.hpp"
#include "mdcs/errors.hpp"
#include "mdcs/losses.hpp"
#include "mdcs/optim.hpp"

namespace mdcs::run {

/// Fully resolved experiment configuration. Defaults describe the built-in
/// desk-scale benchmark: a 10-class Gaussian mixture with imbalance factor
/// 100, a balanced test set, and a 3-expert model with lambda {-0.5, 1, 2.5}.
struct TrainConfig {
    // data
    std::string data = "synth";  // synth | csv
    std::string train_csv;
    std::string test_csv;
    int classes = 10;
    int dim = 16;
    int n_max = 500;
    double beta = 100.0;
    double separation = 3.0;
    int test_per_class = 100;
    int many_threshold = 100;
    int few_threshold = 20;

    // model
    int experts = 3;
    std::vector<double> lambdas = {-0.5, 1.0, 2.5};
    std::vector<int> widths = {32, 32};
    double scale = 16.0;

    // optimization
    int epochs = 30;
    int batch_size = 64;
    double lr = 0.1;
    net::Schedule schedule = net::Schedule::Linear;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = true;

    // distillation
    double alpha = 0.6;
    double temperature = 2.0;
    bool detach_teacher = true;
    bool supervise_both_views = true;

    // augmentation
    double weak_jitter = 0.1;
    double strong_jitter = 0.5;
    double strong_dropout = 0.15;
    double strong_scale_min = 0.8;
    double strong_scale_max = 1.2;
    int strong_ops = 1;

    std::uint64_t seed = 1;

    // Not a config-file key: lets tests compare an alpha>0 run against the
    // same run with the distillation code path removed.
    bool force_disable_cs = false;

    loss::DistillConfig distill() const {
        loss::DistillConfig cfg;
        cfg.temperature = temperature;
        cfg.alpha = force_disable_cs ? 0.0 : alpha;
        cfg.detach_teacher = detach_teacher;
        cfg.supervise_both_views = supervise_both_views;
        return cfg;
    }

    data::AugmentPolicy weak_policy() const {
        data::AugmentPolicy p;
        p.kind = data::AugmentKind::Weak;
        p.jitter_sigma = weak_jitter;
        return p;
    }

    data::AugmentPolicy strong_policy() const {
        data::AugmentPolicy p;
        p.kind = data::AugmentKind::Strong;
        p.jitter_sigma = strong_jitter;
        p.dropout_prob = strong_dropout;
        p.scale_min = strong_scale_min;
        p.scale_max = strong_scale_max;
        p.op_count = strong_ops;
        return p;
    }

    net::SgdHyper sgd_hyper() const {
        net::SgdHyper h;
        h.lr0 = lr;
        h.momentum = momentum;
        h.weight_decay = weight_decay;
        h.nesterov = nesterov;
        h.schedule = schedule;
        h.total_epochs = epochs;
        return h;
    }
};

namespace detail {
inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

inline bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "on" || value == "true" || value == "1") return true;
    if (value == "off" || value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean for '" + key + "': " + value);
}

inline double parse_num(const std::string& value, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for '" + key + "': " + value);
    }
}

inline int parse_int(const std::string& value, const std::string& key) {
    const double v = parse_num(value, key);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v) {
        throw ConfigError("config: '" + key + "' must be an integer, got " + value);
    }
    return i;
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(value);
    while (std::getline(in, cur, ',')) parts.push_back(trim(cur));
    return parts;
}

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

/// Parses flat `key = value` lines with `#` comments. Unknown keys are
/// rejected; missing keys keep their defaults; `lambda = auto` resolves to
/// the default assignment for the configured expert count.
inline TrainConfig parse_config(std::istream& in) {
    TrainConfig cfg;
    bool lambda_auto = true;
    std::string lambda_raw;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": empty key or value");
        }

        if (key == "data") {
            if (value != "synth" && value != "csv") {
                throw ConfigError("config: data must be 'synth' or 'csv'");
            }
            cfg.data = value;
        } else if (key == "train_csv") {
            cfg.train_csv = value;
        } else if (key == "test_csv") {
            cfg.test_csv = value;
        } else if (key == "classes") {
            cfg.classes = detail::parse_int(value, key);
        } else if (key == "dim") {
            cfg.dim = detail::parse_int(value, key);
        } else if (key == "n_max") {
            cfg.n_max = detail::parse_int(value, key);
        } else if (key == "beta") {
            cfg.beta = detail::parse_num(value, key);
        } else if (key == "separation") {
            cfg.separation = detail::parse_num(value, key);
        } else if (key == "test_per_class") {
            cfg.test_per_class = detail::parse_int(value, key);
        } else if (key == "many_threshold") {
            cfg.many_threshold = detail::parse_int(value, key);
        } else if (key == "few_threshold") {
            cfg.few_threshold = detail::parse_int(value, key);
        } else if (key == "experts") {
            cfg.experts = detail::parse_int(value, key);
        } else if (key == "lambda") {
            lambda_raw = value;
            lambda_auto = (value == "auto");
        } else if (key == "widths") {
            cfg.widths.clear();
            for (const auto& tok : detail::split_list(value)) {
                cfg.widths.push_back(detail::parse_int(tok, key));
            }
        } else if (key == "scale") {
            cfg.scale = detail::parse_num(value, key);
        } else if (key == "epochs") {
            cfg.epochs = detail::parse_int(value, key);
        } else if (key == "batch_size") {
            cfg.batch_size = detail::parse_int(value, key);
        } else if (key == "lr") {
            cfg.lr = detail::parse_num(value, key);
        } else if (key == "schedule") {
            if (value == "linear") {
                cfg.schedule = net::Schedule::Linear;
            } else if (value == "cosine") {
                cfg.schedule = net::Schedule::Cosine;
            } else {
                throw ConfigError("config: schedule must be 'linear' or 'cosine'");
            }
        } else if (key == "momentum") {
            cfg.momentum = detail::parse_num(value, key);
        } else if (key == "weight_decay") {
            cfg.weight_decay = detail::parse_num(value, key);
        } else if (key == "nesterov") {
            cfg.nesterov = detail::parse_bool(value, key);
        } else if (key == "alpha") {
            cfg.alpha = detail::parse_num(value, key);
        } else if (key == "temperature") {
            cfg.temperature = detail::parse_num(value, key);
        } else if (key == "detach_teacher") {
            cfg.detach_teacher = detail::parse_bool(value, key);
        } else if (key == "supervise_both_views") {
            cfg.supervise_both_views = detail::parse_bool(value, key);
        } else if (key == "weak_jitter") {
            cfg.weak_jitter = detail::parse_num(value, key);
        } else if (key == "strong_jitter") {
            cfg.strong_jitter = detail::parse_num(value, key);
        } else if (key == "strong_dropout") {
            cfg.strong_dropout = detail::parse_num(value, key);
        } else if (key == "strong_scale_min") {
            cfg.strong_scale_min = detail::parse_num(value, key);
        } else if (key == "strong_scale_max") {
            cfg.strong_scale_max = detail::parse_num(value, key);
        } else if (key == "strong_ops") {
            cfg.strong_ops = detail::parse_int(value, key);
        } else if (key == "seed") {
            const double v = detail::parse_num(value, key);
            if (v < 0) throw ConfigError("config: seed must be non-negative");
            cfg.seed = static_cast<std::uint64_t>(v);
        } else {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                              key + "'");
        }
    }

    if (cfg.experts < 1) throw ConfigError("config: experts must be >= 1");
    if (lambda_auto) {
        cfg.lambdas = loss::default_lambdas(cfg.experts);
    } else {
        cfg.lambdas.clear();
        for (const auto& tok : detail::split_list(lambda_raw)) {
            cfg.lambdas.push_back(detail::parse_num(tok, "lambda"));
        }
        if (cfg.lambdas.size() != static_cast<std::size_t>(cfg.experts)) {
            throw ConfigError("config: lambda list length " +
                              std::to_string(cfg.lambdas.size()) + " != experts " +
                              std::to_string(cfg.experts));
        }
    }

    if (cfg.classes < 2) throw ConfigError("config: classes must be >= 2");
    if (cfg.dim < 2) throw ConfigError("config: dim must be >= 2");
    if (cfg.n_max < 1) throw ConfigError("config: n_max must be >= 1");
    if (cfg.beta < 1.0) throw ConfigError("config: beta must be >= 1");
    if (cfg.separation <= 0.0) throw ConfigError("config: separation must be positive");
    if (cfg.test_per_class < 1) throw ConfigError("config: test_per_class must be >= 1");
    if (cfg.few_threshold > cfg.many_threshold) {
        throw ConfigError("config: few_threshold must be <= many_threshold");
    }
    if (cfg.data == "csv" && (cfg.train_csv.empty() || cfg.test_csv.empty())) {
        throw ConfigError("config: data=csv requires train_csv and test_csv");
    }
    if (cfg.widths.empty()) throw ConfigError("config: widths must not be empty");
    for (int w : cfg.widths) {
        if (w < 1) throw ConfigError("config: widths must be positive");
    }
    if (cfg.scale < 0.0) throw ConfigError("config: scale must be >= 0");
    if (cfg.epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (cfg.lr < 0.0) throw ConfigError("config: lr must be >= 0");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
        throw ConfigError("config: momentum must be in [0, 1)");
    }
    if (cfg.weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
    if (cfg.alpha < 0.0) throw ConfigError("config: alpha must be >= 0");
    if (cfg.temperature <= 0.0) throw ConfigError("config: temperature must be positive");
    if (cfg.weak_jitter < 0.0 || cfg.strong_jitter < 0.0) {
        throw ConfigError("config: jitter sigmas must be >= 0");
    }
    if (cfg.strong_jitter < cfg.weak_jitter) {
        throw ConfigError("config: strong_jitter must be >= weak_jitter");
    }
    if (cfg.strong_dropout < 0.0 || cfg.strong_dropout > 1.0) {
        throw ConfigError("config: strong_dropout must be in [0,1]");
    }
    if (cfg.strong_scale_min > cfg.strong_scale_max) {
        throw ConfigError("config: strong scale range is empty");
    }
    if (cfg.strong_ops < 1) throw ConfigError("config: strong_ops must be >= 1");
    return cfg;
}

inline TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    return parse_config(in);
}

inline TrainConfig parse_config_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

/// Serializes the resolved config as flat `key = value` lines that
/// parse_config accepts again. This is the form every report echoes.
inline std::string echo_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "data = " << cfg.data << '\n';
    if (!cfg.train_csv.empty()) out << "train_csv = " << cfg.train_csv << '\n';
    if (!cfg.test_csv.empty()) out << "test_csv = " << cfg.test_csv << '\n';
    out << "classes = " << cfg.classes << '\n';
    out << "dim = " << cfg.dim << '\n';
    out << "n_max = " << cfg.n_max << '\n';
    out << "beta = " << detail::format_g17(cfg.beta) << '\n';
    out << "separation = " << detail::format_g17(cfg.separation) << '\n';
    out << "test_per_class = " << cfg.test_per_class << '\n';
    out << "many_threshold = " << cfg.many_threshold << '\n';
    out << "few_threshold = " << cfg.few_threshold << '\n';
    out << "experts = " << cfg.experts << '\n';
    out << "lambda = ";
    for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
        out << (i ? "," : "") << detail::format_g17(cfg.lambdas[i]);
    }
    out << '\n';
    out << "widths = ";
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
        out << (i ? "," : "") << cfg.widths[i];
    }
    out << '\n';
    out << "scale = " << detail::format_g17(cfg.scale) << '\n';
    out << "epochs = " << cfg.epochs << '\n';
    out << "batch_size = " << cfg.batch_size << '\n';
    out << "lr = " << detail::format_g17(cfg.lr) << '\n';
    out << "schedule = " << (cfg.schedule == net::Schedule::Linear ? "linear" : "cosine")
        << '\n';
    out << "momentum = " << detail::format_g17(cfg.momentum) << '\n';
    out << "weight_decay = " << detail::format_g17(cfg.weight_decay) << '\n';
    out << "nesterov = " << (cfg.nesterov ? "on" : "off") << '\n';
    out << "alpha = " << detail::format_g17(cfg.alpha) << '\n';
    out << "temperature = " << detail::format_g17(cfg.temperature) << '\n';
    out << "detach_teacher = " << (cfg.detach_teacher ? "on" : "off") << '\n';
    out << "supervise_both_views = " << (cfg.supervise_both_views ? "on" : "off") << '\n';
    out << "weak_jitter = " << detail::format_g17(cfg.weak_jitter) << '\n';
    out << "strong_jitter = " << detail::format_g17(cfg.strong_jitter) << '\n';
    out << "strong_dropout = " << detail::format_g17(cfg.strong_dropout) << '\n';
    out << "strong_scale_min = " << detail::format_g17(cfg.strong_scale_min) << '\n';
    out << "strong_scale_max = " << detail::format_g17(cfg.strong_scale_max) << '\n';
    out << "strong_ops = " << cfg.strong_ops << '\n';
    out << "seed = " << cfg.seed << '\n';
    return out.str();
}

}  // namespace mdcs::run
