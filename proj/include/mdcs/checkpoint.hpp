#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mdcs/errors.hpp"
#include "mdcs/net.hpp"
#include "mdcs/optim.hpp"

namespace mdcs::net {

struct Checkpoint {
    MultiExpertModel model;
    std::optional<std::vector<double>> velocity;
};

namespace detail {
inline void write_double(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

inline void write_tensor(std::ostream& out, const std::string& name,
                         const std::vector<std::size_t>& shape,
                         std::span<const double> values) {
    out << "tensor " << name << ' ' << shape.size();
    for (std::size_t d : shape) out << ' ' << d;
    out << '\n';
    const std::size_t per_line = shape.size() == 2 ? shape[1] : values.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
        write_double(out, values[i]);
        out << ((i + 1) % per_line == 0 ? '\n' : ' ');
    }
}
}  // namespace detail

/// Text checkpoint: `MDCS-CKPT v1` header, expert metadata (M, lambdas,
/// scales), then per-tensor records with 17-significant-digit floats that
/// round-trip exactly. Optimizer momentum is stored as `opt.velocity`.
inline void save_checkpoint(std::ostream& out, const MultiExpertModel& model,
                            const SgdState* opt = nullptr) {
    out << "MDCS-CKPT v1\n";
    out << "experts " << model.num_experts() << '\n';
    out << "lambdas";
    for (const auto& head : model.heads) {
        out << ' ';
        detail::write_double(out, head.lambda);
    }
    out << '\n';
    out << "scales";
    for (const auto& head : model.heads) {
        out << ' ';
        detail::write_double(out, head.scale);
    }
    out << '\n';
    const ParamLayout layout = param_layout(model);
    const std::vector<double> flat = flatten_params(model);
    for (const auto& info : layout.tensors) {
        detail::write_tensor(out, info.name, info.shape,
                             std::span<const double>(flat).subspan(info.offset, info.size));
    }
    if (opt != nullptr) {
        detail::write_tensor(out, "opt.velocity", {opt->velocity.size()}, opt->velocity);
    }
    out << "end\n";
}

inline void save_checkpoint(const std::string& path, const MultiExpertModel& model,
                            const SgdState* opt = nullptr) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    save_checkpoint(out, model, opt);
}

inline Checkpoint load_checkpoint(std::istream& in) {
    std::string magic, version;
    in >> magic >> version;
    if (magic != "MDCS-CKPT" || version != "v1") {
        throw ConfigError("checkpoint: bad header (expected 'MDCS-CKPT v1')");
    }
    std::string key;
    int experts = 0;
    in >> key >> experts;
    if (key != "experts" || experts < 1) throw ConfigError("checkpoint: bad experts record");
    std::vector<double> lambdas(static_cast<std::size_t>(experts));
    in >> key;
    if (key != "lambdas") throw ConfigError("checkpoint: missing lambdas");
    for (double& v : lambdas) in >> v;
    std::vector<double> scales(static_cast<std::size_t>(experts));
    in >> key;
    if (key != "scales") throw ConfigError("checkpoint: missing scales");
    for (double& v : scales) in >> v;
    if (!in) throw ConfigError("checkpoint: truncated metadata");

    std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>> tensors;
    std::vector<std::string> order;
    while (in >> key) {
        if (key == "end") break;
        if (key != "tensor") throw ConfigError("checkpoint: unexpected token '" + key + "'");
        std::string name;
        std::size_t ndims = 0;
        in >> name >> ndims;
        if (!in || ndims > 4) throw ConfigError("checkpoint: bad tensor record " + name);
        std::vector<std::size_t> shape(ndims);
        std::size_t total = 1;
        for (auto& d : shape) {
            in >> d;
            total *= d;
        }
        std::vector<double> values(total);
        for (double& v : values) in >> v;
        if (!in) throw ConfigError("checkpoint: truncated tensor " + name);
        tensors.emplace(name, std::make_pair(std::move(shape), std::move(values)));
        order.push_back(name);
    }
    if (key != "end") throw ConfigError("checkpoint: missing end marker");

    auto take = [&tensors](const std::string& name, std::size_t expected_dims) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("checkpoint: missing tensor " + name);
        if (it->second.first.size() != expected_dims) {
            throw ConfigError("checkpoint: wrong rank for " + name);
        }
        auto out = std::move(it->second);
        tensors.erase(it);
        return out;
    };

    Checkpoint ckpt;
    for (std::size_t l = 0;; ++l) {
        const std::string base = "backbone." + std::to_string(l);
        if (tensors.find(base + ".W") == tensors.end()) break;
        auto [wshape, wdata] = take(base + ".W", 2);
        auto [bshape, bdata] = take(base + ".b", 1);
        if (bshape[0] != wshape[0]) throw ConfigError("checkpoint: bias/weight mismatch at " + base);
        Affine layer;
        layer.weight = Matrix(wshape[0], wshape[1]);
        layer.weight.data = std::move(wdata);
        layer.bias = std::move(bdata);
        ckpt.model.backbone.push_back(std::move(layer));
    }
    if (ckpt.model.backbone.empty()) throw ConfigError("checkpoint: no backbone layers");
    for (int m = 0; m < experts; ++m) {
        auto [shape, data] = take("head." + std::to_string(m) + ".W", 2);
        CosineHead head;
        head.weight = Matrix(shape[0], shape[1]);
        head.weight.data = std::move(data);
        head.lambda = lambdas[static_cast<std::size_t>(m)];
        head.scale = scales[static_cast<std::size_t>(m)];
        ckpt.model.heads.push_back(std::move(head));
    }
    if (auto it = tensors.find("opt.velocity"); it != tensors.end()) {
        ckpt.velocity = std::move(it->second.second);
        tensors.erase(it);
    }
    if (!tensors.empty()) {
        throw ConfigError("checkpoint: unknown tensor " + tensors.begin()->first);
    }
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read checkpoint: " + path);
    return load_checkpoint(in);
}

}  // namespace mdcs::net
