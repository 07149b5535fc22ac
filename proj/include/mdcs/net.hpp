#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mdcs/errors.hpp"
#include "mdcs/matrix.hpp"
#include "mdcs/rng.hpp"

namespace mdcs::net {

inline constexpr double kNormEps = 1e-12;

struct Affine {
    Matrix weight;            // out x in
    std::vector<double> bias; // out
};

/// Cosine classifier head: scaled dot product of the L2-normalized feature
/// and L2-normalized class rows. lambda is the head's distribution-weight
/// exponent, carried here so a checkpoint is self-describing.
struct CosineHead {
    Matrix weight;  // C x h
    double scale = 16.0;
    double lambda = 0.0;
};

/// Shared ReLU-MLP backbone feeding M cosine heads. The last affine layer's
/// output (no ReLU after it) is the feature every head consumes.
struct MultiExpertModel {
    std::vector<Affine> backbone;
    std::vector<CosineHead> heads;

    std::size_t input_dim() const { return backbone.front().weight.cols; }
    std::size_t feature_dim() const { return backbone.back().weight.rows; }
    int num_classes() const { return static_cast<int>(heads.front().weight.rows); }
    int num_experts() const { return static_cast<int>(heads.size()); }

    std::vector<double> lambdas() const {
        std::vector<double> out;
        out.reserve(heads.size());
        for (const auto& head : heads) out.push_back(head.lambda);
        return out;
    }
};

/// Xavier-uniform affine weights, zero biases, unit-normalized head rows.
inline MultiExpertModel make_model(std::size_t input_dim, const std::vector<int>& widths,
                                   int classes, const std::vector<double>& lambdas,
                                   double scale, std::uint64_t seed) {
    if (widths.empty()) throw ConfigError("model: need at least one backbone layer width");
    if (classes < 2) throw ConfigError("model: need at least 2 classes");
    if (lambdas.empty()) throw ConfigError("model: need at least 1 expert");
    MultiExpertModel model;
    Rng rng(seed);
    std::size_t in = input_dim;
    for (int width : widths) {
        if (width < 1) throw ConfigError("model: layer width must be positive");
        Affine layer;
        layer.weight = Matrix(static_cast<std::size_t>(width), in);
        const double bound = std::sqrt(6.0 / static_cast<double>(in + width));
        for (double& w : layer.weight.data) w = rng.uniform(-bound, bound);
        layer.bias.assign(static_cast<std::size_t>(width), 0.0);
        model.backbone.push_back(std::move(layer));
        in = static_cast<std::size_t>(width);
    }
    for (double lambda : lambdas) {
        CosineHead head;
        head.weight = Matrix(static_cast<std::size_t>(classes), in);
        for (std::size_t k = 0; k < head.weight.rows; ++k) {
            auto row = head.weight.row(k);
            double norm_sq = 0.0;
            for (double& w : row) {
                w = rng.normal();
                norm_sq += w * w;
            }
            const double inv = 1.0 / std::max(std::sqrt(norm_sq), kNormEps);
            for (double& w : row) w *= inv;
        }
        head.scale = scale;
        head.lambda = lambda;
        model.heads.push_back(std::move(head));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Flat parameter view. Tensor order: backbone.<l>.W, backbone.<l>.b for each
// layer, then head.<m>.W for each expert. Gradients, optimizer buffers, and
// checkpoints all use this order.
// ---------------------------------------------------------------------------

struct TensorInfo {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct ParamLayout {
    std::vector<TensorInfo> tensors;
    std::size_t total = 0;
};

inline ParamLayout param_layout(const MultiExpertModel& model) {
    ParamLayout layout;
    auto add = [&layout](std::string name, std::vector<std::size_t> shape) {
        TensorInfo info;
        info.name = std::move(name);
        info.shape = std::move(shape);
        info.size = 1;
        for (std::size_t d : info.shape) info.size *= d;
        info.offset = layout.total;
        layout.total += info.size;
        layout.tensors.push_back(std::move(info));
    };
    for (std::size_t l = 0; l < model.backbone.size(); ++l) {
        const auto& layer = model.backbone[l];
        add("backbone." + std::to_string(l) + ".W", {layer.weight.rows, layer.weight.cols});
        add("backbone." + std::to_string(l) + ".b", {layer.bias.size()});
    }
    for (std::size_t m = 0; m < model.heads.size(); ++m) {
        const auto& head = model.heads[m];
        add("head." + std::to_string(m) + ".W", {head.weight.rows, head.weight.cols});
    }
    return layout;
}

inline std::vector<double> flatten_params(const MultiExpertModel& model) {
    std::vector<double> flat;
    for (const auto& layer : model.backbone) {
        flat.insert(flat.end(), layer.weight.data.begin(), layer.weight.data.end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    for (const auto& head : model.heads) {
        flat.insert(flat.end(), head.weight.data.begin(), head.weight.data.end());
    }
    return flat;
}

inline void unflatten_params(MultiExpertModel& model, std::span<const double> flat) {
    std::size_t pos = 0;
    auto take = [&](std::vector<double>& dst) {
        if (pos + dst.size() > flat.size()) throw ConfigError("parameter vector too short");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                  flat.begin() + static_cast<std::ptrdiff_t>(pos + dst.size()), dst.begin());
        pos += dst.size();
    };
    for (auto& layer : model.backbone) {
        take(layer.weight.data);
        take(layer.bias);
    }
    for (auto& head : model.heads) take(head.weight.data);
    if (pos != flat.size()) throw ConfigError("parameter vector too long");
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardCache {
    std::vector<Matrix> inputs;          // input to each backbone layer
    std::vector<Matrix> pre;             // pre-activation of each layer
    Matrix feat_hat;                     // normalized backbone output
    std::vector<double> feat_norm;       // per-row ||z||
    std::vector<Matrix> head_hat;        // per head: normalized class rows
    std::vector<std::vector<double>> head_norm;  // per head: row norms
    std::vector<Matrix> cosines;         // per head: batch x C cosine values
};

struct ForwardResult {
    std::vector<Matrix> logits;  // per expert, batch x C
    ForwardCache cache;
};

namespace detail {
inline void affine_forward(const Affine& layer, const Matrix& in, Matrix& out) {
    out = Matrix(in.rows, layer.weight.rows);
    for (std::size_t i = 0; i < in.rows; ++i) {
        const auto x = in.row(i);
        auto y = out.row(i);
        for (std::size_t o = 0; o < layer.weight.rows; ++o) {
            const auto w = layer.weight.row(o);
            double acc = layer.bias[o];
            for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * x[c];
            y[o] = acc;
        }
    }
}

inline double row_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}
}  // namespace detail

/// Runs the batch through the backbone and all heads. logits[m](i,k) =
/// scale_m * <normalized head row k, normalized feature i>, with the L2
/// normalizations guarded by max(norm, 1e-12).
inline ForwardResult forward(const MultiExpertModel& model, const Matrix& batch) {
    if (batch.cols != model.input_dim()) {
        throw ConfigError("forward: input dim " + std::to_string(batch.cols) +
                          " does not match model input dim " +
                          std::to_string(model.input_dim()));
    }
    ForwardResult result;
    auto& cache = result.cache;
    Matrix current = batch;
    for (std::size_t l = 0; l < model.backbone.size(); ++l) {
        cache.inputs.push_back(current);
        Matrix pre;
        detail::affine_forward(model.backbone[l], current, pre);
        cache.pre.push_back(pre);
        if (l + 1 < model.backbone.size()) {
            for (double& v : pre.data) v = v > 0.0 ? v : 0.0;
        }
        current = std::move(pre);
    }

    const Matrix& feat = cache.pre.back();
    cache.feat_hat = Matrix(feat.rows, feat.cols);
    cache.feat_norm.resize(feat.rows);
    for (std::size_t i = 0; i < feat.rows; ++i) {
        const auto z = feat.row(i);
        const double norm = detail::row_norm(z);
        cache.feat_norm[i] = norm;
        const double inv = 1.0 / std::max(norm, kNormEps);
        auto dst = cache.feat_hat.row(i);
        for (std::size_t c = 0; c < z.size(); ++c) dst[c] = z[c] * inv;
    }

    for (const auto& head : model.heads) {
        Matrix hat(head.weight.rows, head.weight.cols);
        std::vector<double> norms(head.weight.rows);
        for (std::size_t k = 0; k < head.weight.rows; ++k) {
            const auto w = head.weight.row(k);
            const double norm = detail::row_norm(w);
            norms[k] = norm;
            const double inv = 1.0 / std::max(norm, kNormEps);
            auto dst = hat.row(k);
            for (std::size_t c = 0; c < w.size(); ++c) dst[c] = w[c] * inv;
        }
        Matrix cosine(feat.rows, head.weight.rows);
        Matrix logits(feat.rows, head.weight.rows);
        for (std::size_t i = 0; i < feat.rows; ++i) {
            const auto z = cache.feat_hat.row(i);
            for (std::size_t k = 0; k < head.weight.rows; ++k) {
                const auto w = hat.row(k);
                double acc = 0.0;
                for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * z[c];
                cosine.at(i, k) = acc;
                logits.at(i, k) = head.scale * acc;
            }
        }
        cache.head_hat.push_back(std::move(hat));
        cache.head_norm.push_back(std::move(norms));
        cache.cosines.push_back(std::move(cosine));
        result.logits.push_back(std::move(logits));
    }
    return result;
}

/// Gradients of the cosine heads plus the feature gradient they induce.
/// Uses the exact normalization Jacobian (I - v_hat v_hat^T)/||v|| on both
/// the feature and the class rows; when a norm falls under the 1e-12 guard
/// the normalization is an affine map and the projection term drops out.
inline Matrix backward_heads(const MultiExpertModel& model, const ForwardCache& cache,
                             const std::vector<Matrix>& dlogits,
                             std::span<double> grad_out, const ParamLayout& layout) {
    const std::size_t batch = cache.feat_hat.rows;
    const std::size_t h = cache.feat_hat.cols;
    Matrix dfeat_hat_sum(batch, h);  // accumulated d logits / d z_hat
    const std::size_t head_tensor_base = model.backbone.size() * 2;
    for (std::size_t m = 0; m < model.heads.size(); ++m) {
        const auto& head = model.heads[m];
        const auto& hat = cache.head_hat[m];
        const auto& norms = cache.head_norm[m];
        const auto& cosine = cache.cosines[m];
        std::span<double> dW = grad_out.subspan(layout.tensors[head_tensor_base + m].offset,
                                                layout.tensors[head_tensor_base + m].size);
        for (std::size_t i = 0; i < batch; ++i) {
            const auto z_hat = cache.feat_hat.row(i);
            auto dz = dfeat_hat_sum.row(i);
            for (std::size_t k = 0; k < head.weight.rows; ++k) {
                const double g = dlogits[m].at(i, k);
                if (g == 0.0) continue;
                const double coef = head.scale * g;
                const auto w_hat = hat.row(k);
                const double cos = cosine.at(i, k);
                double* dw = dW.data() + k * h;
                if (norms[k] > kNormEps) {
                    const double inv = 1.0 / norms[k];
                    for (std::size_t c = 0; c < h; ++c) {
                        dw[c] += coef * inv * (z_hat[c] - cos * w_hat[c]);
                    }
                } else {
                    const double inv = 1.0 / kNormEps;
                    for (std::size_t c = 0; c < h; ++c) dw[c] += coef * inv * z_hat[c];
                }
                for (std::size_t c = 0; c < h; ++c) dz[c] += coef * w_hat[c];
            }
        }
    }
    // Feature normalization Jacobian applied once to the accumulated sum.
    Matrix dfeat(batch, h);
    for (std::size_t i = 0; i < batch; ++i) {
        const auto up = dfeat_hat_sum.row(i);
        const auto z_hat = cache.feat_hat.row(i);
        auto dst = dfeat.row(i);
        if (cache.feat_norm[i] > kNormEps) {
            double dot = 0.0;
            for (std::size_t c = 0; c < h; ++c) dot += up[c] * z_hat[c];
            const double inv = 1.0 / cache.feat_norm[i];
            for (std::size_t c = 0; c < h; ++c) dst[c] = inv * (up[c] - dot * z_hat[c]);
        } else {
            const double inv = 1.0 / kNormEps;
            for (std::size_t c = 0; c < h; ++c) dst[c] = inv * up[c];
        }
    }
    return dfeat;
}

/// Standard affine/ReLU backprop from a feature gradient.
inline void backward_backbone(const MultiExpertModel& model, const ForwardCache& cache,
                              const Matrix& dfeat, std::span<double> grad_out,
                              const ParamLayout& layout) {
    Matrix delta = dfeat;
    for (std::size_t li = model.backbone.size(); li-- > 0;) {
        const auto& layer = model.backbone[li];
        const auto& input = cache.inputs[li];
        std::span<double> dW = grad_out.subspan(layout.tensors[2 * li].offset,
                                                layout.tensors[2 * li].size);
        std::span<double> db = grad_out.subspan(layout.tensors[2 * li + 1].offset,
                                                layout.tensors[2 * li + 1].size);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const auto d = delta.row(i);
            const auto x = input.row(i);
            for (std::size_t o = 0; o < layer.weight.rows; ++o) {
                const double g = d[o];
                if (g == 0.0) continue;
                db[o] += g;
                double* dw = dW.data() + o * layer.weight.cols;
                for (std::size_t c = 0; c < layer.weight.cols; ++c) dw[c] += g * x[c];
            }
        }
        if (li == 0) break;
        Matrix dprev(delta.rows, layer.weight.cols);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const auto d = delta.row(i);
            auto dst = dprev.row(i);
            for (std::size_t o = 0; o < layer.weight.rows; ++o) {
                const double g = d[o];
                if (g == 0.0) continue;
                const auto w = layer.weight.row(o);
                for (std::size_t c = 0; c < layer.weight.cols; ++c) dst[c] += g * w[c];
            }
        }
        const Matrix& prev_pre = cache.pre[li - 1];
        for (std::size_t i = 0; i < dprev.data.size(); ++i) {
            if (prev_pre.data[i] <= 0.0) dprev.data[i] = 0.0;
        }
        delta = std::move(dprev);
    }
}

/// Exact analytic gradients of all parameters for the given per-expert logit
/// gradients, accumulated into a flat vector matching param_layout order.
inline std::vector<double> backward(const MultiExpertModel& model, const ForwardCache& cache,
                                    const std::vector<Matrix>& dlogits) {
    if (dlogits.size() != model.heads.size()) {
        throw ConfigError("backward: expected one logit gradient per expert");
    }
    const ParamLayout layout = param_layout(model);
    std::vector<double> grads(layout.total, 0.0);
    const Matrix dfeat = backward_heads(model, cache, dlogits, grads, layout);
    backward_backbone(model, cache, dfeat, grads, layout);
    return grads;
}

}  // namespace mdcs::net
