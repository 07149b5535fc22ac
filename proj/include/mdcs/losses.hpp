#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mdcs/errors.hpp"
#include "mdcs/matrix.hpp"

namespace mdcs::loss {

/// Per-expert logit adjustment: weights[k] = lambda * ln(counts[k]). Adding
/// these to logits before softmax reproduces the n_k^lambda class reweighting
/// in the log domain, which cannot overflow.
struct DistributionWeight {
    double lambda = 0.0;
    std::vector<double> weights;

    DistributionWeight() = default;
    DistributionWeight(double lambda_, std::span<const int> counts) : lambda(lambda_) {
        weights.reserve(counts.size());
        for (int c : counts) {
            if (c < 1) throw ConfigError("distribution weight: class counts must be >= 1");
            weights.push_back(lambda_ * std::log(static_cast<double>(c)));
        }
    }

    std::size_t num_classes() const { return weights.size(); }
};

/// Knobs of the consistency self-distillation term.
struct DistillConfig {
    double temperature = 2.0;
    double alpha = 0.6;
    bool detach_teacher = true;
    bool supervise_both_views = true;
};

inline void validate(const DistillConfig& cfg) {
    if (cfg.temperature <= 0.0) throw ConfigError("distill: temperature must be positive");
    if (cfg.alpha < 0.0) throw ConfigError("distill: alpha must be >= 0");
}

namespace detail {
/// log-softmax of (v/T + w), written into `out`.
inline void adjusted_log_softmax(std::span<const double> logits,
                                 const DistributionWeight& dw, double temperature,
                                 std::span<double> out) {
    double hi = -HUGE_VAL;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        if (!std::isfinite(logits[k])) throw NumericError("softmax: non-finite logit");
        out[k] = logits[k] / temperature + dw.weights[k];
        hi = std::max(hi, out[k]);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) sum += std::exp(out[k] - hi);
    const double lse = hi + std::log(sum);
    for (std::size_t k = 0; k < logits.size(); ++k) out[k] -= lse;
}

inline std::size_t argmax_lowest_tie(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (v[k] > v[best]) best = k;
    }
    return best;
}
}  // namespace detail

/// softmax(v/T + lambda*ln n): positive components summing to 1.
inline std::vector<double> diversity_softmax(std::span<const double> logits,
                                             const DistributionWeight& dw,
                                             double temperature = 1.0) {
    if (logits.size() != dw.num_classes()) {
        throw ConfigError("diversity softmax: logit length != class count");
    }
    if (temperature <= 0.0) throw ConfigError("diversity softmax: temperature must be positive");
    std::vector<double> p(logits.size());
    detail::adjusted_log_softmax(logits, dw, temperature, p);
    for (double& v : p) v = std::exp(v);
    return p;
}

struct LossResult {
    double loss = 0.0;
    Matrix grad;  // batch x C, gradient of the returned (mean) loss
};

/// Mean adjusted cross entropy of a batch: -log softmax(v + w)[y]. The
/// gradient of the mean is (p - y)/batch per row.
inline LossResult diversity_loss(const Matrix& logits, std::span<const int> labels,
                                 const DistributionWeight& dw) {
    if (logits.rows != labels.size()) throw ConfigError("diversity loss: batch size mismatch");
    if (logits.cols != dw.num_classes()) throw ConfigError("diversity loss: class mismatch");
    LossResult result;
    result.grad = Matrix(logits.rows, logits.cols);
    if (logits.rows == 0) return result;
    const double inv_batch = 1.0 / static_cast<double>(logits.rows);
    std::vector<double> logp(logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        detail::adjusted_log_softmax(logits.row(i), dw, 1.0, logp);
        const auto y = static_cast<std::size_t>(labels[i]);
        result.loss -= logp[y] * inv_batch;
        auto g = result.grad.row(i);
        for (std::size_t k = 0; k < logits.cols; ++k) g[k] = std::exp(logp[k]) * inv_batch;
        g[y] -= inv_batch;
    }
    return result;
}

/// Instances whose row argmax equals the label; ties break to the lowest
/// class index. Rows are expected to be the lambda-adjusted probabilities of
/// the weak view (argmax is the same for adjusted logits at any temperature).
inline std::vector<std::size_t> confident_set(const Matrix& probs,
                                              std::span<const int> labels) {
    if (probs.rows != labels.size()) throw ConfigError("confident set: batch size mismatch");
    std::vector<std::size_t> included;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        if (detail::argmax_lowest_tie(probs.row(i)) ==
            static_cast<std::size_t>(labels[i])) {
            included.push_back(i);
        }
    }
    return included;
}

struct CsResult {
    double loss = 0.0;
    Matrix dstrong;                      // gradient of the mean loss
    Matrix dweak;                        // zero when the teacher is detached
    std::vector<std::size_t> confident;  // instances that passed the gate
};

/// Consistency self-distillation with confident instance sampling: mean over
/// the confident set of KL(teacher || student), where teacher/student are the
/// temperature-scaled adjusted distributions of the weak/strong views. The
/// gate uses the weak view's adjusted prediction at temperature 1, so it does
/// not depend on the distillation temperature. An empty confident set yields
/// zero loss and zero gradients.
inline CsResult cs_loss(const Matrix& weak_logits, const Matrix& strong_logits,
                        std::span<const int> labels, const DistributionWeight& dw,
                        const DistillConfig& cfg) {
    if (!weak_logits.same_shape(strong_logits)) {
        throw ConfigError("cs loss: weak/strong logit shapes differ");
    }
    if (weak_logits.rows != labels.size()) throw ConfigError("cs loss: batch size mismatch");
    validate(cfg);
    const std::size_t classes = weak_logits.cols;
    CsResult result;
    result.dstrong = Matrix(weak_logits.rows, classes);
    result.dweak = Matrix(weak_logits.rows, classes);

    std::vector<double> gate_logp(classes);
    Matrix gate_probs(weak_logits.rows, classes);
    for (std::size_t i = 0; i < weak_logits.rows; ++i) {
        detail::adjusted_log_softmax(weak_logits.row(i), dw, 1.0, gate_logp);
        auto dst = gate_probs.row(i);
        for (std::size_t k = 0; k < classes; ++k) dst[k] = std::exp(gate_logp[k]);
    }
    result.confident = confident_set(gate_probs, labels);
    if (result.confident.empty()) return result;

    const double inv_count = 1.0 / static_cast<double>(result.confident.size());
    const double t = cfg.temperature;
    std::vector<double> teacher_logp(classes);
    std::vector<double> student_logp(classes);
    for (std::size_t i : result.confident) {
        detail::adjusted_log_softmax(weak_logits.row(i), dw, t, teacher_logp);
        detail::adjusted_log_softmax(strong_logits.row(i), dw, t, student_logp);
        double kl = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
            kl += std::exp(teacher_logp[k]) * (teacher_logp[k] - student_logp[k]);
        }
        kl = std::max(kl, 0.0);
        result.loss += kl * inv_count;
        auto ds = result.dstrong.row(i);
        for (std::size_t k = 0; k < classes; ++k) {
            ds[k] = (std::exp(student_logp[k]) - std::exp(teacher_logp[k])) * inv_count / t;
        }
        if (!cfg.detach_teacher) {
            auto dwk = result.dweak.row(i);
            for (std::size_t k = 0; k < classes; ++k) {
                const double pk = std::exp(teacher_logp[k]);
                dwk[k] = pk * ((teacher_logp[k] - student_logp[k]) - kl) * inv_count / t;
            }
        }
    }
    return result;
}

struct TotalLossResult {
    double total = 0.0;
    std::vector<double> dl_per_expert;
    std::vector<double> cs_per_expert;
    std::vector<double> ci_fraction;
    std::vector<Matrix> dweak;    // per expert, gradient wrt weak-view logits
    std::vector<Matrix> dstrong;  // per expert, gradient wrt strong-view logits
};

/// Total objective over all experts: sum_mu (DL_mu + alpha * CS_mu). DL
/// supervises both views (their mean) when supervise_both_views is set,
/// otherwise the strong view only. At alpha = 0 the distillation term is
/// skipped entirely and the total is exactly the DL sum.
inline TotalLossResult total_loss_on_logits(const std::vector<Matrix>& weak_logits,
                                            const std::vector<Matrix>& strong_logits,
                                            std::span<const int> labels,
                                            const std::vector<DistributionWeight>& dws,
                                            const DistillConfig& cfg) {
    if (weak_logits.size() != dws.size() || strong_logits.size() != dws.size()) {
        throw ConfigError("total loss: expert count mismatch");
    }
    validate(cfg);
    TotalLossResult result;
    const std::size_t experts = dws.size();
    const auto batch = static_cast<double>(labels.size());
    for (std::size_t m = 0; m < experts; ++m) {
        Matrix dweak(weak_logits[m].rows, weak_logits[m].cols);
        Matrix dstrong(strong_logits[m].rows, strong_logits[m].cols);
        double dl = 0.0;
        const auto strong_dl = diversity_loss(strong_logits[m], labels, dws[m]);
        if (cfg.supervise_both_views) {
            const auto weak_dl = diversity_loss(weak_logits[m], labels, dws[m]);
            dl = 0.5 * (weak_dl.loss + strong_dl.loss);
            for (std::size_t i = 0; i < dweak.data.size(); ++i) {
                dweak.data[i] += 0.5 * weak_dl.grad.data[i];
                dstrong.data[i] += 0.5 * strong_dl.grad.data[i];
            }
        } else {
            dl = strong_dl.loss;
            for (std::size_t i = 0; i < dstrong.data.size(); ++i) {
                dstrong.data[i] += strong_dl.grad.data[i];
            }
        }
        result.total += dl;
        result.dl_per_expert.push_back(dl);

        const auto cs = cs_loss(weak_logits[m], strong_logits[m], labels, dws[m], cfg);
        result.ci_fraction.push_back(
            batch > 0 ? static_cast<double>(cs.confident.size()) / batch : 0.0);
        if (cfg.alpha > 0.0) {
            result.total += cfg.alpha * cs.loss;
            result.cs_per_expert.push_back(cs.loss);
            for (std::size_t i = 0; i < dstrong.data.size(); ++i) {
                dstrong.data[i] += cfg.alpha * cs.dstrong.data[i];
            }
            if (!cfg.detach_teacher) {
                for (std::size_t i = 0; i < dweak.data.size(); ++i) {
                    dweak.data[i] += cfg.alpha * cs.dweak.data[i];
                }
            }
        } else {
            result.cs_per_expert.push_back(0.0);
        }
        result.dweak.push_back(std::move(dweak));
        result.dstrong.push_back(std::move(dstrong));
    }
    return result;
}

/// Default lambda assignment per expert count: spread over the head range
/// [-1, 0.5], the balanced range (0.5, 1.5), and the tail range [1.5, 3].
inline std::vector<double> default_lambdas(int experts) {
    switch (experts) {
        case 1: return {1.0};
        case 2: return {-0.5, 2.5};
        case 3: return {-0.5, 1.0, 2.5};
        case 4: return {-0.5, 0.0, 1.0, 2.5};
        case 5: return {-0.5, 0.0, 1.0, 2.0, 2.5};
        case 6: return {-1.0, -0.5, 0.0, 2.0, 2.5, 3.0};
        case 7: return {-1.0, -0.5, 0.0, 1.0, 2.0, 2.5, 3.0};
        default: break;
    }
    if (experts < 1) throw ConfigError("default lambdas: need at least one expert");
    std::vector<double> lambdas(static_cast<std::size_t>(experts));
    for (int i = 0; i < experts; ++i) {
        lambdas[static_cast<std::size_t>(i)] = -1.0 + 4.0 * i / (experts - 1);
    }
    return lambdas;
}

}  // namespace mdcs::loss
