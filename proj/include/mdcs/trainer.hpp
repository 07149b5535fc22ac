#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mdcs/checkpoint.hpp"
#include "mdcs/config.hpp"
#include "mdcs/dataset.hpp"
#include "mdcs/losses.hpp"
#include "mdcs/metrics.hpp"
#include "mdcs/net.hpp"
#include "mdcs/optim.hpp"
#include "mdcs/report.hpp"

namespace mdcs::run {

// Stream tags for deriving independent sub-seeds from the experiment seed.
enum SeedTag : std::uint64_t {
    TagTrainData = 101,
    TagTestData = 102,
    TagInit = 103,
    TagShuffle = 104,
    TagWeakView = 105,
    TagStrongView = 106,
};

struct DataBundle {
    data::LabeledDataset train;
    data::LabeledDataset test;
    data::ShotSplit split;
};

/// Generates or loads the train/test pair named by the config. The shot
/// split always comes from the training counts. Synthetic data derives from
/// the config seed, so any stage of a run can re-materialize it.
inline DataBundle resolve_data(const TrainConfig& cfg) {
    DataBundle bundle;
    if (cfg.data == "synth") {
        data::ImbalanceProfile profile{cfg.classes, cfg.n_max, cfg.beta};
        const auto counts = data::exp_longtail_counts(profile);
        bundle.train = data::synth_gaussians(cfg.classes, cfg.dim, counts, cfg.separation,
                                             mix_seed(cfg.seed, TagTrainData));
        const std::vector<int> test_counts(static_cast<std::size_t>(cfg.classes),
                                           cfg.test_per_class);
        bundle.test = data::synth_gaussians(cfg.classes, cfg.dim, test_counts,
                                            cfg.separation, mix_seed(cfg.seed, TagTestData));
    } else {
        bundle.train = data::load_csv(cfg.train_csv);
        bundle.test = data::load_csv(cfg.test_csv);
        if (bundle.train.dim() != bundle.test.dim() ||
            bundle.train.num_classes() != bundle.test.num_classes()) {
            throw ConfigError("train/test datasets disagree on dim or class count");
        }
    }
    bundle.split =
        data::shot_partition(bundle.train.counts, cfg.many_threshold, cfg.few_threshold);
    return bundle;
}

inline std::vector<loss::DistributionWeight> distribution_weights(
    const std::vector<double>& lambdas, const std::vector<int>& counts) {
    std::vector<loss::DistributionWeight> dws;
    dws.reserve(lambdas.size());
    for (double lambda : lambdas) dws.emplace_back(lambda, counts);
    return dws;
}

struct StepResult {
    loss::TotalLossResult losses;
    std::vector<double> grads;
};

/// One full gradient evaluation: both views forward, total loss on logits,
/// both backward passes summed into one flat gradient.
inline StepResult compute_batch_gradients(const net::MultiExpertModel& model,
                                          const Matrix& weak_view, const Matrix& strong_view,
                                          std::span<const int> labels,
                                          const std::vector<loss::DistributionWeight>& dws,
                                          const loss::DistillConfig& distill) {
    StepResult result;
    auto weak = net::forward(model, weak_view);
    auto strong = net::forward(model, strong_view);
    result.losses =
        loss::total_loss_on_logits(weak.logits, strong.logits, labels, dws, distill);
    result.grads = net::backward(model, weak.cache, result.losses.dweak);
    const auto strong_grads = net::backward(model, strong.cache, result.losses.dstrong);
    for (std::size_t i = 0; i < result.grads.size(); ++i) {
        result.grads[i] += strong_grads[i];
    }
    return result;
}

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double total = 0.0;              // mean total loss over instances
    std::vector<double> dl;          // per expert
    std::vector<double> cs;          // per expert
    std::vector<double> ci_fraction; // per expert
};

struct TrainOutput {
    net::MultiExpertModel model;
    net::SgdState opt;
    std::vector<EpochLog> log;
    double wall_clock_s = 0.0;
};

/// MDCS training loop: per batch, draw a weak and a strong view of every
/// instance, run both through the shared backbone and all heads, take an SGD
/// step on the total objective. Deterministic for a fixed config and seed;
/// batch composition and per-instance augmentation draw from decoupled
/// seed streams.
inline TrainOutput train(const TrainConfig& cfg, const data::LabeledDataset& train_ds) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dws = distribution_weights(cfg.lambdas, train_ds.counts);
    TrainOutput out;
    out.model = net::make_model(train_ds.dim(), cfg.widths, train_ds.num_classes(),
                                cfg.lambdas, cfg.scale, mix_seed(cfg.seed, TagInit));
    std::vector<double> params = net::flatten_params(out.model);
    out.opt = net::SgdState(cfg.sgd_hyper(), params.size());
    const auto distill = cfg.distill();
    const auto weak_policy = cfg.weak_policy();
    const auto strong_policy = cfg.strong_policy();
    const std::size_t n = train_ds.size();
    const auto experts = static_cast<std::size_t>(cfg.experts);

    std::vector<std::size_t> order(n);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(cfg.seed, TagShuffle, epoch));
        shuffle_rng.shuffle(order);

        EpochLog log;
        log.epoch = epoch;
        log.lr = net::lr_at(out.opt.hyper, epoch);
        log.dl.assign(experts, 0.0);
        log.cs.assign(experts, 0.0);
        log.ci_fraction.assign(experts, 0.0);

        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t batch = stop - start;
            Matrix weak_view(batch, train_ds.dim());
            Matrix strong_view(batch, train_ds.dim());
            std::vector<int> labels(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t idx = order[start + b];
                const auto x = train_ds.features.row(idx);
                const auto weak =
                    data::augment(x, weak_policy, mix_seed(cfg.seed, TagWeakView, epoch, idx));
                const auto strong = data::augment(
                    x, strong_policy, mix_seed(cfg.seed, TagStrongView, epoch, idx));
                std::copy(weak.begin(), weak.end(), weak_view.row(b).begin());
                std::copy(strong.begin(), strong.end(), strong_view.row(b).begin());
                labels[b] = train_ds.labels[idx];
            }

            net::unflatten_params(out.model, params);
            auto step = compute_batch_gradients(out.model, weak_view, strong_view, labels,
                                                dws, distill);
            if (!std::isfinite(step.losses.total)) {
                std::string expert = "?";
                for (std::size_t m = 0; m < experts; ++m) {
                    if (!std::isfinite(step.losses.dl_per_expert[m]) ||
                        !std::isfinite(step.losses.cs_per_expert[m])) {
                        expert = std::to_string(m + 1);
                        break;
                    }
                }
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(start / cfg.batch_size) +
                                   ", expert " + expert);
            }
            net::sgd_step(params, step.grads, out.opt, epoch);

            const double w = static_cast<double>(batch) / static_cast<double>(n);
            log.total += step.losses.total * w;
            for (std::size_t m = 0; m < experts; ++m) {
                log.dl[m] += step.losses.dl_per_expert[m] * w;
                log.cs[m] += step.losses.cs_per_expert[m] * w;
                log.ci_fraction[m] += step.losses.ci_fraction[m] * w;
            }
        }
        out.log.push_back(std::move(log));
    }
    net::unflatten_params(out.model, params);
    out.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline TrainOutput train(const TrainConfig& cfg) {
    const DataBundle bundle = resolve_data(cfg);
    return train(cfg, bundle.train);
}

/// Per-epoch loss components as CSV (deterministic; no timing data).
inline void write_train_log(const std::vector<EpochLog>& log, std::ostream& out) {
    if (log.empty()) {
        out << "epoch,lr,total\n";
        return;
    }
    const std::size_t experts = log.front().dl.size();
    out << "epoch,lr,total";
    for (std::size_t m = 1; m <= experts; ++m) {
        out << ",dl_e" << m << ",cs_e" << m << ",ci_frac_e" << m;
    }
    out << '\n';
    char buf[40];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << ',' << buf;
    };
    for (const auto& entry : log) {
        out << entry.epoch;
        put(entry.lr);
        put(entry.total);
        for (std::size_t m = 0; m < experts; ++m) {
            put(entry.dl[m]);
            put(entry.cs[m]);
            put(entry.ci_fraction[m]);
        }
        out << '\n';
    }
}

inline void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write train log: " + path);
    write_train_log(log, out);
}

/// Builds the accuracy/σ report from a dump. evaluate() and the dump-reading
/// CLI path both call this, so a re-read dump reproduces the report exactly.
inline ExperimentReport report_from_dump(const metrics::PredictionDump& dump,
                                         const data::ShotSplit& split,
                                         const std::string& config_echo) {
    ExperimentReport report;
    report.experts = dump.num_experts();
    report.config_echo = config_echo;
    for (int m = 0; m < dump.num_experts(); ++m) {
        report.expert_acc.push_back(metrics::shot_accuracy(
            dump, split, [&dump, m](std::size_t i) { return metrics::expert_predict(dump, m, i); }));
    }
    report.ensemble_acc = metrics::shot_accuracy(
        dump, split, [&dump](std::size_t i) { return metrics::ensemble_predict(dump, i); });
    report.sigma = metrics::sigma_by_group(dump, split);
    return report;
}

struct EvalOutput {
    ExperimentReport report;
    metrics::PredictionDump dump;
};

/// Test-time pass: no augmentation, raw per-expert logits dumped for every
/// instance, metrics computed through the dump path.
inline EvalOutput evaluate(const net::MultiExpertModel& model,
                           const data::LabeledDataset& test, const data::ShotSplit& split,
                           const std::string& config_echo) {
    if (test.dim() != model.input_dim()) {
        throw ConfigError("evaluate: dataset dim " + std::to_string(test.dim()) +
                          " does not match model input dim " +
                          std::to_string(model.input_dim()));
    }
    if (test.num_classes() != model.num_classes()) {
        throw ConfigError("evaluate: dataset classes do not match model heads");
    }
    EvalOutput out;
    const auto experts = static_cast<std::size_t>(model.num_experts());
    out.dump.logits.assign(experts,
                           Matrix(test.size(), static_cast<std::size_t>(model.num_classes())));
    constexpr std::size_t kEvalBatch = 256;
    for (std::size_t start = 0; start < test.size(); start += kEvalBatch) {
        const std::size_t stop = std::min(test.size(), start + kEvalBatch);
        Matrix batch(stop - start, test.dim());
        for (std::size_t i = start; i < stop; ++i) {
            const auto row = test.features.row(i);
            std::copy(row.begin(), row.end(), batch.row(i - start).begin());
        }
        const auto fwd = net::forward(model, batch);
        for (std::size_t m = 0; m < experts; ++m) {
            for (std::size_t i = start; i < stop; ++i) {
                const auto src = fwd.logits[m].row(i - start);
                std::copy(src.begin(), src.end(), out.dump.logits[m].row(i).begin());
            }
        }
    }
    out.dump.ids.resize(test.size());
    std::iota(out.dump.ids.begin(), out.dump.ids.end(), 0);
    out.dump.labels = test.labels;
    out.report = report_from_dump(out.dump, split, config_echo);
    return out;
}

}  // namespace mdcs::run
