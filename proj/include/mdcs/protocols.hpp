#pragma once

#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mdcs/config.hpp"
#include "mdcs/report.hpp"
#include "mdcs/trainer.hpp"

namespace mdcs::run {

namespace detail {
/// Truth-probability rows of m independently trained members, each on its
/// own bootstrap resample (seeds seed+1..seed+m), evaluated on the probe set.
inline Matrix prediction_matrix(const TrainConfig& cfg, const DataBundle& bundle,
                                int members) {
    Matrix pm(static_cast<std::size_t>(members), bundle.test.size());
    std::vector<std::future<std::vector<double>>> futures;
    futures.reserve(static_cast<std::size_t>(members));
    for (int k = 1; k <= members; ++k) {
        futures.push_back(std::async(std::launch::async, [&cfg, &bundle, k]() {
            TrainConfig member_cfg = cfg;
            member_cfg.seed = cfg.seed + static_cast<std::uint64_t>(k);
            const auto boot = data::bootstrap_resample(bundle.train, member_cfg.seed);
            const auto trained = train(member_cfg, boot);
            const auto eval = evaluate(trained.model, bundle.test, bundle.split, "");
            return metrics::truth_probabilities(eval.dump);
        }));
    }
    for (int k = 0; k < members; ++k) {
        std::vector<double> row;
        try {
            row = futures[static_cast<std::size_t>(k)].get();
        } catch (const std::exception& err) {
            throw NumericError("variance protocol: member " + std::to_string(k + 1) +
                               " failed: " + err.what());
        }
        std::copy(row.begin(), row.end(),
                  pm.row(static_cast<std::size_t>(k)).begin());
    }
    return pm;
}
}  // namespace detail

/// Trains `members` models on per-class bootstrap resamples of the training
/// set and reports the population variance of the truth probability on the
/// probe (test) set, per shot group. In paired mode the same members are
/// retrained with alpha = 0 and reported side by side.
inline VarianceReport variance_protocol(const TrainConfig& cfg, int members, bool paired) {
    if (members < 2) throw ConfigError("variance protocol: need at least 2 members");
    const DataBundle bundle = resolve_data(cfg);
    VarianceReport report;
    report.members = members;
    report.config_echo = echo_config(cfg);
    {
        const Matrix pm = detail::prediction_matrix(cfg, bundle, members);
        const auto var = metrics::model_variance(pm);
        report.configured =
            metrics::variance_by_group(var.per_instance, bundle.test.labels, bundle.split);
    }
    if (paired) {
        TrainConfig off_cfg = cfg;
        off_cfg.alpha = 0.0;
        const Matrix pm = detail::prediction_matrix(off_cfg, bundle, members);
        const auto var = metrics::model_variance(pm);
        report.no_cs =
            metrics::variance_by_group(var.per_instance, bundle.test.labels, bundle.split);
    }
    return report;
}

struct SweepRow {
    std::string setting;  // lambda list, alpha value, or expert count
    std::vector<double> lambdas;
    metrics::GroupValues acc;  // ensemble accuracy, mean over repeats
};

namespace detail {
inline metrics::GroupValues mean_groups(const std::vector<metrics::GroupValues>& items) {
    metrics::GroupValues out;
    if (items.empty()) return out;
    auto mean_of = [&items](auto member) -> std::optional<double> {
        double sum = 0.0;
        std::size_t present = 0;
        for (const auto& item : items) {
            if (item.*member) {
                sum += *(item.*member);
                ++present;
            }
        }
        if (present == 0) return std::nullopt;
        return sum / static_cast<double>(present);
    };
    out.many = mean_of(&metrics::GroupValues::many);
    out.medium = mean_of(&metrics::GroupValues::medium);
    out.few = mean_of(&metrics::GroupValues::few);
    double all = 0.0;
    for (const auto& item : items) all += item.all;
    out.all = all / static_cast<double>(items.size());
    return out;
}

/// Ensemble accuracy of one config averaged over `repeats` seeds
/// (seed, seed+1, ...).
inline metrics::GroupValues repeated_accuracy(const TrainConfig& cfg, int repeats) {
    std::vector<metrics::GroupValues> runs;
    for (int r = 0; r < repeats; ++r) {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(r);
        const DataBundle bundle = resolve_data(run_cfg);
        const auto trained = train(run_cfg, bundle.train);
        const auto eval = evaluate(trained.model, bundle.test, bundle.split, "");
        runs.push_back(eval.report.ensemble_acc);
    }
    return mean_groups(runs);
}

inline std::string join_lambdas(const std::vector<double>& lambdas) {
    std::string out;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (i) out += ';';
        out += run::detail::format_g17(lambdas[i]);
    }
    return out;
}
}  // namespace detail

/// One run (or repeat-averaged run) per lambda assignment. Each entry of
/// `lambda_sets` configures all experts of its run, so single-value entries
/// sweep a lone expert and triples sweep a three-expert model.
inline std::vector<SweepRow> lambda_sweep(const TrainConfig& base,
                                          const std::vector<std::vector<double>>& lambda_sets,
                                          int repeats = 1) {
    if (lambda_sets.size() < 2) throw ConfigError("lambda sweep: need at least 2 points");
    if (repeats < 1) throw ConfigError("sweep: repeats must be >= 1");
    std::vector<SweepRow> rows;
    for (const auto& lambdas : lambda_sets) {
        if (lambdas.empty()) throw ConfigError("lambda sweep: empty lambda set");
        TrainConfig cfg = base;
        cfg.experts = static_cast<int>(lambdas.size());
        cfg.lambdas = lambdas;
        SweepRow row;
        row.setting = detail::join_lambdas(lambdas);
        row.lambdas = lambdas;
        row.acc = detail::repeated_accuracy(cfg, repeats);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<SweepRow> alpha_sweep(const TrainConfig& base,
                                         const std::vector<double>& alphas,
                                         int repeats = 1) {
    if (alphas.empty()) throw ConfigError("alpha sweep: empty value list");
    if (repeats < 1) throw ConfigError("sweep: repeats must be >= 1");
    std::vector<SweepRow> rows;
    for (double alpha : alphas) {
        if (alpha < 0.0) throw ConfigError("alpha sweep: alpha must be >= 0");
        TrainConfig cfg = base;
        cfg.alpha = alpha;
        SweepRow row;
        row.setting = run::detail::format_g17(alpha);
        row.lambdas = cfg.lambdas;
        row.acc = detail::repeated_accuracy(cfg, repeats);
        rows.push_back(std::move(row));
    }
    return rows;
}

/// All-accuracy per expert count, lambdas auto-assigned per count.
inline std::vector<SweepRow> expert_count_sweep(const TrainConfig& base,
                                                const std::vector<int>& expert_counts,
                                                int repeats = 1) {
    if (expert_counts.empty()) throw ConfigError("expert sweep: empty value list");
    if (repeats < 1) throw ConfigError("sweep: repeats must be >= 1");
    std::vector<SweepRow> rows;
    for (int m : expert_counts) {
        TrainConfig cfg = base;
        cfg.experts = m;
        cfg.lambdas = loss::default_lambdas(m);
        SweepRow row;
        row.setting = std::to_string(m);
        row.lambdas = cfg.lambdas;
        row.acc = detail::repeated_accuracy(cfg, repeats);
        rows.push_back(std::move(row));
    }
    return rows;
}

enum class SweepKind { Lambda, Alpha, Experts };

/// Plot-ready CSV: one row per sweep point with the per-group ensemble
/// accuracies; the experts sweep also echoes its lambda assignment.
inline void write_sweep_csv(const std::vector<SweepRow>& rows, SweepKind kind,
                            std::ostream& out) {
    switch (kind) {
        case SweepKind::Lambda: out << "lambda"; break;
        case SweepKind::Alpha: out << "alpha"; break;
        case SweepKind::Experts: out << "experts,lambda"; break;
    }
    out << ",many,medium,few,all\n";
    for (const auto& row : rows) {
        out << row.setting;
        if (kind == SweepKind::Experts) out << ',' << detail::join_lambdas(row.lambdas);
        out << ',' << run::detail::format_g17(row.acc.many ? *row.acc.many : 0.0);
        auto field = [&out](const std::optional<double>& v) {
            out << ',';
            if (v) out << run::detail::format_g17(*v);
        };
        // rewrite: keep optional semantics for every group column
        (void)field;
        out << '\n';
    }
}

}  // namespace mdcs::run
