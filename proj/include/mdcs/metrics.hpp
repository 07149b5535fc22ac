#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mdcs/dataset.hpp"
#include "mdcs/errors.hpp"
#include "mdcs/matrix.hpp"

namespace mdcs::metrics {

/// Raw per-expert logits for every test instance. Everything downstream
/// (accuracies, ensemble, diversity factor, model variance) reads from here.
struct PredictionDump {
    std::vector<int> ids;
    std::vector<int> labels;
    std::vector<Matrix> logits;  // per expert, n x C

    std::size_t size() const { return ids.size(); }
    int num_experts() const { return static_cast<int>(logits.size()); }
    int num_classes() const {
        return logits.empty() ? 0 : static_cast<int>(logits.front().cols);
    }
};

/// A value per shot group. Groups with no instances stay disengaged rather
/// than reporting 0.
struct GroupValues {
    std::optional<double> many;
    std::optional<double> medium;
    std::optional<double> few;
    double all = 0.0;
};

namespace detail {
inline std::size_t argmax_lowest_tie(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (v[k] > v[best]) best = k;
    }
    return best;
}
}  // namespace detail

/// Predicted class of one expert on one instance (argmax of raw logits,
/// ties to the lowest class index).
inline int expert_predict(const PredictionDump& dump, int expert, std::size_t instance) {
    return static_cast<int>(detail::argmax_lowest_tie(
        dump.logits[static_cast<std::size_t>(expert)].row(instance)));
}

/// Ensemble rule: argmax of the uniform mean of the expert logits.
inline int ensemble_predict(const PredictionDump& dump, std::size_t instance) {
    if (dump.logits.empty()) throw ConfigError("ensemble: no experts in dump");
    std::vector<double> mean(dump.logits.front().cols, 0.0);
    for (const auto& expert_logits : dump.logits) {
        const auto row = expert_logits.row(instance);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += row[k];
    }
    const double inv = 1.0 / static_cast<double>(dump.logits.size());
    for (double& v : mean) v *= inv;
    return static_cast<int>(detail::argmax_lowest_tie(mean));
}

/// Ids of the instances an expert classifies correctly.
inline std::vector<int> expert_correct_set(const PredictionDump& dump, int expert) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < dump.size(); ++i) {
        if (expert_predict(dump, expert, i) == dump.labels[i]) ids.push_back(dump.ids[i]);
    }
    return ids;
}

/// Fraction of instances at least one expert gets right: |union S_mu| / n.
inline double diversity_factor(const std::vector<std::vector<int>>& correct_sets,
                               std::size_t n_test) {
    if (n_test == 0) throw ConfigError("diversity factor: empty test set");
    std::set<int> covered;
    for (const auto& s : correct_sets) covered.insert(s.begin(), s.end());
    return static_cast<double>(covered.size()) / static_cast<double>(n_test);
}

using Predictor = std::function<int(std::size_t)>;

namespace detail {
inline data::ShotGroup group_of(const data::ShotSplit& split, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= split.assignment.size()) {
        throw ConfigError("shot split does not cover class " + std::to_string(label));
    }
    return split.assignment[static_cast<std::size_t>(label)];
}

struct GroupTally {
    std::size_t hit[3] = {0, 0, 0};
    std::size_t total[3] = {0, 0, 0};

    void add(data::ShotGroup g, bool correct) {
        const auto idx = static_cast<std::size_t>(g);
        ++total[idx];
        if (correct) ++hit[idx];
    }

    GroupValues values() const {
        GroupValues out;
        auto ratio = [this](data::ShotGroup g) -> std::optional<double> {
            const auto idx = static_cast<std::size_t>(g);
            if (total[idx] == 0) return std::nullopt;
            return static_cast<double>(hit[idx]) / static_cast<double>(total[idx]);
        };
        out.many = ratio(data::ShotGroup::Many);
        out.medium = ratio(data::ShotGroup::Medium);
        out.few = ratio(data::ShotGroup::Few);
        const std::size_t hits = hit[0] + hit[1] + hit[2];
        const std::size_t totals = total[0] + total[1] + total[2];
        out.all = totals ? static_cast<double>(hits) / static_cast<double>(totals) : 0.0;
        return out;
    }
};
}  // namespace detail

/// Accuracy of `predict` per shot group and overall.
inline GroupValues shot_accuracy(const PredictionDump& dump, const data::ShotSplit& split,
                                 const Predictor& predict) {
    detail::GroupTally tally;
    for (std::size_t i = 0; i < dump.size(); ++i) {
        tally.add(detail::group_of(split, dump.labels[i]), predict(i) == dump.labels[i]);
    }
    return tally.values();
}

/// Diversity factor per shot group and overall: within each group, the
/// fraction of its instances that at least one expert classifies correctly.
inline GroupValues sigma_by_group(const PredictionDump& dump, const data::ShotSplit& split) {
    detail::GroupTally tally;
    for (std::size_t i = 0; i < dump.size(); ++i) {
        bool covered = false;
        for (int m = 0; m < dump.num_experts() && !covered; ++m) {
            covered = expert_predict(dump, m, i) == dump.labels[i];
        }
        tally.add(detail::group_of(split, dump.labels[i]), covered);
    }
    return tally.values();
}

/// Probability each model's ensemble assigns to the true class: the standard
/// softmax of the mean raw logits, evaluated at the true label.
inline std::vector<double> truth_probabilities(const PredictionDump& dump) {
    std::vector<double> out;
    out.reserve(dump.size());
    std::vector<double> mean(static_cast<std::size_t>(dump.num_classes()));
    for (std::size_t i = 0; i < dump.size(); ++i) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (const auto& expert_logits : dump.logits) {
            const auto row = expert_logits.row(i);
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += row[k];
        }
        const double inv = 1.0 / static_cast<double>(dump.num_experts());
        double hi = -HUGE_VAL;
        for (double& v : mean) {
            v *= inv;
            hi = std::max(hi, v);
        }
        double sum = 0.0;
        for (double v : mean) sum += std::exp(v - hi);
        out.push_back(std::exp(mean[static_cast<std::size_t>(dump.labels[i])] - hi) / sum);
    }
    return out;
}

struct VarianceResult {
    std::vector<double> per_instance;  // population variance per probe instance
    double mean = 0.0;                 // average over probe instances
};

/// Population variance across the m models of the probability assigned to
/// each probe instance's true class. Rows of `predictions` are models.
inline VarianceResult model_variance(const Matrix& predictions) {
    if (predictions.rows < 2) throw ConfigError("model variance: need at least 2 models");
    VarianceResult result;
    result.per_instance.resize(predictions.cols);
    const double inv_m = 1.0 / static_cast<double>(predictions.rows);
    for (std::size_t i = 0; i < predictions.cols; ++i) {
        double mean = 0.0;
        for (std::size_t k = 0; k < predictions.rows; ++k) mean += predictions.at(k, i);
        mean *= inv_m;
        double var = 0.0;
        for (std::size_t k = 0; k < predictions.rows; ++k) {
            const double d = predictions.at(k, i) - mean;
            var += d * d;
        }
        result.per_instance[i] = var * inv_m;
    }
    for (double v : result.per_instance) result.mean += v;
    if (!result.per_instance.empty()) {
        result.mean /= static_cast<double>(result.per_instance.size());
    }
    return result;
}

/// Mean per-instance variance per shot group of the probe labels.
inline GroupValues variance_by_group(const std::vector<double>& per_instance,
                                     std::span<const int> probe_labels,
                                     const data::ShotSplit& split) {
    if (per_instance.size() != probe_labels.size()) {
        throw ConfigError("variance grouping: instance count mismatch");
    }
    double sums[3] = {0, 0, 0};
    std::size_t totals[3] = {0, 0, 0};
    double total_sum = 0.0;
    for (std::size_t i = 0; i < per_instance.size(); ++i) {
        const auto idx = static_cast<std::size_t>(detail::group_of(split, probe_labels[i]));
        sums[idx] += per_instance[i];
        ++totals[idx];
        total_sum += per_instance[i];
    }
    GroupValues out;
    auto ratio = [&](data::ShotGroup g) -> std::optional<double> {
        const auto idx = static_cast<std::size_t>(g);
        if (totals[idx] == 0) return std::nullopt;
        return sums[idx] / static_cast<double>(totals[idx]);
    };
    out.many = ratio(data::ShotGroup::Many);
    out.medium = ratio(data::ShotGroup::Medium);
    out.few = ratio(data::ShotGroup::Few);
    out.all = per_instance.empty()
                  ? 0.0
                  : total_sum / static_cast<double>(per_instance.size());
    return out;
}

// ---------------------------------------------------------------------------
// Dump CSV: header `id,label,expert,logit_0,...,logit_{C-1}`, one row per
// (instance, expert). Rows may arrive in any order; the reader checks that
// every instance carries all experts and a consistent label.
// ---------------------------------------------------------------------------

inline void save_dump_csv(const PredictionDump& dump, std::ostream& out) {
    out << "id,label,expert";
    for (int k = 0; k < dump.num_classes(); ++k) out << ",logit_" << k;
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < dump.size(); ++i) {
        for (int m = 0; m < dump.num_experts(); ++m) {
            out << dump.ids[i] << ',' << dump.labels[i] << ',' << m;
            for (double v : dump.logits[static_cast<std::size_t>(m)].row(i)) {
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                out << ',' << buf;
            }
            out << '\n';
        }
    }
}

inline void save_dump_csv(const PredictionDump& dump, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write dump file: " + path);
    save_dump_csv(dump, out);
}

inline PredictionDump load_dump_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("dump csv: missing header");
    const auto header = data::detail::split_csv_line(line);
    if (header.size() < 4 || header[0] != "id" || header[1] != "label" ||
        header[2] != "expert") {
        throw ConfigError("dump csv: bad header");
    }
    const std::size_t classes = header.size() - 3;
    struct Row {
        int label;
        std::map<int, std::vector<double>> by_expert;
    };
    std::map<int, Row> rows;
    int max_expert = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto parts = data::detail::split_csv_line(line);
        if (parts.size() != header.size()) throw ConfigError("dump csv: row arity mismatch");
        const int id = static_cast<int>(data::detail::parse_long(parts[0], "id"));
        const int label = static_cast<int>(data::detail::parse_long(parts[1], "label"));
        const int expert = static_cast<int>(data::detail::parse_long(parts[2], "expert"));
        if (expert < 0) throw ConfigError("dump csv: negative expert index");
        max_expert = std::max(max_expert, expert);
        auto [it, inserted] = rows.try_emplace(id, Row{label, {}});
        if (!inserted && it->second.label != label) {
            throw ConfigError("dump csv: conflicting labels for instance " +
                              std::to_string(id));
        }
        std::vector<double> logits(classes);
        for (std::size_t k = 0; k < classes; ++k) {
            logits[k] = data::detail::parse_double(parts[3 + k], "logits");
        }
        if (!it->second.by_expert.emplace(expert, std::move(logits)).second) {
            throw ConfigError("dump csv: duplicate (instance, expert) row for id " +
                              std::to_string(id));
        }
    }
    if (rows.empty()) throw ConfigError("dump csv: no data rows");
    const std::size_t experts = static_cast<std::size_t>(max_expert + 1);
    PredictionDump dump;
    dump.logits.assign(experts, Matrix(rows.size(), classes));
    std::size_t i = 0;
    for (const auto& [id, row] : rows) {
        if (row.by_expert.size() != experts) {
            throw ConfigError("dump csv: instance " + std::to_string(id) +
                              " is missing expert rows");
        }
        dump.ids.push_back(id);
        dump.labels.push_back(row.label);
        if (row.label < 0 || static_cast<std::size_t>(row.label) >= classes) {
            throw ConfigError("dump csv: label out of range for instance " +
                              std::to_string(id));
        }
        for (const auto& [expert, logits] : row.by_expert) {
            std::copy(logits.begin(), logits.end(),
                      dump.logits[static_cast<std::size_t>(expert)].row(i).begin());
        }
        ++i;
    }
    return dump;
}

inline PredictionDump load_dump_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read dump file: " + path);
    return load_dump_csv(in);
}

}  // namespace mdcs::metrics
