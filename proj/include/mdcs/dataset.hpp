#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mdcs/errors.hpp"
#include "mdcs/matrix.hpp"
#include "mdcs/rng.hpp"

namespace mdcs::data {

/// Feature rows with integer class labels and per-class sample counts.
/// counts[j] always equals the number of rows labeled j.
struct LabeledDataset {
    Matrix features;          // n x d
    std::vector<int> labels;  // n, values in [0, C)
    std::vector<int> counts;  // C

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }
    int num_classes() const { return static_cast<int>(counts.size()); }
};

/// Validates the counts/labels invariant; throws ConfigError on violation.
inline void validate(const LabeledDataset& ds) {
    if (ds.features.rows != ds.labels.size()) {
        throw ConfigError("dataset: feature rows and labels differ in length");
    }
    std::vector<int> seen(ds.counts.size(), 0);
    for (int y : ds.labels) {
        if (y < 0 || y >= ds.num_classes()) {
            throw ConfigError("dataset: label out of range");
        }
        ++seen[static_cast<std::size_t>(y)];
    }
    for (std::size_t j = 0; j < ds.counts.size(); ++j) {
        if (seen[j] != ds.counts[j]) {
            throw ConfigError("dataset: counts[" + std::to_string(j) +
                              "] does not match label occurrences");
        }
    }
}

/// Shape of a long-tailed class distribution: beta = n_max / n_min.
struct ImbalanceProfile {
    int classes = 0;
    int n_max = 0;
    double beta = 1.0;
};

enum class ShotGroup { Many, Medium, Few };

/// Per-class Many/Medium/Few assignment. A class is Many iff its training
/// count exceeds many_threshold and Few iff the count is below few_threshold.
struct ShotSplit {
    int many_threshold = 100;
    int few_threshold = 20;
    std::vector<ShotGroup> assignment;
};

enum class AugmentKind { Weak, Strong };

/// Vector-space augmentation. Weak is Gaussian jitter only. Strong applies
/// jitter, then independent coordinate dropout, then a global scale drawn
/// uniformly from [scale_min, scale_max), op_count rounds in sequence.
struct AugmentPolicy {
    AugmentKind kind = AugmentKind::Weak;
    double jitter_sigma = 0.0;
    double dropout_prob = 0.0;  // Strong only
    double scale_min = 1.0;     // Strong only
    double scale_max = 1.0;     // Strong only
    int op_count = 1;           // Strong only
};

inline void validate(const AugmentPolicy& p) {
    if (p.jitter_sigma < 0.0) throw ConfigError("augment: jitter_sigma must be >= 0");
    if (p.dropout_prob < 0.0 || p.dropout_prob > 1.0) {
        throw ConfigError("augment: dropout_prob must be in [0,1]");
    }
    if (p.scale_min > p.scale_max) throw ConfigError("augment: empty scale range");
    if (p.op_count < 1) throw ConfigError("augment: op_count must be >= 1");
    if (p.kind == AugmentKind::Weak &&
        (p.dropout_prob != 0.0 || p.scale_min != 1.0 || p.scale_max != 1.0)) {
        throw ConfigError("augment: weak policy cannot drop or rescale");
    }
}

/// Exponential long-tailed count profile: counts[j] = round(n_max * beta^(-j/(C-1))).
/// counts[0] = n_max, counts[C-1] = round(n_max/beta), non-increasing.
inline std::vector<int> exp_longtail_counts(const ImbalanceProfile& profile) {
    if (profile.classes < 2) throw ConfigError("imbalance profile: need at least 2 classes");
    if (profile.n_max < 1) throw ConfigError("imbalance profile: n_max must be >= 1");
    if (profile.beta < 1.0) throw ConfigError("imbalance profile: beta must be >= 1");
    const int c = profile.classes;
    std::vector<int> counts(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) {
        const double exact =
            profile.n_max * std::pow(profile.beta, -static_cast<double>(j) / (c - 1));
        const long long rounded = std::llround(exact);
        if (rounded < 1) {
            throw ConfigError("imbalance profile: beta " + std::to_string(profile.beta) +
                              " rounds class " + std::to_string(j) + " to zero samples");
        }
        counts[static_cast<std::size_t>(j)] = static_cast<int>(rounded);
    }
    return counts;
}

namespace detail {
inline std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.counts.size());
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    return by_class;
}

inline LabeledDataset gather_rows(const LabeledDataset& src,
                                  const std::vector<std::size_t>& rows) {
    LabeledDataset out;
    out.features = Matrix(rows.size(), src.dim());
    out.labels.reserve(rows.size());
    out.counts.assign(src.counts.size(), 0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src_row = src.features.row(rows[r]);
        std::copy(src_row.begin(), src_row.end(), out.features.row(r).begin());
        const int y = src.labels[rows[r]];
        out.labels.push_back(y);
        ++out.counts[static_cast<std::size_t>(y)];
    }
    return out;
}
}  // namespace detail

/// Draws the requested per-class counts without replacement. Selected rows
/// keep their original relative order within each class block.
inline LabeledDataset subsample_longtail(const LabeledDataset& balanced,
                                         const std::vector<int>& counts,
                                         std::uint64_t seed) {
    if (counts.size() != balanced.counts.size()) {
        throw ConfigError("subsample: counts length differs from dataset classes");
    }
    auto by_class = detail::indices_by_class(balanced);
    Rng rng(seed);
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < counts.size(); ++j) {
        const auto want = static_cast<std::size_t>(counts[j]);
        if (want > by_class[j].size()) {
            throw ConfigError("subsample: class " + std::to_string(j) + " has only " +
                              std::to_string(by_class[j].size()) + " samples, need " +
                              std::to_string(want));
        }
        auto pool = by_class[j];
        rng.shuffle(pool);
        pool.resize(want);
        std::sort(pool.begin(), pool.end());
        keep.insert(keep.end(), pool.begin(), pool.end());
    }
    return detail::gather_rows(balanced, keep);
}

/// Deterministic layout of class means, pairwise `separation` apart when
/// C <= dim (scaled axis corners); for C > dim extra classes move outward
/// along the axes, keeping every pair at least `separation` apart.
inline Matrix synth_means(int classes, int dim, double separation) {
    Matrix means(static_cast<std::size_t>(classes), static_cast<std::size_t>(dim));
    if (classes <= dim) {
        const double radius = separation / std::sqrt(2.0);
        for (int j = 0; j < classes; ++j) {
            means.at(static_cast<std::size_t>(j), static_cast<std::size_t>(j)) = radius;
        }
    } else {
        for (int j = 0; j < classes; ++j) {
            const int axis = j % dim;
            const int ring = j / dim;
            means.at(static_cast<std::size_t>(j), static_cast<std::size_t>(axis)) =
                separation * (ring + 1);
        }
    }
    return means;
}

/// Isotropic unit-variance Gaussian blobs, one per class, counts honored
/// exactly. Rows are laid out class by class.
inline LabeledDataset synth_gaussians(int classes, int dim, const std::vector<int>& counts,
                                      double separation, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (dim < 2) throw ConfigError("synth: need dim >= 2");
    if (separation <= 0.0) throw ConfigError("synth: separation must be positive");
    if (counts.size() != static_cast<std::size_t>(classes)) {
        throw ConfigError("synth: counts length differs from class count");
    }
    const Matrix means = synth_means(classes, dim, separation);
    const std::size_t n = static_cast<std::size_t>(
        std::accumulate(counts.begin(), counts.end(), 0));
    LabeledDataset ds;
    ds.features = Matrix(n, static_cast<std::size_t>(dim));
    ds.labels.reserve(n);
    ds.counts = counts;
    Rng rng(seed);
    std::size_t row = 0;
    for (int j = 0; j < classes; ++j) {
        for (int k = 0; k < counts[static_cast<std::size_t>(j)]; ++k, ++row) {
            auto dst = ds.features.row(row);
            const auto mean = means.row(static_cast<std::size_t>(j));
            for (int c = 0; c < dim; ++c) {
                dst[static_cast<std::size_t>(c)] =
                    mean[static_cast<std::size_t>(c)] + rng.normal();
            }
            ds.labels.push_back(j);
        }
    }
    return ds;
}

/// Assigns every class to exactly one of Many/Medium/Few by its count.
inline ShotSplit shot_partition(const std::vector<int>& counts, int many_threshold = 100,
                                int few_threshold = 20) {
    if (few_threshold > many_threshold) {
        throw ConfigError("shot split: few_threshold must be <= many_threshold");
    }
    ShotSplit split;
    split.many_threshold = many_threshold;
    split.few_threshold = few_threshold;
    split.assignment.reserve(counts.size());
    for (int c : counts) {
        if (c > many_threshold) {
            split.assignment.push_back(ShotGroup::Many);
        } else if (c < few_threshold) {
            split.assignment.push_back(ShotGroup::Few);
        } else {
            split.assignment.push_back(ShotGroup::Medium);
        }
    }
    return split;
}

/// Applies the policy to one feature vector, deterministically per (x, seed).
/// Draw order per strong round: jitter normals (coordinate order, only when
/// jitter_sigma > 0), dropout uniforms (only when dropout_prob > 0), then one
/// scale uniform (only when the range is non-degenerate).
inline std::vector<double> augment(std::span<const double> x, const AugmentPolicy& policy,
                                   std::uint64_t seed) {
    validate(policy);
    std::vector<double> out(x.begin(), x.end());
    Rng rng(seed);
    const int rounds = policy.kind == AugmentKind::Strong ? policy.op_count : 1;
    for (int r = 0; r < rounds; ++r) {
        if (policy.jitter_sigma > 0.0) {
            for (double& v : out) v += policy.jitter_sigma * rng.normal();
        }
        if (policy.kind == AugmentKind::Weak) break;
        if (policy.dropout_prob > 0.0) {
            for (double& v : out) {
                if (rng.uniform() < policy.dropout_prob) v = 0.0;
            }
        }
        if (policy.scale_max > policy.scale_min) {
            const double scale = rng.uniform(policy.scale_min, policy.scale_max);
            for (double& v : out) v *= scale;
        } else if (policy.scale_min != 1.0) {
            for (double& v : out) v *= policy.scale_min;
        }
    }
    return out;
}

/// Per-class resample with replacement keeping the original class counts, so
/// every resample has the same long-tailed shape as the source.
inline LabeledDataset bootstrap_resample(const LabeledDataset& ds, std::uint64_t seed) {
    if (ds.size() == 0) throw ConfigError("bootstrap: dataset is empty");
    auto by_class = detail::indices_by_class(ds);
    Rng rng(seed);
    std::vector<std::size_t> rows;
    rows.reserve(ds.size());
    for (std::size_t j = 0; j < ds.counts.size(); ++j) {
        for (int k = 0; k < ds.counts[j]; ++k) {
            rows.push_back(by_class[j][rng.index(by_class[j].size())]);
        }
    }
    return detail::gather_rows(ds, rows);
}

namespace detail {
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& tok, const char* what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("csv: bad number in ") + what + ": '" + tok + "'");
    }
}

inline long parse_long(const std::string& tok, const char* what) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("csv: bad integer in ") + what + ": '" + tok + "'");
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, ',')) parts.push_back(cur);
    return parts;
}
}  // namespace detail

/// Dataset CSV: line 1 `n,d,C`; line 2 the C class counts; then n rows of
/// `f_1,...,f_d,label`. Floats carry 17 significant digits and round-trip
/// exactly.
inline void save_csv(const LabeledDataset& ds, std::ostream& out) {
    out << ds.size() << ',' << ds.dim() << ',' << ds.num_classes() << '\n';
    for (std::size_t j = 0; j < ds.counts.size(); ++j) {
        out << (j ? "," : "") << ds.counts[j];
    }
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto row = ds.features.row(i);
        for (double v : row) out << detail::format_double(v) << ',';
        out << ds.labels[i] << '\n';
    }
}

inline void save_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write dataset file: " + path);
    save_csv(ds, out);
}

inline LabeledDataset load_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("dataset csv: missing header line");
    auto header = detail::split_csv_line(line);
    if (header.size() != 3) throw ConfigError("dataset csv: header must be n,d,C");
    const auto n = static_cast<std::size_t>(detail::parse_long(header[0], "header"));
    const auto d = static_cast<std::size_t>(detail::parse_long(header[1], "header"));
    const auto c = static_cast<std::size_t>(detail::parse_long(header[2], "header"));
    if (!std::getline(in, line)) throw ConfigError("dataset csv: missing counts line");
    auto count_tokens = detail::split_csv_line(line);
    if (count_tokens.size() != c) throw ConfigError("dataset csv: counts line length != C");
    LabeledDataset ds;
    ds.counts.reserve(c);
    for (const auto& tok : count_tokens) {
        ds.counts.push_back(static_cast<int>(detail::parse_long(tok, "counts")));
    }
    ds.features = Matrix(n, d);
    ds.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw ConfigError("dataset csv: truncated rows");
        auto parts = detail::split_csv_line(line);
        if (parts.size() != d + 1) {
            throw ConfigError("dataset csv: row " + std::to_string(i) + " has wrong arity");
        }
        auto dst = ds.features.row(i);
        for (std::size_t k = 0; k < d; ++k) {
            dst[k] = detail::parse_double(parts[k], "features");
        }
        ds.labels.push_back(static_cast<int>(detail::parse_long(parts[d], "label")));
    }
    validate(ds);
    return ds;
}

inline LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read dataset file: " + path);
    return load_csv(in);
}

}  // namespace mdcs::data
