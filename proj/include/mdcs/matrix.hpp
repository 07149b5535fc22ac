#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mdcs/errors.hpp"

namespace mdcs {

/// Dense row-major matrix of doubles. Just enough for batches of features,
/// logits, and layer weights.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    bool operator==(const Matrix& other) const = default;
};

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols,
                          const char* what) {
    if (m.rows != rows || m.cols != cols) {
        throw ConfigError(std::string("shape mismatch for ") + what);
    }
}

}  // namespace mdcs
