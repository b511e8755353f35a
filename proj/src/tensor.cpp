// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace htgq {

namespace {

void check_finite(const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("Tensor2D: entries must be finite");
        }
    }
}

}  // namespace

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Tensor2D: data length must equal rows * cols");
    }
    check_finite(data_);
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("Tensor2D: ragged rows");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor2D(r, c, std::move(values));
}

Tensor2D Tensor2D::row_block(std::size_t first, std::size_t count) const {
    if (first + count > rows_) {
        throw std::invalid_argument("Tensor2D::row_block: range out of bounds");
    }
    Tensor2D out(count, cols_);
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
              data_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols_),
              out.data_.begin());
    return out;
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions do not match");
    }
    Tensor2D out(a.rows(), b.cols());
    // i-k-j loop order: cache friendly, and for each output element the
    // additions still happen in ascending k, identical to the naive triple
    // loop.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out_row = &out.data()[i * b.cols()];
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a.at(i, k);
            const double* b_row = &b.data()[k * b.cols()];
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    return out;
}

ChannelVector vec_matmul(const ChannelVector& v, const Tensor2D& m) {
    if (v.size() != m.rows()) {
        throw std::invalid_argument("vec_matmul: length must equal matrix rows");
    }
    ChannelVector out(m.cols(), 0.0);
    for (std::size_t k = 0; k < m.rows(); ++k) {
        const double vk = v[k];
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out[j] += vk * m.at(k, j);
        }
    }
    return out;
}

std::pair<ChannelVector, ChannelVector> col_min_max(const Tensor2D& x) {
    if (x.rows() == 0 || x.cols() == 0) {
        throw std::invalid_argument("col_min_max: empty tensor");
    }
    ChannelVector mins(x.cols()), maxs(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        mins[c] = maxs[c] = x.at(0, c);
    }
    for (std::size_t r = 1; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double v = x.at(r, c);
            if (v < mins[c]) mins[c] = v;
            if (v > maxs[c]) maxs[c] = v;
        }
    }
    return {std::move(mins), std::move(maxs)};
}

ChannelVector col_abs_max(const Tensor2D& x) {
    if (x.rows() == 0 || x.cols() == 0) {
        throw std::invalid_argument("col_abs_max: empty tensor");
    }
    ChannelVector out(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double v = std::fabs(x.at(r, c));
            if (v > out[c]) out[c] = v;
        }
    }
    return out;
}

}  // namespace htgq
