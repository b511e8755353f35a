// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <utility>
#include <vector>

namespace htgq {

/// Per-channel vector of reals. Length must match the channel dimension of
/// whatever tensor it modifies; call sites validate.
using ChannelVector = std::vector<double>;

/// Dense row-major matrix of doubles. Rows are token positions (or input
/// channels for weights), columns are channels. Entries are validated to be
/// finite when constructed from user-supplied data.
class Tensor2D {
public:
    Tensor2D() = default;
    Tensor2D(std::size_t rows, std::size_t cols);
    Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// Copy of rows [first, first + count).
    Tensor2D row_block(std::size_t first, std::size_t count) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Standard matrix product. Summation over the inner dimension runs
/// sequentially in ascending index order for every output element, so results
/// are bit-reproducible across runs and platforms with the same FP unit.
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);

/// Row vector times matrix: out[j] = sum_k v[k] * m(k, j).
ChannelVector vec_matmul(const ChannelVector& v, const Tensor2D& m);

/// Per-column minimum and maximum. Errors on an empty tensor.
std::pair<ChannelVector, ChannelVector> col_min_max(const Tensor2D& x);

/// Per-column maximum of absolute values.
ChannelVector col_abs_max(const Tensor2D& x);

}  // namespace htgq
