// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "htgq/quant_block.hpp"

namespace htgq {

inline constexpr const char* kBundleSchema = "htg-bundle/1";

/// Packs codes as a little-endian bit stream at the given width: value i
/// occupies bits [i * bits, (i + 1) * bits), bit b of the stream living in
/// byte b / 8 at position b % 8.
std::vector<std::uint8_t> pack_codes(const std::vector<std::int32_t>& codes, int bits);
std::vector<std::int32_t> unpack_codes(const std::vector<std::uint8_t>& bytes, int bits,
                                       std::size_t count);

struct Bundle {
    QuantizedStack stack;
    nlohmann::json meta;
};

/// Writes manifest.json plus blobs: packed weight codes (or float32 weights
/// for an unquantized bundle), per-group bias vectors, AdaLN gain/beta sets
/// and dequant affines as little-endian float32.
void save_bundle(const Bundle& bundle, const std::filesystem::path& dir);
Bundle load_bundle(const std::filesystem::path& dir);

}  // namespace htgq
