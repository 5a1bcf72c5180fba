#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bsrkit/tensor.hpp"

namespace bsrkit {

// ".bft" binary tensor file:
//   "BFT1" | u8 dtype (0 = f64) | u8 rank | rank x u32 LE extents | f64 LE payload
std::vector<std::uint8_t> encode_bft(const Tensor& t);
Tensor decode_bft(const std::vector<std::uint8_t>& bytes);

void write_bft(const Tensor& t, const std::filesystem::path& path);
Tensor read_bft(const std::filesystem::path& path);

}  // namespace bsrkit
