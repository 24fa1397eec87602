// Copyright 2026 The lowbit Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef LOWBIT_PACKING_HPP_
#define LOWBIT_PACKING_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lowbit/tensor.hpp"

namespace lowbit {

enum class CodecId : std::uint8_t {
  kRaw = 0,     // unquantized float64 values
  kIntSym = 1,  // symmetric integer codes, one float64 scale per group
  kMxFp4 = 2,   // E2M1 element codes, one E8M0 scale per block
  kMxFp8 = 3,   // E4M3 element codes, one E8M0 scale per block
};

enum class ScaleFormat : std::uint8_t { kNone = 0, kFloat64 = 1, kE8M0 = 2 };

// Unpacked view: integer codes plus scales plus the metadata needed to
// interpret them. Integer codes are signed; MX codes are raw bit patterns.
struct CodeStream {
  CodecId codec = CodecId::kRaw;
  std::uint8_t bits = 64;
  std::uint32_t group_size = 0;
  Shape shape;
  ScaleFormat scale_format = ScaleFormat::kNone;
  std::vector<std::int32_t> codes;
  // kFloat64: scale values. kE8M0: unbiased exponents stored as doubles.
  std::vector<double> scales;
  std::vector<double> raw;  // kRaw only

  friend bool operator==(const CodeStream&, const CodeStream&) = default;
};

// Byte layout, all integers little-endian:
//   u8 codec | u8 bits | u32 group_size | u8 rank | rank x u64 dims | u8 scale_format
//   scales   (f64 each, or u8 biased exponent each; one per group)
//   codes    (ceil(n * bits / 8) bytes, LSB-first within each byte)
struct PackedWeights {
  CodecId codec = CodecId::kRaw;
  std::uint8_t bits = 64;
  std::uint32_t group_size = 0;
  Shape shape;
  ScaleFormat scale_format = ScaleFormat::kNone;
  std::vector<std::uint8_t> scale_bytes;
  std::vector<std::uint8_t> code_bytes;

  friend bool operator==(const PackedWeights&, const PackedWeights&) = default;
};

// Number of scale entries implied by a shape and group size.
std::size_t scale_count(const Shape& shape, std::uint32_t group_size);

// LSB-first bit stream of `bits`-wide fields. Signed codes are stored in
// two's complement truncated to `bits`.
std::vector<std::uint8_t> pack_bits(std::span<const std::int32_t> codes, int bits,
                                    bool is_signed);
std::vector<std::int32_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count,
                                      int bits, bool is_signed);

PackedWeights pack(const CodeStream& stream);
CodeStream unpack(const PackedWeights& packed);

std::vector<std::uint8_t> serialize(const PackedWeights& packed);
// Parses one record starting at bytes[0]; `consumed` receives its length.
PackedWeights deserialize(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

// Little-endian primitives shared with the artifact writer.
namespace le {
void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::span<const std::uint8_t> take(std::size_t n);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};
}  // namespace le

}  // namespace lowbit

#endif  // LOWBIT_PACKING_HPP_
