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

#include "lowbit/packing.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "lowbit/errors.hpp"
#include "lowbit/mx.hpp"

namespace lowbit {

namespace le {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void Reader::need(std::size_t n) const {
  if (remaining() < n) {
    throw FormatError("truncated input: need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
}

std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> Reader::take(std::size_t n) {
  need(n);
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

}  // namespace le

namespace {

void check_codec(const CodecId codec, int bits, ScaleFormat scale_format) {
  switch (codec) {
    case CodecId::kRaw:
      if (bits != 64 || scale_format != ScaleFormat::kNone) {
        throw FormatError("raw codec needs bits=64 and no scales");
      }
      return;
    case CodecId::kIntSym:
      if (bits < 2 || bits > 16 || scale_format != ScaleFormat::kFloat64) {
        throw FormatError("int-sym codec needs bits in [2,16] and float64 scales");
      }
      return;
    case CodecId::kMxFp4:
      if (bits != 4 || scale_format != ScaleFormat::kE8M0) {
        throw FormatError("mxfp4 codec needs bits=4 and E8M0 scales");
      }
      return;
    case CodecId::kMxFp8:
      if (bits != 8 || scale_format != ScaleFormat::kE8M0) {
        throw FormatError("mxfp8 codec needs bits=8 and E8M0 scales");
      }
      return;
  }
  throw FormatError("unknown codec id " + std::to_string(static_cast<int>(codec)));
}

}  // namespace

std::size_t scale_count(const Shape& shape, std::uint32_t group_size) {
  const std::size_t n = shape_numel(shape);
  if (n == 0 || group_size == 0) return 0;
  const std::size_t cols = shape.empty() ? 1 : shape.back();
  return (n / cols) * ((cols + group_size - 1) / group_size);
}

std::vector<std::uint8_t> pack_bits(std::span<const std::int32_t> codes, int bits,
                                    bool is_signed) {
  if (bits < 1 || bits > 16) throw ContractError("pack_bits: width must be in [1, 16]");
  const std::int64_t lo = is_signed ? -(std::int64_t{1} << (bits - 1)) : 0;
  const std::int64_t hi = is_signed ? (std::int64_t{1} << (bits - 1)) - 1
                                    : (std::int64_t{1} << bits) - 1;
  const std::uint32_t mask = (std::uint32_t{1} << bits) - 1u;
  std::vector<std::uint8_t> out((codes.size() * bits + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < lo || codes[i] > hi) {
      throw ContractError("code " + std::to_string(codes[i]) + " at index " + std::to_string(i) +
                          " does not fit in " + std::to_string(bits) + " bits");
    }
    const std::uint32_t field = static_cast<std::uint32_t>(codes[i]) & mask;
    for (int b = 0; b < bits; ++b, ++bit) {
      if ((field >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return out;
}

std::vector<std::int32_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count,
                                      int bits, bool is_signed) {
  if (bits < 1 || bits > 16) throw ContractError("unpack_bits: width must be in [1, 16]");
  if (bytes.size() * 8 < count * bits) throw FormatError("code stream shorter than declared");
  std::vector<std::int32_t> out(count);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t field = 0;
    for (int b = 0; b < bits; ++b, ++bit) {
      field |= static_cast<std::uint32_t>((bytes[bit / 8] >> (bit % 8)) & 1u) << b;
    }
    std::int32_t v = static_cast<std::int32_t>(field);
    if (is_signed && (field >> (bits - 1)) & 1u) v -= std::int32_t{1} << bits;
    out[i] = v;
  }
  return out;
}

PackedWeights pack(const CodeStream& s) {
  check_codec(s.codec, s.bits, s.scale_format);
  if (s.shape.size() > 255) throw ContractError("shape rank exceeds 255");
  PackedWeights p{s.codec, s.bits, s.group_size, s.shape, s.scale_format, {}, {}};
  const std::size_t n = shape_numel(s.shape);
  if (s.codec == CodecId::kRaw) {
    if (s.raw.size() != n) throw ContractError("raw value count does not match shape");
    for (double v : s.raw) le::put_f64(p.code_bytes, v);
    return p;
  }
  if (s.codes.size() != n) throw ContractError("code count does not match shape");
  if (s.scales.size() != scale_count(s.shape, s.group_size)) {
    throw ContractError("scale count does not match shape and group size");
  }
  for (double sc : s.scales) {
    if (s.scale_format == ScaleFormat::kFloat64) {
      le::put_f64(p.scale_bytes, sc);
    } else {
      if (sc != std::nearbyint(sc) || sc < -kE8M0Bias || sc > kE8M0Bias) {
        throw ContractError("E8M0 exponent out of range");
      }
      le::put_u8(p.scale_bytes, static_cast<std::uint8_t>(static_cast<int>(sc) + kE8M0Bias));
    }
  }
  p.code_bytes = pack_bits(s.codes, s.bits, s.codec == CodecId::kIntSym);
  return p;
}

CodeStream unpack(const PackedWeights& p) {
  check_codec(p.codec, p.bits, p.scale_format);
  CodeStream s;
  s.codec = p.codec;
  s.bits = p.bits;
  s.group_size = p.group_size;
  s.shape = p.shape;
  s.scale_format = p.scale_format;
  const std::size_t n = shape_numel(p.shape);
  if (p.codec == CodecId::kRaw) {
    if (p.code_bytes.size() != n * 8) throw FormatError("raw payload length mismatch");
    le::Reader r(p.code_bytes);
    s.raw.resize(n);
    for (double& v : s.raw) v = r.f64();
    return s;
  }
  const std::size_t groups = scale_count(p.shape, p.group_size);
  le::Reader r(p.scale_bytes);
  s.scales.resize(groups);
  for (double& sc : s.scales) {
    sc = p.scale_format == ScaleFormat::kFloat64 ? r.f64()
                                                 : static_cast<double>(int{r.u8()} - kE8M0Bias);
  }
  if (r.remaining() != 0) throw FormatError("scale payload length mismatch");
  if (p.code_bytes.size() != (n * p.bits + 7) / 8) throw FormatError("code payload length mismatch");
  s.codes = unpack_bits(p.code_bytes, n, p.bits, p.codec == CodecId::kIntSym);
  return s;
}

std::vector<std::uint8_t> serialize(const PackedWeights& p) {
  std::vector<std::uint8_t> out;
  le::put_u8(out, static_cast<std::uint8_t>(p.codec));
  le::put_u8(out, p.bits);
  le::put_u32(out, p.group_size);
  le::put_u8(out, static_cast<std::uint8_t>(p.shape.size()));
  for (std::size_t d : p.shape) le::put_u64(out, d);
  le::put_u8(out, static_cast<std::uint8_t>(p.scale_format));
  out.insert(out.end(), p.scale_bytes.begin(), p.scale_bytes.end());
  out.insert(out.end(), p.code_bytes.begin(), p.code_bytes.end());
  return out;
}

PackedWeights deserialize(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  le::Reader r(bytes);
  PackedWeights p;
  p.codec = static_cast<CodecId>(r.u8());
  p.bits = r.u8();
  p.group_size = r.u32();
  const std::size_t rank = r.u8();
  for (std::size_t i = 0; i < rank; ++i) p.shape.push_back(r.u64());
  p.scale_format = static_cast<ScaleFormat>(r.u8());
  check_codec(p.codec, p.bits, p.scale_format);
  const std::size_t n = shape_numel(p.shape);
  std::size_t scale_bytes = 0, code_bytes = 0;
  if (p.codec == CodecId::kRaw) {
    code_bytes = n * 8;
  } else {
    const std::size_t groups = scale_count(p.shape, p.group_size);
    scale_bytes = groups * (p.scale_format == ScaleFormat::kFloat64 ? 8 : 1);
    code_bytes = (n * p.bits + 7) / 8;
  }
  auto sb = r.take(scale_bytes);
  auto cb = r.take(code_bytes);
  p.scale_bytes.assign(sb.begin(), sb.end());
  p.code_bytes.assign(cb.begin(), cb.end());
  if (consumed) *consumed = r.offset();
  return p;
}

}  // namespace lowbit
