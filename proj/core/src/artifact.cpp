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

#include "lowbit/artifact.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "lowbit/allocator.hpp"
#include "lowbit/errors.hpp"
#include "lowbit/mx.hpp"
#include "lowbit/quant.hpp"

namespace lowbit {
namespace {

constexpr std::uint8_t kMagic[4] = {'L', 'B', 'Q', 'A'};

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  if (s.size() > 0xFFFFFFFFu) throw ContractError("string too long for the artifact format");
  le::put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

std::string get_string(le::Reader& r) {
  const std::uint32_t n = r.u32();
  const auto bytes = r.take(n);
  return {bytes.begin(), bytes.end()};
}

void put_values(std::vector<std::uint8_t>& out, const Tensor& t) {
  le::put_u64(out, t.size());
  for (double v : t.values()) le::put_f64(out, v);
}

Tensor get_values(le::Reader& r, const Shape& shape) {
  const std::uint64_t n = r.u64();
  if (n == 0) return {};
  if (n != shape_numel(shape)) throw FormatError("parameter count does not match its layer");
  if (n > r.remaining() / 8) throw FormatError("truncated parameter block");
  Tensor t(shape);
  for (double& v : t.values()) v = r.f64();
  return t;
}

nlohmann::json parse_json(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("artifact ") + what + " is not JSON: " + e.what());
  }
}

TunedLayer as_tuned(const ArtifactLayer& l, std::size_t index) {
  TunedLayer t;
  t.layer = index;
  t.name = l.name;
  t.scheme = l.scheme;
  t.v = l.v;
  t.alpha = l.alpha;
  t.beta = l.beta;
  t.init_scale = l.init_scale;
  return t;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& text) {
  return fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t json_digest(const nlohmann::json& j) { return fnv1a64(j.dump()); }

CodeStream encode_layer(const Tensor& w, const TunedLayer& layer) {
  CodeStream s;
  s.shape = w.shape();
  if (layer.scheme.is_identity()) {
    s.codec = CodecId::kRaw;
    s.bits = 64;
    s.raw = w.vec();
    return s;
  }
  s.codec = layer.scheme.codec();
  s.bits = static_cast<std::uint8_t>(layer.scheme.bits);
  s.group_size = static_cast<std::uint32_t>(layer.scheme.group_size);
  if (layer.scheme.family == SchemeFamily::kIntSym) {
    const IntCodes c = uniform_quantize(w, layer.int_params());
    s.scale_format = ScaleFormat::kFloat64;
    s.codes.assign(c.codes.begin(), c.codes.end());
    s.scales = c.scales.vec();
  } else {
    const MxCodes c = mx_quantize_with_offset(w, layer.v, layer.scheme.mx_format());
    s.scale_format = ScaleFormat::kE8M0;
    s.codes.assign(c.codes.begin(), c.codes.end());
    s.scales.assign(c.exponents.begin(), c.exponents.end());
  }
  return s;
}

Tensor decode_stream(const CodeStream& s) {
  switch (s.codec) {
    case CodecId::kRaw:
      return Tensor(s.shape, s.raw);
    case CodecId::kIntSym: {
      const GroupLayout layout(s.shape, s.group_size);
      IntCodes c{{s.codes.begin(), s.codes.end()}, Tensor(layout.group_shape(), s.scales)};
      return uniform_dequantize(c, s.shape, s.group_size);
    }
    case CodecId::kMxFp4:
    case CodecId::kMxFp8: {
      const MxBlockFormat fmt{s.codec == CodecId::kMxFp4 ? MxElement::kE2M1 : MxElement::kE4M3,
                              s.group_size};
      MxCodes c;
      c.codes.reserve(s.codes.size());
      for (std::int32_t code : s.codes) c.codes.push_back(static_cast<std::uint8_t>(code));
      for (double e : s.scales) c.exponents.push_back(static_cast<int>(e));
      return mx_dequantize(c, s.shape, fmt);
    }
  }
  throw FormatError("unknown codec");
}

std::vector<std::uint8_t> QuantizedArtifact::to_bytes() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  le::put_u32(out, kArtifactVersion);
  le::put_u64(out, config_digest);
  le::put_u64(out, assignment_digest);
  put_string(out, config.dump());
  put_string(out, assignment.dump());
  le::put_u32(out, static_cast<std::uint32_t>(layers.size()));
  for (const ArtifactLayer& l : layers) {
    put_string(out, l.name);
    le::put_u8(out, static_cast<std::uint8_t>(l.scheme.family));
    le::put_u8(out, static_cast<std::uint8_t>(l.scheme.bits));
    le::put_u32(out, static_cast<std::uint32_t>(l.scheme.group_size));
    const auto rec = serialize(l.weights);
    out.insert(out.end(), rec.begin(), rec.end());
    put_values(out, l.v);
    put_values(out, l.alpha);
    put_values(out, l.beta);
    put_values(out, l.init_scale);
  }
  put_string(out, trailer.dump());
  le::put_u64(out, fnv1a64(out));
  return out;
}

QuantizedArtifact QuantizedArtifact::from_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("artifact too short");
  const std::uint64_t stored = le::Reader(bytes.subspan(bytes.size() - 8)).u64();
  if (fnv1a64(bytes.first(bytes.size() - 8)) != stored) {
    throw FormatError("artifact checksum mismatch");
  }
  le::Reader r(bytes.first(bytes.size() - 8));
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw FormatError("not a lowbit artifact");
  }
  if (const auto v = r.u32(); v != kArtifactVersion) {
    throw FormatError("unsupported artifact version " + std::to_string(v));
  }
  QuantizedArtifact a;
  a.config_digest = r.u64();
  a.assignment_digest = r.u64();
  a.config = parse_json(get_string(r), "config");
  a.assignment = parse_json(get_string(r), "assignment");
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    ArtifactLayer l;
    l.name = get_string(r);
    const std::uint8_t family = r.u8();
    if (family > 1) throw FormatError("unknown scheme family in layer " + l.name);
    l.scheme.family = static_cast<SchemeFamily>(family);
    l.scheme.bits = r.u8();
    l.scheme.group_size = r.u32();
    std::size_t used = 0;
    const auto rest = bytes.subspan(r.offset(), r.remaining());
    l.weights = deserialize(rest, &used);
    r.take(used);
    const Shape groups =
        l.scheme.group_size == 0 ? Shape{} : GroupLayout(l.weights.shape, l.scheme.group_size).group_shape();
    l.v = get_values(r, l.weights.shape);
    l.alpha = get_values(r, groups);
    l.beta = get_values(r, groups);
    l.init_scale = get_values(r, groups);
    a.layers.push_back(std::move(l));
  }
  a.trailer = parse_json(get_string(r), "trailer");
  if (r.remaining() != 0) throw FormatError("trailing bytes after artifact trailer");
  return a;
}

void QuantizedArtifact::write(const std::string& path) const {
  const std::vector<std::uint8_t> bytes = to_bytes();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      throw FormatError("short write to '" + tmp + "'");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw FormatError("cannot move artifact into '" + path + "'");
  }
}

QuantizedArtifact QuantizedArtifact::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

Model QuantizedArtifact::dequantized_model() const {
  Model m = Model::build(ModelSpec::from_json(config.at("model")));
  if (layers.size() != m.layers().size()) {
    throw FormatError("artifact has " + std::to_string(layers.size()) + " layers, model has " +
                      std::to_string(m.layers().size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name != m.layers()[i].name) {
      throw FormatError("artifact layer " + layers[i].name + " does not match model layer " +
                        m.layers()[i].name);
    }
    m.set_weight(i, decode_stream(unpack(layers[i].weights)));
  }
  return m;
}

QuantizedArtifact build_artifact(const Model& model, const QuantizedModel& quantized,
                                 const nlohmann::json& config, const nlohmann::json& assignment) {
  QuantizedArtifact a;
  a.config = config;
  a.assignment = assignment;
  a.config_digest = json_digest(config);
  a.assignment_digest = json_digest(assignment);
  std::vector<const TunedLayer*> tuned(model.layers().size(), nullptr);
  for (const TunedLayer& t : quantized.layers) tuned.at(t.layer) = &t;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    ArtifactLayer l;
    l.name = model.layers()[i].name;
    TunedLayer t;
    if (tuned[i] != nullptr) {
      t = *tuned[i];
    } else {
      t.layer = i;
      t.name = l.name;
      t.scheme = quantized.schemes.at(i);
      if (!t.scheme.is_identity()) throw ContractError("layer " + l.name + " was never tuned");
    }
    l.scheme = t.scheme;
    l.weights = pack(encode_layer(model.weight(i), t));
    l.v = t.v;
    l.alpha = t.alpha;
    l.beta = t.beta;
    l.init_scale = t.init_scale;
    a.layers.push_back(std::move(l));
  }
  nlohmann::json stages = nlohmann::json::array();
  for (const StageReport& s : quantized.stages) stages.push_back(s.to_json());
  a.trailer = {{"stages", stages}};
  return a;
}

std::vector<VerifyCheck> verify_artifact(const QuantizedArtifact& a) {
  std::vector<VerifyCheck> checks;
  const auto add = [&](std::string name, bool ok, std::string detail = {}) {
    checks.push_back({std::move(name), ok, std::move(detail)});
  };
  add("config digest", json_digest(a.config) == a.config_digest);
  add("assignment digest", json_digest(a.assignment) == a.assignment_digest);

  Model fp = Model::build(ModelSpec::from_json(a.config.at("model")));
  bool layers_ok = a.layers.size() == fp.layers().size();
  for (std::size_t i = 0; layers_ok && i < a.layers.size(); ++i) {
    layers_ok = a.layers[i].name == fp.layers()[i].name;
  }
  add("layer list", layers_ok);
  if (!layers_ok) return checks;

  std::string bad_pack, bad_encode;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const ArtifactLayer& l = a.layers[i];
    try {
      const CodeStream s = unpack(l.weights);
      if (!(pack(s) == l.weights) || !decode_stream(s).all_finite()) bad_pack = l.name;
      if (!(pack(encode_layer(fp.weight(i), as_tuned(l, i))) == l.weights)) bad_encode = l.name;
    } catch (const Error& e) {
      bad_pack = l.name + " (" + e.what() + ")";
    }
  }
  add("pack/unpack round trip", bad_pack.empty(), bad_pack);
  add("re-encode from parameters", bad_encode.empty(), bad_encode);

  try {
    const BitAssignment asg = BitAssignment::from_json(a.assignment);
    std::vector<int> bits;
    std::vector<std::uint64_t> params;
    std::string mismatch;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const int want = asg.bits_for(a.layers[i].name);
      if (want != a.layers[i].scheme.bits) mismatch = a.layers[i].name;
    }
    for (const auto& name : asg.names) {
      bits.push_back(asg.bits_for(name));
      params.push_back(fp.layers()[fp.layer_index(name)].params());
    }
    add("assignment matches layers", mismatch.empty(), mismatch);
    add("bit budget", bits.empty() || budget_feasible(bits, params, asg.target),
        "target " + asg.target.str());
  } catch (const Error& e) {
    add("assignment matches layers", false, e.what());
  }
  return checks;
}

}  // namespace lowbit
