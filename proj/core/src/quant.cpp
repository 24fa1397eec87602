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

#include "lowbit/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "lowbit/errors.hpp"

namespace lowbit {

IntGrid symmetric_grid(int bits) {
  if (bits < 2 || bits > 16) {
    throw ContractError("integer bit width must be in [2, 16], got " + std::to_string(bits));
  }
  return {-(1 << (bits - 1)), (1 << (bits - 1)) - 1};
}

double uniform_scale(std::span<const double> group, int bits, double alpha, double beta) {
  if (group.empty()) throw ContractError("uniform_scale of an empty group");
  symmetric_grid(bits);
  const auto [lo, hi] = std::minmax_element(group.begin(), group.end());
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double s = (*hi * alpha - *lo * beta) / levels;
  return s > kScaleFloor ? s : kScaleFloor;
}

GroupLayout::GroupLayout(const Shape& shape, std::size_t group_size) {
  if (shape.empty()) throw DimensionError("cannot group a scalar");
  cols_ = shape.back();
  rows_ = cols_ ? shape_numel(shape) / cols_ : 0;
  group_size_ = group_size == 0 ? cols_ : std::min(group_size, cols_);
  if (group_size_ == 0) throw DimensionError("cannot group an empty tensor");
  groups_per_row_ = (cols_ + group_size_ - 1) / group_size_;
}

std::size_t GroupLayout::begin(std::size_t group) const {
  return (group / groups_per_row_) * cols_ + col_begin(group);
}

std::size_t GroupLayout::length(std::size_t group) const {
  return std::min(group_size_, cols_ - col_begin(group));
}

UniformQuantParams UniformQuantParams::rtn(int bits, std::size_t group_size) {
  UniformQuantParams p;
  p.bits = bits;
  p.group_size = group_size;
  return p;
}

void UniformQuantParams::validate(const Shape& weight_shape) const {
  symmetric_grid(bits);
  const GroupLayout layout(weight_shape, group_size);
  if (!v.empty()) {
    if (v.shape() != weight_shape) throw DimensionError("v must match the weight shape");
    for (double x : v.values()) {
      if (!(x >= -0.5 && x <= 0.5)) throw ContractError("v outside [-0.5, 0.5]");
    }
  }
  auto check_groups = [&](const Tensor& t, const char* name) {
    if (t.empty()) return;
    if (t.size() != layout.num_groups()) {
      throw DimensionError(std::string(name) + " needs one value per group (" +
                           std::to_string(layout.num_groups()) + ")");
    }
    for (double x : t.values()) {
      if (!(x > 0.0) || !std::isfinite(x)) {
        throw ContractError(std::string(name) + " must be positive and finite");
      }
    }
  };
  check_groups(alpha, "alpha");
  check_groups(beta, "beta");
  check_groups(init_scale, "init_scale");
}

namespace {

double group_value(const Tensor& t, std::size_t g, double fallback) {
  return t.empty() ? fallback : t[g];
}

struct ScaleInfo {
  double s;
  double ds_dalpha;
  double ds_dbeta;
};

ScaleInfo scale_for_group(std::span<const double> group, const UniformQuantParams& p,
                          std::size_t g, double alpha, double beta) {
  if (!p.init_scale.empty()) {
    const double s0 = p.init_scale[g];
    const double s = s0 * alpha;
    if (s <= kScaleFloor) return {kScaleFloor, 0.0, 0.0};
    return {s, s0, 0.0};
  }
  const auto [lo, hi] = std::minmax_element(group.begin(), group.end());
  const double levels = std::ldexp(1.0, p.bits) - 1.0;
  const double s = (*hi * alpha - *lo * beta) / levels;
  if (s <= kScaleFloor) return {kScaleFloor, 0.0, 0.0};
  return {s, *hi / levels, -*lo / levels};
}

}  // namespace

Tensor group_scales(const Tensor& w, const UniformQuantParams& p) {
  p.validate(w.shape());
  const GroupLayout layout(w.shape(), p.group_size);
  Tensor scales(layout.group_shape());
  for (std::size_t g = 0; g < layout.num_groups(); ++g) {
    const auto group = w.values().subspan(layout.begin(g), layout.length(g));
    scales[g] = scale_for_group(group, p, g, group_value(p.alpha, g, 1.0),
                                group_value(p.beta, g, 1.0))
                    .s;
  }
  return scales;
}

IntCodes uniform_quantize(const Tensor& w, const UniformQuantParams& p) {
  const IntGrid grid = symmetric_grid(p.bits);
  const GroupLayout layout(w.shape(), p.group_size);
  IntCodes out{std::vector<int>(w.size()), group_scales(w, p)};
  for (std::size_t g = 0; g < layout.num_groups(); ++g) {
    const double s = out.scales[g];
    const std::size_t b = layout.begin(g);
    for (std::size_t i = b; i < b + layout.length(g); ++i) {
      const double r = std::nearbyint(w[i] / s + group_value(p.v, i, 0.0));
      out.codes[i] = static_cast<int>(std::clamp(r, double(grid.lo), double(grid.hi)));
    }
  }
  return out;
}

Tensor uniform_dequantize(const IntCodes& codes, const Shape& shape, std::size_t group_size) {
  const GroupLayout layout(shape, group_size);
  if (codes.codes.size() != shape_numel(shape) || codes.scales.size() != layout.num_groups()) {
    throw DimensionError("code/scale counts do not match shape " + shape_string(shape));
  }
  Tensor out(shape);
  for (std::size_t g = 0; g < layout.num_groups(); ++g) {
    const std::size_t b = layout.begin(g);
    for (std::size_t i = b; i < b + layout.length(g); ++i) {
      out[i] = codes.scales[g] * codes.codes[i];
    }
  }
  return out;
}

Tensor uniform_qdq(const Tensor& w, const UniformQuantParams& p) {
  return uniform_dequantize(uniform_quantize(w, p), w.shape(), p.group_size);
}

Var uniform_qdq(const Tensor& w, const Var& v, const Var& alpha, const Var& beta,
                const UniformQuantParams& meta) {
  const IntGrid grid = symmetric_grid(meta.bits);
  const GroupLayout layout(w.shape(), meta.group_size);
  if (v.shape() != w.shape()) throw DimensionError("v must match the weight shape");
  if (alpha.value().size() != layout.num_groups() || beta.value().size() != layout.num_groups()) {
    throw DimensionError("alpha/beta need one value per group");
  }
  if (!meta.init_scale.empty() && meta.init_scale.size() != layout.num_groups()) {
    throw DimensionError("init_scale needs one value per group");
  }

  const std::size_t groups = layout.num_groups();
  std::vector<ScaleInfo> info(groups);
  std::vector<signed char> inside(w.size());
  std::vector<int> codes(w.size());
  Tensor out(w.shape());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t b = layout.begin(g), len = layout.length(g);
    info[g] = scale_for_group(w.values().subspan(b, len), meta, g, alpha.value()[g],
                              beta.value()[g]);
    const double s = info[g].s;
    for (std::size_t i = b; i < b + len; ++i) {
      const double r = std::nearbyint(w[i] / s + v.value()[i]);
      inside[i] = (r >= grid.lo && r <= grid.hi) ? 1 : 0;
      codes[i] = static_cast<int>(std::clamp(r, double(grid.lo), double(grid.hi)));
      out[i] = s * codes[i];
    }
  }

  Tensor wc = w;
  return v.tape().record(
      std::move(out), {v, alpha, beta},
      [layout, info = std::move(info), inside = std::move(inside), codes = std::move(codes),
       wc = std::move(wc)](const BackwardContext& ctx) {
        const Tensor& g_out = ctx.grad_out();
        Tensor* gv = ctx.input_grad(0);
        Tensor* ga = ctx.input_grad(1);
        Tensor* gb = ctx.input_grad(2);
        for (std::size_t g = 0; g < layout.num_groups(); ++g) {
          const double s = info[g].s;
          const std::size_t b = layout.begin(g), len = layout.length(g);
          double gs = 0.0;
          for (std::size_t i = b; i < b + len; ++i) {
            if (gv && inside[i]) (*gv)[i] += g_out[i] * s;
            // d(s * q)/ds = q - [inside] * w / s under STE.
            const double q = codes[i];
            gs += g_out[i] * (inside[i] ? q - wc[i] / s : q);
          }
          if (ga) (*ga)[g] += gs * info[g].ds_dalpha;
          if (gb) (*gb)[g] += gs * info[g].ds_dbeta;
        }
      });
}

}  // namespace lowbit
