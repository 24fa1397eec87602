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

#include "lowbit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "lowbit/errors.hpp"

namespace lowbit {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " +
                         shape_string(a.shape()));
  }
}

// Elementwise unary op from value and derivative functors.
template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape().record(std::move(y), {a}, [df](const BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    const Tensor& g = ctx.grad_out();
    Tensor& gx = *ctx.input_grad(0);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], ctx.output()[i]);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  Tensor c({m, n});
  kernels::gemm_acc(a.value().values(), false, b.value().values(), false, c.values(), m, k,
                    n);
  return a.tape().record(std::move(c), {a, b}, [m, k, n](const BackwardContext& ctx) {
    const auto g = ctx.grad_out().values();
    if (Tensor* ga = ctx.input_grad(0)) {
      kernels::gemm_acc(g, false, ctx.input(1).values(), true, ga->values(), m, n, k);
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      kernels::gemm_acc(ctx.input(0).values(), true, g, false, gb->values(), k, m, n);
    }
  });
}

Var linear(const Var& x, const Var& w) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[0];
  if (w.shape()[1] != k) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(w.shape()));
  }
  Tensor y({m, n});
  kernels::gemm_acc(x.value().values(), false, w.value().values(), true, y.values(), m, k,
                    n);
  return x.tape().record(std::move(y), {x, w}, [m, k, n](const BackwardContext& ctx) {
    const auto g = ctx.grad_out().values();
    if (Tensor* gx = ctx.input_grad(0)) {
      kernels::gemm_acc(g, false, ctx.input(1).values(), false, gx->values(), m, n, k);
    }
    if (Tensor* gw = ctx.input_grad(1)) {
      kernels::gemm_acc(g, true, ctx.input(0).values(), false, gw->values(), n, m, k);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.tape().record(std::move(y), {a, b}, [](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* gi = ctx.input_grad(k)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape().record(std::move(y), {a, b}, [](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape().record(std::move(y), {a, b}, [](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * ctx.input(1)[i];
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ctx.input(0)[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return a.tape().record(std::move(y), {a, b}, [](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& bv = ctx.input(1);
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / bv[i];
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * ctx.output()[i] / bv[i];
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  const std::size_t n = a.value().cols();
  if (row.value().size() != n) {
    throw DimensionError("add_row: row of " + std::to_string(row.value().size()) +
                         " values for " + std::to_string(n) + " columns");
  }
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += row.value()[i % n];
  return a.tape().record(std::move(y), {a, row}, [n](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gr = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gr)[i % n] += g[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  return unary(
      a,
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
      },
      [](double x, double) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + t) +
               0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clip(const Var& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clip: lo > hi");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var round_ste(const Var& a) {
  return unary(
      a, [](double x) { return std::nearbyint(x); }, [](double, double) { return 1.0; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [](const BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    for (double& v : ctx.input_grad(0)->values()) v += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (a.value().empty()) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

namespace {

Var extremum(const Var& a, bool want_max) {
  const Tensor& x = a.value();
  if (x.empty()) throw DimensionError("reduction over empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (want_max ? x[i] > x[best] : x[i] < x[best]) best = i;
  }
  return a.tape().record(Tensor::scalar(x[best]), {a}, [best](const BackwardContext& ctx) {
    (*ctx.input_grad(0))[best] += ctx.grad_out()[0];
  });
}

Var row_softmax(const Var& a, bool causal) {
  require_matrix(a, "softmax");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (causal && rows != cols) throw DimensionError("causal_softmax expects a square matrix");
  const Tensor& x = a.value();
  Tensor y({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t width = causal ? r + 1 : cols;
    double mx = x.at(r, 0);
    for (std::size_t c = 1; c < width; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      y.at(r, c) = std::exp(x.at(r, c) - mx);
      z += y.at(r, c);
    }
    for (std::size_t c = 0; c < width; ++c) y.at(r, c) /= z;
  }
  return a.tape().record(std::move(y), {a}, [rows, cols](const BackwardContext& ctx) {
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.grad_out();
    Tensor& gx = *ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

}  // namespace

Var max_all(const Var& a) { return extremum(a, true); }
Var min_all(const Var& a) { return extremum(a, false); }

Var softmax(const Var& a) { return row_softmax(a, false); }
Var causal_softmax(const Var& a) { return row_softmax(a, true); }

Var rms_norm(const Var& a, double eps) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ms += x[r * cols + c] * x[r * cols + c];
    inv[r] = 1.0 / std::sqrt(ms / static_cast<double>(cols) + eps);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x[r * cols + c] * inv[r];
  }
  return a.tape().record(
      std::move(y), {a}, [rows, cols, inv = std::move(inv)](const BackwardContext& ctx) {
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.grad_out();
        Tensor& gx = *ctx.input_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
          dot /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            gx[r * cols + c] += (g[r * cols + c] - y[r * cols + c] * dot) * inv[r];
          }
        }
      });
}

Var layer_norm(const Var& a, double eps) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  const double n = static_cast<double>(cols);
  Tensor y(x.shape());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[r * cols + c];
    mu /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = x[r * cols + c] - mu;
      var += d * d;
    }
    inv[r] = 1.0 / std::sqrt(var / n + eps);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = (x[r * cols + c] - mu) * inv[r];
  }
  return a.tape().record(
      std::move(y), {a}, [rows, cols, n, inv = std::move(inv)](const BackwardContext& ctx) {
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.grad_out();
        Tensor& gx = *ctx.input_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
          double gm = 0.0, gy = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            gm += g[r * cols + c];
            gy += g[r * cols + c] * y[r * cols + c];
          }
          gm /= n;
          gy /= n;
          for (std::size_t c = 0; c < cols; ++c) {
            gx[r * cols + c] += (g[r * cols + c] - gm - y[r * cols + c] * gy) * inv[r];
          }
        }
      });
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(y), {a}, [](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = *ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor y({cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y.at(c, r) = a.value().at(r, c);
  }
  return a.tape().record(std::move(y), {a}, [rows, cols](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = *ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += g.at(c, r);
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_rows");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (begin + count > rows || count == 0) throw DimensionError("slice_rows out of range");
  const auto src = a.value().values().subspan(begin * cols, count * cols);
  Tensor y({count, cols}, std::vector<double>(src.begin(), src.end()));
  return a.tape().record(std::move(y), {a}, [begin, cols](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = *ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (begin + count > cols || count == 0) throw DimensionError("slice_cols out of range");
  Tensor y({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) y.at(r, c) = a.value().at(r, begin + c);
  }
  return a.tape().record(std::move(y), {a}, [rows, begin, count](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = *ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) gx.at(r, begin + c) += g.at(r, c);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t cols = parts[0].value().cols();
  std::vector<double> values;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.shape()[1] != cols) throw DimensionError("concat_rows: column count differs");
    offsets.push_back(values.size());
    values.insert(values.end(), p.value().values().begin(), p.value().values().end());
  }
  const std::size_t rows = values.size() / cols;
  return parts[0].tape().record(
      Tensor({rows, cols}, std::move(values)), parts,
      [offsets = std::move(offsets)](const BackwardContext& ctx) {
        const Tensor& g = ctx.grad_out();
        for (std::size_t k = 0; k < offsets.size(); ++k) {
          Tensor* gk = ctx.input_grad(k);
          if (!gk) continue;
          for (std::size_t i = 0; i < gk->size(); ++i) (*gk)[i] += g[offsets[k] + i];
        }
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> offsets;
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.shape()[0] != rows) throw DimensionError("concat_cols: row count differs");
    offsets.push_back(cols);
    cols += p.shape()[1];
  }
  Tensor y({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& p = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) y.at(r, offsets[k] + c) = p.at(r, c);
    }
  }
  return parts[0].tape().record(
      std::move(y), parts, [rows, offsets = std::move(offsets)](const BackwardContext& ctx) {
        const Tensor& g = ctx.grad_out();
        for (std::size_t k = 0; k < offsets.size(); ++k) {
          Tensor* gk = ctx.input_grad(k);
          if (!gk) continue;
          const std::size_t w = gk->cols();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gk->at(r, c) += g.at(r, offsets[k] + c);
          }
        }
      });
}

Var embedding(const Var& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0], dim = table.shape()[1];
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor y({idx.size(), dim});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(idx[i]) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    for (std::size_t c = 0; c < dim; ++c) y.at(i, c) = table.value().at(idx[i], c);
  }
  return table.tape().record(std::move(y), {table},
                             [dim, idx = std::move(idx)](const BackwardContext& ctx) {
                               const Tensor& g = ctx.grad_out();
                               Tensor& gt = *ctx.input_grad(0);
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 for (std::size_t c = 0; c < dim; ++c) {
                                   gt.at(idx[i], c) += g.at(i, c);
                                 }
                               }
                             });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t batch = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(batch) + " rows");
  }
  const Tensor& x = logits.value();
  std::vector<int> tgt(targets.begin(), targets.end());
  Tensor probs({batch, vocab});
  double loss = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(tgt[r]) +
                       " outside [0, " + std::to_string(vocab) + ")");
    }
    double mx = x.at(r, 0);
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs.at(r, c) = std::exp(x.at(r, c) - mx);
      z += probs.at(r, c);
    }
    for (std::size_t c = 0; c < vocab; ++c) probs.at(r, c) /= z;
    loss += (std::log(z) + mx) - x.at(r, tgt[r]);
  }
  loss /= static_cast<double>(batch);
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [batch, vocab, tgt = std::move(tgt), probs = std::move(probs)](const BackwardContext& ctx) {
        const double g = ctx.grad_out()[0] / static_cast<double>(batch);
        Tensor& gx = *ctx.input_grad(0);
        for (std::size_t r = 0; r < batch; ++r) {
          for (std::size_t c = 0; c < vocab; ++c) gx.at(r, c) += g * probs.at(r, c);
          gx.at(r, tgt[r]) -= g;
        }
      });
}

}  // namespace lowbit
