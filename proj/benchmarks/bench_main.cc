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

#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "lowbit/allocator.hpp"
#include "lowbit/mx.hpp"
#include "lowbit/packing.hpp"
#include "lowbit/quant.hpp"
#include "lowbit/rng.hpp"
#include "lowbit/tensor.hpp"

namespace {

using namespace lowbit;

Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({rows, cols});
  for (double& x : t.values()) x = rng.normal();
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  Tensor c({n, n});
  for (auto _ : state) {
    kernels::gemm_acc(a.values(), false, b.values(), true, c.values(), n, n, n);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_UniformQdq(benchmark::State& state) {
  const Tensor w = random_tensor(256, 256, 3);
  const UniformQuantParams p = UniformQuantParams::rtn(static_cast<int>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(uniform_qdq(w, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_UniformQdq)->Arg(2)->Arg(4)->Arg(8);

void BM_MxQdq(benchmark::State& state) {
  const Tensor w = random_tensor(256, 256, 4);
  const MxBlockFormat fmt{state.range(0) == 4 ? MxElement::kE2M1 : MxElement::kE4M3, 32};
  for (auto _ : state) benchmark::DoNotOptimize(mx_qdq(w, fmt));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_MxQdq)->Arg(4)->Arg(8);

void BM_PackBits(benchmark::State& state) {
  const int bits = static_cast<int>(state.range(0));
  Rng rng(5);
  std::vector<std::int32_t> codes(1 << 16);
  for (auto& c : codes) {
    c = static_cast<std::int32_t>(rng.below(std::uint64_t{1} << bits)) - (1 << (bits - 1));
  }
  for (auto _ : state) {
    const auto bytes = pack_bits(codes, bits, true);
    benchmark::DoNotOptimize(unpack_bits(bytes, codes.size(), bits, true));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(codes.size()));
}
BENCHMARK(BM_PackBits)->Arg(2)->Arg(4)->Arg(8);

void BM_AllocateDp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  AllocationProblem p;
  p.options = {2, 4, 8};
  p.target = Rational::of(5, 2);
  for (std::size_t i = 0; i < n; ++i) {
    p.names.push_back("layer" + std::to_string(i));
    p.params.push_back(1024 * (1 + rng.below(8)));
    const double c = rng.uniform(0.1, 10.0);
    p.costs.push_back({c, c / 4, c / 64});
  }
  for (auto _ : state) benchmark::DoNotOptimize(allocate_dp(p));
}
BENCHMARK(BM_AllocateDp)->Arg(16)->Arg(64)->Arg(224);

}  // namespace

// The packaged benchmark_main archive is LTO bytecode from another compiler
// release, so the entry point is defined here.
BENCHMARK_MAIN();
