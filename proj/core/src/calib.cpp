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

#include "lowbit/calib.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lowbit/errors.hpp"
#include "lowbit/rng.hpp"

namespace lowbit {
namespace {

void check_sizes(std::size_t batch_size, std::size_t seq_len, std::size_t n_samples) {
  if (batch_size == 0) throw ContractError("calibration batch size must be positive");
  if (seq_len < 2) throw ContractError("calibration sequences need at least two tokens");
  if (n_samples == 0) throw ContractError("calibration needs at least one sample");
}

CalibSet batch_up(const std::vector<std::vector<int>>& seqs, std::size_t batch_size,
                  std::size_t seq_len, std::string source) {
  CalibSet set;
  set.source = std::move(source);
  set.n_samples = seqs.size();
  set.seq_len = seq_len;
  for (std::size_t i = 0; i < seqs.size(); i += batch_size) {
    TokenBatch b;
    b.n_seq = std::min(batch_size, seqs.size() - i);
    b.seq_len = seq_len;
    for (std::size_t s = i; s < i + b.n_seq; ++s) {
      b.tokens.insert(b.tokens.end(), seqs[s].begin(), seqs[s].end());
    }
    set.batches.push_back(std::move(b));
  }
  return set;
}

constexpr double kZipfExponent = 1.1;

std::vector<int> shuffled(std::size_t n, Rng& rng) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

}  // namespace

SyntheticLanguage::SyntheticLanguage(std::size_t vocab, std::uint64_t seed) {
  if (vocab == 0) throw ContractError("synthetic language needs a non-empty vocabulary");
  Rng rng(seed ^ 0x5eed5eed5eed5eedULL);
  cdf_.resize(vocab);
  double total = 0.0;
  for (std::size_t k = 0; k < vocab; ++k) {
    total += 1.0 / std::pow(static_cast<double>(k + 1), kZipfExponent);
    cdf_[k] = total;
  }
  for (double& c : cdf_) c /= total;
  start_ = shuffled(vocab, rng);
  next_.reserve(vocab);
  for (std::size_t t = 0; t < vocab; ++t) next_.push_back(shuffled(vocab, rng));
}

int SyntheticLanguage::draw(const std::vector<int>& perm, double u) const {
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return perm[std::min<std::size_t>(it - cdf_.begin(), perm.size() - 1)];
}

std::vector<std::vector<int>> SyntheticLanguage::sample(std::size_t n_samples,
                                                        std::size_t seq_len,
                                                        std::uint64_t seed) const {
  Rng rng(seed ^ 0x7ea7c4e5a3b1d2f0ULL);
  std::vector<std::vector<int>> seqs(n_samples, std::vector<int>(seq_len));
  for (auto& seq : seqs) {
    if (seq_len == 0) continue;
    seq[0] = draw(start_, rng.uniform());
    for (std::size_t i = 1; i < seq_len; ++i) {
      seq[i] = draw(next_[static_cast<std::size_t>(seq[i - 1])], rng.uniform());
    }
  }
  return seqs;
}

double SyntheticLanguage::conditional_entropy() const {
  double h = 0.0;
  double prev = 0.0;
  for (double c : cdf_) {
    const double p = c - prev;
    if (p > 0.0) h -= p * std::log(p);
    prev = c;
  }
  return h;
}

CalibSet synthetic_calibration(std::size_t vocab, std::uint64_t language_seed,
                               std::size_t batch_size, std::size_t seq_len,
                               std::size_t n_samples, std::uint64_t seed) {
  check_sizes(batch_size, seq_len, n_samples);
  const SyntheticLanguage language(vocab, language_seed);
  return batch_up(language.sample(n_samples, seq_len, seed), batch_size, seq_len,
                  "synthetic:" + std::to_string(language_seed) + ":" + std::to_string(seed));
}

CalibSet load_calibration(const std::string& source, std::size_t vocab,
                          std::uint64_t language_seed, std::size_t batch_size,
                          std::size_t seq_len, std::size_t n_samples, std::uint64_t seed) {
  if (source == "synthetic") {
    return synthetic_calibration(vocab, language_seed, batch_size, seq_len, n_samples, seed);
  }
  check_sizes(batch_size, seq_len, n_samples);
  std::ifstream in(source);
  if (!in) throw FormatError("cannot open calibration file '" + source + "'");
  std::vector<std::vector<int>> seqs;
  std::string line;
  std::size_t line_no = 0;
  while (seqs.size() < n_samples && std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<int> seq;
    std::string field;
    while (fields >> field) {
      std::size_t used = 0;
      long long v = -1;
      try {
        v = std::stoll(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size() || v < 0) {
        throw FormatError(source + ":" + std::to_string(line_no) + ": '" + field +
                          "' is not a non-negative integer token");
      }
      if (static_cast<unsigned long long>(v) >= vocab) {
        throw FormatError(source + ":" + std::to_string(line_no) + ": token " + field +
                          " >= vocabulary size " + std::to_string(vocab));
      }
      seq.push_back(static_cast<int>(v));
    }
    if (seq.empty()) continue;
    seq.resize(seq_len, 0);
    seqs.push_back(std::move(seq));
  }
  if (seqs.size() < n_samples) {
    throw FormatError("calibration file '" + source + "' has " + std::to_string(seqs.size()) +
                      " sequences, " + std::to_string(n_samples) + " requested");
  }
  return batch_up(seqs, batch_size, seq_len, source);
}

void write_calibration_file(const std::string& path, const std::vector<std::vector<int>>& seqs) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path + "'");
  for (const auto& seq : seqs) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
    out << '\n';
  }
}

}  // namespace lowbit
