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

#ifndef LOWBIT_CALIB_HPP_
#define LOWBIT_CALIB_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lowbit/model.hpp"

namespace lowbit {

struct CalibSet {
  std::vector<TokenBatch> batches;
  std::string source;  // "synthetic:<language seed>:<seed>" or the file path
  std::size_t n_samples = 0;
  std::size_t seq_len = 0;
};

// Seeded first-order Markov source. The first token follows Zipf(1.1) over
// a seeded permutation of the vocabulary; every later token follows
// Zipf(1.1) over a permutation specific to its predecessor. Toy models are
// pretrained on the language seeded with their own seed.
class SyntheticLanguage {
 public:
  SyntheticLanguage(std::size_t vocab, std::uint64_t seed);

  std::size_t vocab() const { return start_.size(); }
  std::vector<std::vector<int>> sample(std::size_t n_samples, std::size_t seq_len,
                                       std::uint64_t seed) const;
  // Entropy of the next-token law, the same for every predecessor: the
  // loss floor of a perfect model.
  double conditional_entropy() const;

 private:
  int draw(const std::vector<int>& perm, double u) const;

  std::vector<double> cdf_;
  std::vector<int> start_;
  std::vector<std::vector<int>> next_;  // [predecessor] -> permutation
};

// `source` is "synthetic" or a path to a file with one pre-tokenized
// sequence per line (space-separated non-negative integers). Synthetic
// batches are drawn from SyntheticLanguage(vocab, language_seed) with the
// sampling seed `seed`. File sequences are truncated, or right-padded with
// token 0, to seq_len. The last batch may be short.
CalibSet load_calibration(const std::string& source, std::size_t vocab,
                          std::uint64_t language_seed, std::size_t batch_size,
                          std::size_t seq_len, std::size_t n_samples, std::uint64_t seed);

CalibSet synthetic_calibration(std::size_t vocab, std::uint64_t language_seed,
                               std::size_t batch_size, std::size_t seq_len,
                               std::size_t n_samples, std::uint64_t seed);

// Writes sequences in the calibration file format.
void write_calibration_file(const std::string& path, const std::vector<std::vector<int>>& seqs);

}  // namespace lowbit

#endif  // LOWBIT_CALIB_HPP_
