// Copyright 2026 The etapost Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Independent reference implementations shared by the unit tests and the
// acceptance runner.

#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "etapost/geocode.hpp"
#include "etapost/numcore.hpp"
#include "etapost/random.hpp"
#include "support.hpp"

namespace etapost::testing {

inline nc::Matrix<double> random_matrix(SplitMix64& rng, Eigen::Index r, Eigen::Index c,
                                        double scale = 1.0) {
  nc::Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

inline double naive_phi(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }

// V'_i = sum_j phi(Q_i).phi(K_j) V_j / sum_j phi(Q_i).phi(K_j), one token at a
// time with explicit loops.
inline nc::Matrix<double> naive_linear_attention(const nc::Matrix<double>& x,
                                                 const nc::Matrix<double>& wq,
                                                 const nc::Matrix<double>& wk,
                                                 const nc::Matrix<double>& wv) {
  const Eigen::Index L = x.rows(), d = x.cols(), a = wq.cols();
  auto project = [&](const nc::Matrix<double>& w, Eigen::Index i, Eigen::Index k) {
    double s = 0.0;
    for (Eigen::Index t = 0; t < d; ++t) s += x(i, t) * w(t, k);
    return s;
  };
  nc::Matrix<double> out(L, a);
  for (Eigen::Index i = 0; i < L; ++i) {
    std::vector<double> num(static_cast<std::size_t>(a), 0.0);
    double den = 0.0;
    for (Eigen::Index j = 0; j < L; ++j) {
      double sim = 0.0;
      for (Eigen::Index k = 0; k < a; ++k) sim += naive_phi(project(wq, i, k)) * naive_phi(project(wk, j, k));
      den += sim;
      for (Eigen::Index k = 0; k < a; ++k) num[static_cast<std::size_t>(k)] += sim * project(wv, j, k);
    }
    for (Eigen::Index k = 0; k < a; ++k) out(i, k) = num[static_cast<std::size_t>(k)] / den;
  }
  return out;
}

inline nc::Matrix<double> naive_softmax_attention(const nc::Matrix<double>& x,
                                                  const nc::Matrix<double>& wq,
                                                  const nc::Matrix<double>& wk,
                                                  const nc::Matrix<double>& wv) {
  const nc::Matrix<double> q = x * wq, k = x * wk, v = x * wv;
  const Eigen::Index L = x.rows(), a = wq.cols();
  nc::Matrix<double> out = nc::Matrix<double>::Zero(L, a);
  for (Eigen::Index i = 0; i < L; ++i) {
    std::vector<double> logits;
    double mx = -1e300;
    for (Eigen::Index j = 0; j < L; ++j) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < a; ++t) s += q(i, t) * k(j, t);
      logits.push_back(s / std::sqrt(static_cast<double>(a)));
      mx = std::max(mx, logits.back());
    }
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (Eigen::Index j = 0; j < L; ++j) {
      for (Eigen::Index t = 0; t < a; ++t) out(i, t) += logits[static_cast<std::size_t>(j)] / z * v(j, t);
    }
  }
  return out;
}

// Upper 0.999 quantile of chi-square(df) by Wilson-Hilferty; within 0.1% of
// the exact value for df >= 60.
inline double chi2_999(double df) {
  const double z = 3.090232306167813;
  const double c = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - c + z * std::sqrt(c), 3.0);
}

// Distinct precision-9 geohash keys of uniform random points.
inline std::vector<std::string> distinct_keys(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::set<std::string> seen;
  std::vector<std::string> keys;
  while (keys.size() < n) {
    std::string k = geo::encode_geohash(random_point(rng), 9).str();
    if (seen.insert(k).second) keys.push_back(std::move(k));
  }
  return keys;
}

struct MurmurVector {
  std::string key;
  std::uint32_t seed, expected;
};

// Published MurmurHash3_x86_32 test vectors.
inline std::vector<MurmurVector> murmur_reference_vectors() {
  return {{"", 0, 0u},
          {"", 1, 0x514E28B7u},
          {"", 0xffffffffu, 0x81F16F39u},
          {std::string(4, '\0'), 0, 0x2362F9DEu},
          {"aaaa", 0x9747b28c, 0x5A97808Au},
          {"a", 0x9747b28c, 0x7FA09EA6u},
          {"abc", 0, 0xB3DD93FAu},
          {"Hello, world!", 0x9747b28c, 0x24884CBAu},
          {"The quick brown fox jumps over the lazy dog", 0x9747b28c, 0x2FA826CDu}};
}

// The SMHasher self-check: hash prefixes of {0, 1, ..., 255} with seed
// 256 - len, then hash the concatenated digests with seed 0. Expected
// 0xB0F57EE3.
inline std::uint32_t murmur_verification_value() {
  std::vector<std::uint8_t> key(256), hashes(1024);
  for (int i = 0; i < 256; ++i) {
    key[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
    const std::uint32_t h = geo::murmur3_32(
        std::span<const std::uint8_t>(key.data(), static_cast<std::size_t>(i)),
        static_cast<std::uint32_t>(256 - i));
    for (int b = 0; b < 4; ++b) {
      hashes[static_cast<std::size_t>(4 * i + b)] = static_cast<std::uint8_t>(h >> (8 * b));
    }
  }
  return geo::murmur3_32(std::span<const std::uint8_t>(hashes), 0);
}

}  // namespace etapost::testing
