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

// Finite-difference checks of every hand-written backward pass.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace etapost {

inline constexpr double kGradCheckTolerance = 1e-5;

struct GradCheckResult {
  std::string op;
  int instances = 0;
  double max_deviation = 0.0;

  bool passed() const { return max_deviation < kGradCheckTolerance; }
};

void to_json(nlohmann::json& j, const GradCheckResult& r);

// Ops: matmul, affine, relu, embedding_gather, linear_attention, huber,
// asym_huber, model (full forward through a small network and the batch
// loss). Each op runs on `instances` random shapes and values.
std::vector<GradCheckResult> run_grad_check_suite(int instances = 10, std::uint64_t seed = 1);

}  // namespace etapost
