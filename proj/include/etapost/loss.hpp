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

#pragma once

#include <cmath>

#include "etapost/errors.hpp"

namespace etapost {

// Weight `omega` applies to overprediction (y < y_hat), 1 - omega to
// underprediction. Penalizing late arrivals (underprediction) more therefore
// means omega < 0.5.
struct LossConfig {
  double delta = 60.0;
  double omega = 0.5;

  void check() const {
    if (!(delta > 0.0)) throw ConfigError("loss delta must be > 0");
    if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("loss omega must be in [0, 1]");
  }
};

struct LossValue {
  double value = 0.0;
  double grad = 0.0;  // d loss / d y_hat
};

inline LossValue huber(double y, double y_hat, double delta) {
  const double e = y - y_hat;
  const double a = std::abs(e);
  if (a <= delta) {
    // At |e| == delta both branches agree in value and slope.
    return {0.5 * e * e, -e};
  }
  return {delta * a - 0.5 * delta * delta, e > 0.0 ? -delta : delta};
}

inline LossValue asym_huber(double y, double y_hat, const LossConfig& cfg) {
  LossValue h = huber(y, y_hat, cfg.delta);
  const double w = y < y_hat ? cfg.omega : 1.0 - cfg.omega;
  return {w * h.value, w * h.grad};
}

}  // namespace etapost
