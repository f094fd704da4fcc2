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

// Offline training and evaluation.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "etapost/featurize.hpp"
#include "etapost/loss.hpp"
#include "etapost/model.hpp"

namespace etapost {

struct DatasetSplit {
  std::vector<TripRecord> train, val, test;
};

// Contiguous slices of a timestamp-sorted dataset: the first
// floor(n * train_frac) rows train, the next floor(n * val_frac) validate,
// the remainder tests.
DatasetSplit split_sequential(std::span<const TripRecord> rows, double train_frac,
                              double val_frac);

struct TrainConfig {
  int batch_size = 256;
  int epochs = 10;
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double floor_fraction = 0.01;
  LossConfig loss;
  std::uint64_t seed = 42;       // shuffling
  std::uint64_t init_seed = 7;   // parameter initialization
  bool zero_init = false;        // start from all-zero parameters
  FreezeMask freeze;
  bool eval_initial_loss = true;  // full pass over the training slice before epoch 1

  void check() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// eta_t = floor + (peak - floor) * (1 + cos(pi * t / T)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double peak, double floor_fraction);

// One Adam update of a whole parameter from its gradient, which is then
// zeroed; `step` is 1-based.
void adam_update(nc::Parameter<double>& p, std::int64_t step, double lr, const TrainConfig& c);

// Lazy variant for embedding tables: only the listed rows (duplicates
// allowed, the list is sorted in place) are updated and zeroed. Moments of
// untouched rows are left as they are.
void adam_update_rows(nc::Parameter<double>& p, std::vector<std::uint32_t>& rows,
                      std::int64_t step, double lr, const TrainConfig& c);

// Rows of a training slice resolved to token bins once.
struct FeaturizedSet {
  std::size_t num_tokens = 0;
  std::vector<TokenSlot> slots;  // row-major [n x num_tokens]
  std::vector<int> type_id;
  std::vector<double> re_eta;
  std::vector<double> label;

  std::size_t size() const { return type_id.size(); }
  TrainExample example(std::size_t i) const {
    return {slots.data() + i * num_tokens, type_id[i], re_eta[i], label[i]};
  }
};

// Labels are required.
FeaturizedSet featurize_set(std::span<const TripRecord> rows, const FeatureSchema& schema);

// Batched forward pass for evaluation.
template <typename Scalar>
std::vector<Prediction> predict_set(const ModelParams<Scalar>& p, const FeatureSchema& schema,
                                    const FeaturizedSet& set);

struct EpochRecord {
  int epoch = 0;  // 0 is the initialization
  std::int64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation slice
  double val_mae = 0.0;
  double seconds = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainResult {
  ModelParams<double> params;  // best validation MAE, or the final epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::int64_t steps = 0;
};

struct TrainHooks {
  std::ostream* log = nullptr;  // one JSON line per epoch
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainResult train(std::span<const TripRecord> train_rows, std::span<const TripRecord> val_rows,
                  const FeatureSchema& schema, const TrainConfig& cfg,
                  const ModelConfig& model_cfg = {}, const TrainHooks& hooks = {});

// The built-in request every checkpoint records an expected output for.
RawRequest fixture_request();

// Saves a checkpoint whose manifest also carries the schema and the fixture
// output (from the 64-bit path).
CheckpointInfo save_trained(const std::string& path, const ModelParams<double>& params,
                            const FeatureSchema& schema, Precision precision = Precision::kF32,
                            const nlohmann::json& extra = nlohmann::json::object());

// The schema stored by save_trained, checked against the manifest hash.
FeatureSchema checkpoint_schema(const CheckpointInfo& info);

// --- evaluation -----------------------------------------------------------

// Nearest-rank percentile of an unsorted sample, p in (0, 100].
double nearest_rank_percentile(std::vector<double> values, double p);

// (baseline - model) / baseline; 0 when both are 0.
double relative_improvement(double baseline, double model);

struct SegmentStats {
  std::size_t count = 0;
  double mae = 0.0, p50 = 0.0, p95 = 0.0;
  double baseline_mae = 0.0, baseline_p50 = 0.0, baseline_p95 = 0.0;
  double mae_improvement = 0.0, p50_improvement = 0.0, p95_improvement = 0.0;
};

struct EvalReport {
  SegmentStats all, rides, delivery;
};

void to_json(nlohmann::json& j, const SegmentStats& s);
void to_json(nlohmann::json& j, const EvalReport& r);

SegmentStats segment_stats(std::span<const double> label, std::span<const double> model,
                           std::span<const double> baseline);

// Segments by request-type group. Throws ValidationError on empty input.
EvalReport evaluate_predictions(std::span<const double> label, std::span<const double> model,
                                std::span<const double> baseline,
                                std::span<const RequestType> types);

template <typename Scalar>
EvalReport evaluate(const ModelParams<Scalar>& p, const FeatureSchema& schema,
                    std::span<const TripRecord> test_rows);

// --- embedding export -----------------------------------------------------

// Header "token_id\te0\t...\te{d-1}", then one row per table entry with
// 9 significant digits, which round-trips 32-bit floats exactly.
void export_embeddings(const ModelParams<float>& p, const std::string& table, std::ostream& out);
nc::Matrix<float> read_embeddings(std::istream& in);

}  // namespace etapost
