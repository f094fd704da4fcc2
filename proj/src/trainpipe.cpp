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

#include "etapost/trainpipe.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "etapost/errors.hpp"
#include "etapost/random.hpp"

namespace etapost {

DatasetSplit split_sequential(std::span<const TripRecord> rows, double train_frac,
                              double val_frac) {
  if (!(train_frac > 0.0) || !(val_frac >= 0.0) || train_frac + val_frac > 1.0 + 1e-12) {
    throw ConfigError("split fractions must satisfy train > 0, val >= 0, train + val <= 1");
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].request.timestamp < rows[i - 1].request.timestamp) {
      throw ValidationError("dataset is not sorted by timestamp at row " + std::to_string(i));
    }
  }
  const auto n = static_cast<double>(rows.size());
  // The epsilon keeps e.g. 100 * 0.72 from flooring to 71.
  const auto n_train = std::min(rows.size(), static_cast<std::size_t>(std::floor(n * train_frac + 1e-9)));
  const auto n_val =
      std::min(rows.size() - n_train, static_cast<std::size_t>(std::floor(n * val_frac + 1e-9)));
  DatasetSplit s;
  s.train.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_train),
               rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), rows.end());
  return s;
}

void TrainConfig::check() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(peak_lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(floor_fraction > 0.0 && floor_fraction <= 1.0)) {
    throw ConfigError("floor fraction must be in (0, 1]");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  loss.check();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"peak_lr", c.peak_lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"floor_fraction", c.floor_fraction},
       {"delta", c.loss.delta},
       {"omega", c.loss.omega},
       {"seed", c.seed},
       {"init_seed", c.init_seed},
       {"zero_init", c.zero_init},
       {"freeze_embeddings", c.freeze.embeddings},
       {"freeze_attention", c.freeze.attention},
       {"eval_initial_loss", c.eval_initial_loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("peak_lr", c.peak_lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("eps", c.eps);
  get("floor_fraction", c.floor_fraction);
  get("delta", c.loss.delta);
  get("omega", c.loss.omega);
  get("seed", c.seed);
  get("init_seed", c.init_seed);
  get("zero_init", c.zero_init);
  get("freeze_embeddings", c.freeze.embeddings);
  get("freeze_attention", c.freeze.attention);
  get("eval_initial_loss", c.eval_initial_loss);
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double peak, double floor_fraction) {
  const double floor = peak * floor_fraction;
  if (total_steps <= 0) return peak;
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps));
  return floor + 0.5 * (peak - floor) *
                     (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total_steps)));
}

void adam_update(nc::Parameter<double>& p, std::int64_t step, double lr, const TrainConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  auto g = p.grad.array();
  p.m.array() = c.beta1 * p.m.array() + (1.0 - c.beta1) * g;
  p.v.array() = c.beta2 * p.v.array() + (1.0 - c.beta2) * g.square();
  p.value.array() -= lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + c.eps);
  p.grad.setZero();
}

void adam_update_rows(nc::Parameter<double>& p, std::vector<std::uint32_t>& rows,
                      std::int64_t step, double lr, const TrainConfig& c) {
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (const std::uint32_t r : rows) {
    nc::check_row(p.value, r);
    auto g = p.grad.row(r).array();
    auto m = p.m.row(r).array();
    auto v = p.v.row(r).array();
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    p.value.row(r).array() -= lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
    g.setZero();
  }
}

FeaturizedSet featurize_set(std::span<const TripRecord> rows, const FeatureSchema& schema) {
  FeaturizedSet s;
  s.num_tokens = schema.num_tokens();
  s.slots.resize(rows.size() * s.num_tokens);
  s.type_id.resize(rows.size());
  s.re_eta.resize(rows.size());
  s.label.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const TripRecord& r = rows[i];
    if (!r.ata_s) {
      throw ValidationError("row " + std::to_string(i) + " (request " +
                            std::to_string(r.request_id) + ") has no ata_s label");
    }
    s.type_id[i] = featurize_into(
        r.request, schema, std::span<TokenSlot>(s.slots.data() + i * s.num_tokens, s.num_tokens));
    s.re_eta[i] = r.request.re_eta_s;
    s.label[i] = *r.ata_s;
  }
  return s;
}

template <typename Scalar>
std::vector<Prediction> predict_set(const ModelParams<Scalar>& p, const FeatureSchema& schema,
                                    const FeaturizedSet& set) {
  check_compatible(p, schema);
  constexpr std::size_t kChunk = 512;
  const auto L = static_cast<Eigen::Index>(set.num_tokens);
  const Eigen::Index d = p.config.embed_dim;
  std::vector<Prediction> out(set.size());
  Workspace<Scalar> ws;
  nc::Matrix<Scalar> hmat, z1;
  for (std::size_t begin = 0; begin < set.size(); begin += kChunk) {
    const std::size_t end = std::min(set.size(), begin + kChunk);
    const auto rows = static_cast<Eigen::Index>(end - begin);
    hmat.resize(rows, L * d);
    for (std::size_t i = begin; i < end; ++i) {
      embed(p, schema, std::span<const TokenSlot>(set.slots.data() + i * set.num_tokens, set.num_tokens),
            ws.x);
      Eigen::Map<nc::Matrix<Scalar>> h(hmat.row(static_cast<Eigen::Index>(i - begin)).data(), L, d);
      ws.attn = nc::linear_attention(ws.x, p.wq.value, p.wk.value, p.wv.value, &ws.cache);
      h = ws.x;
      h.noalias() += ws.attn * p.wup.value;
    }
    z1.noalias() = hmat * p.w1.value;
    z1.rowwise() += p.b1.value.row(0);
    const nc::Vector<Scalar> dec = z1.cwiseMax(Scalar(0)) * p.w2.value.col(0);
    for (std::size_t i = begin; i < end; ++i) {
      const int type = set.type_id[i];
      if (type < 0 || type >= p.config.num_types) {
        throw IndexError("request type id " + std::to_string(type) + " out of range");
      }
      Prediction& pr = out[i];
      pr.raw_residual_s = static_cast<double>(dec(static_cast<Eigen::Index>(i - begin)) +
                                              p.b2.value(0, 0) + p.calib.value(type, 0));
      pr.residual_s = clamp_residual(pr.raw_residual_s, p.config.residual_clamp);
      pr.eta_s = std::max(0.0, set.re_eta[i] + pr.residual_s);
    }
  }
  return out;
}

template std::vector<Prediction> predict_set(const ModelParams<float>&, const FeatureSchema&,
                                             const FeaturizedSet&);
template std::vector<Prediction> predict_set(const ModelParams<double>&, const FeatureSchema&,
                                             const FeaturizedSet&);

void to_json(nlohmann::json& j, const EpochRecord& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  j = {{"epoch", r.epoch},        {"step", r.step},           {"lr", r.lr},
       {"train_loss", r.train_loss}, {"val_loss", num(r.val_loss)}, {"val_mae", num(r.val_mae)},
       {"seconds", r.seconds}};
}

namespace {

struct SetMetrics {
  double loss = 0.0;
  double mae = 0.0;
};

SetMetrics set_metrics(const ModelParams<double>& p, const FeatureSchema& schema,
                       const FeaturizedSet& set, const LossConfig& loss) {
  if (set.size() == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan};
  }
  const auto preds = predict_set(p, schema, set);
  SetMetrics m;
  for (std::size_t i = 0; i < set.size(); ++i) {
    m.loss += asym_huber(set.label[i], preds[i].eta_s, loss).value;
    m.mae += std::abs(set.label[i] - preds[i].eta_s);
  }
  m.loss /= static_cast<double>(set.size());
  m.mae /= static_cast<double>(set.size());
  return m;
}

bool is_attention(const std::string& name) { return name.rfind("attn.", 0) == 0; }

}  // namespace

TrainResult train(std::span<const TripRecord> train_rows, std::span<const TripRecord> val_rows,
                  const FeatureSchema& schema, const TrainConfig& cfg,
                  const ModelConfig& model_cfg, const TrainHooks& hooks) {
  cfg.check();
  if (train_rows.empty()) throw ValidationError("training slice is empty");
  const ModelConfig mc = config_for(schema, model_cfg);
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  ModelParams<double> p =
      cfg.zero_init ? ModelParams<double>::zeros(mc, schema) : init_params(mc, schema, cfg.init_seed);
  // Frozen groups are held at zero.
  if (cfg.freeze.embeddings) {
    for (auto& t : p.tables) t.value.setZero();
  }
  if (cfg.freeze.attention) {
    p.for_each_dense([](const std::string& n, nc::Parameter<double>& q) {
      if (is_attention(n)) q.value.setZero();
    });
  }
  if (!cfg.freeze.embeddings) {
    for (auto& t : p.tables) t.init_training_state();
  }
  p.for_each_dense([&](const std::string& n, nc::Parameter<double>& q) {
    if (!(cfg.freeze.attention && is_attention(n))) q.init_training_state();
  });

  const FeaturizedSet train_set = featurize_set(train_rows, schema);
  const FeaturizedSet val_set = featurize_set(val_rows, schema);
  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  TrainResult result;
  auto emit = [&](const EpochRecord& rec) {
    result.history.push_back(rec);
    if (hooks.log) *hooks.log << nlohmann::json(rec).dump() << '\n' << std::flush;
    if (hooks.on_epoch) hooks.on_epoch(rec);
  };

  double best_mae = std::numeric_limits<double>::infinity();
  bool have_best = false;
  if (cfg.eval_initial_loss || cfg.epochs == 0) {
    EpochRecord rec;
    rec.lr = cosine_lr(0, total_steps, cfg.peak_lr, cfg.floor_fraction);
    rec.train_loss = set_metrics(p, schema, train_set, cfg.loss).loss;
    const SetMetrics vm = set_metrics(p, schema, val_set, cfg.loss);
    rec.val_loss = vm.loss;
    rec.val_mae = vm.mae;
    rec.seconds = elapsed();
    // The initialization competes in checkpoint selection like any epoch.
    if (val_set.size() > 0 && cfg.epochs > 0) {
      best_mae = vm.mae;
      result.params = p.cast<double>();
      have_best = true;
    }
    emit(rec);
  }
  if (cfg.epochs == 0) {
    result.params = p.cast<double>();
    return result;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(cfg.seed);
  BatchScratch scratch;
  std::vector<TrainExample> batch;
  batch.reserve(bs);
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(n, begin + bs);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train_set.example(order[i]));
      const double lr = cosine_lr(step, total_steps, cfg.peak_lr, cfg.floor_fraction);
      double loss = 0.0;
      try {
        loss = forward_backward(p, schema, batch, cfg.loss, cfg.freeze, scratch);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at step " + std::to_string(step) +
                              " (epoch " + std::to_string(epoch) + "): " + e.what());
      }
      ++step;
      p.for_each_dense([&](const std::string& name, nc::Parameter<double>& q) {
        if (cfg.freeze.attention && is_attention(name)) return;
        adam_update(q, step, lr, cfg);
      });
      if (!cfg.freeze.embeddings) {
        for (std::size_t t = 0; t < p.tables.size(); ++t) {
          adam_update_rows(p.tables[t], scratch.touched[t], step, lr, cfg);
          scratch.touched[t].clear();
        }
      }
      loss_sum += loss * static_cast<double>(end - begin);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.lr = cosine_lr(step, total_steps, cfg.peak_lr, cfg.floor_fraction);
    rec.train_loss = loss_sum / static_cast<double>(n);
    const SetMetrics vm = set_metrics(p, schema, val_set, cfg.loss);
    rec.val_loss = vm.loss;
    rec.val_mae = vm.mae;
    rec.seconds = elapsed();
    if (val_set.size() > 0 && vm.mae < best_mae) {
      best_mae = vm.mae;
      result.params = p.cast<double>();
      result.best_epoch = epoch;
      have_best = true;
    }
    emit(rec);
  }
  if (!have_best) {
    result.params = p.cast<double>();
    result.best_epoch = cfg.epochs;
  }
  result.steps = step;
  return result;
}

RawRequest fixture_request() {
  RawRequest r;
  r.timestamp = 1631545200;  // Monday 15:00 UTC
  r.origin = {37.7749, -122.4194};
  r.dest = {37.8044, -122.2712};
  r.request_type = RequestType::kRidesPickup;
  r.region_id = 5;
  r.realtime_speed = 31.5;
  r.historical_speed = 36.0;
  r.distance_m = 13500.0;
  r.re_eta_s = 1380.0;
  return r;
}

CheckpointInfo save_trained(const std::string& path, const ModelParams<double>& params,
                            const FeatureSchema& schema, Precision precision,
                            const nlohmann::json& extra) {
  const RawRequest req = fixture_request();
  // The recorded output comes from parameters as stored, so a 32-bit
  // checkpoint is judged against its own rounding.
  Prediction pr;
  if (precision == Precision::kF32) {
    pr = predict(req, schema, params.cast<float>().cast<double>());
  } else {
    pr = predict(req, schema, params);
  }
  nlohmann::json m = extra.is_object() ? extra : nlohmann::json::object();
  m["schema"] = schema;
  m["fixture"] = {{"request", request_to_json(req)},
                  {"eta_s", pr.eta_s},
                  {"residual_s", pr.residual_s},
                  {"raw_residual_s", pr.raw_residual_s}};
  return save_checkpoint(path, params, schema, precision, m);
}

FeatureSchema checkpoint_schema(const CheckpointInfo& info) {
  const auto it = info.manifest.find("schema");
  if (it == info.manifest.end()) throw CompatibilityError("checkpoint carries no schema");
  FeatureSchema s = it->get<FeatureSchema>();
  if (s.hash() != info.schema_hash) {
    throw CompatibilityError("embedded schema hash " + s.hash() + " does not match manifest " +
                             info.schema_hash);
  }
  return s;
}

// --- evaluation -----------------------------------------------------------

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw ConfigError("percentile must be in (0, 100]");
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   values.end());
  return values[rank - 1];
}

double relative_improvement(double baseline, double model) {
  if (baseline == 0.0) {
    if (model == 0.0) return 0.0;
    return -std::numeric_limits<double>::infinity();
  }
  return (baseline - model) / baseline;
}

SegmentStats segment_stats(std::span<const double> label, std::span<const double> model,
                           std::span<const double> baseline) {
  if (label.size() != model.size() || label.size() != baseline.size()) {
    throw ShapeError("segment_stats: label/model/baseline lengths differ");
  }
  SegmentStats s;
  s.count = label.size();
  if (s.count == 0) return s;
  std::vector<double> em(s.count), eb(s.count);
  for (std::size_t i = 0; i < s.count; ++i) {
    em[i] = std::abs(label[i] - model[i]);
    eb[i] = std::abs(label[i] - baseline[i]);
  }
  const double inv = 1.0 / static_cast<double>(s.count);
  s.mae = std::accumulate(em.begin(), em.end(), 0.0) * inv;
  s.baseline_mae = std::accumulate(eb.begin(), eb.end(), 0.0) * inv;
  s.p50 = nearest_rank_percentile(em, 50.0);
  s.p95 = nearest_rank_percentile(em, 95.0);
  s.baseline_p50 = nearest_rank_percentile(eb, 50.0);
  s.baseline_p95 = nearest_rank_percentile(eb, 95.0);
  s.mae_improvement = relative_improvement(s.baseline_mae, s.mae);
  s.p50_improvement = relative_improvement(s.baseline_p50, s.p50);
  s.p95_improvement = relative_improvement(s.baseline_p95, s.p95);
  return s;
}

void to_json(nlohmann::json& j, const SegmentStats& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  j = {{"count", s.count},
       {"mae", s.mae},
       {"p50_abs_error", s.p50},
       {"p95_abs_error", s.p95},
       {"baseline_mae", s.baseline_mae},
       {"baseline_p50_abs_error", s.baseline_p50},
       {"baseline_p95_abs_error", s.baseline_p95},
       {"relative_mae_improvement", num(s.mae_improvement)},
       {"relative_p50_improvement", num(s.p50_improvement)},
       {"relative_p95_improvement", num(s.p95_improvement)}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"all", r.all}, {"rides", r.rides}, {"delivery", r.delivery}};
}

EvalReport evaluate_predictions(std::span<const double> label, std::span<const double> model,
                                std::span<const double> baseline,
                                std::span<const RequestType> types) {
  if (label.empty()) throw ValidationError("cannot evaluate an empty test set");
  if (types.size() != label.size()) throw ShapeError("evaluate: types length differs");
  EvalReport r;
  r.all = segment_stats(label, model, baseline);
  std::vector<double> yl[2], ym[2], yb[2];
  for (std::size_t i = 0; i < label.size(); ++i) {
    const int g = is_delivery(types[i]) ? 1 : 0;
    yl[g].push_back(label[i]);
    ym[g].push_back(model[i]);
    yb[g].push_back(baseline[i]);
  }
  r.rides = segment_stats(yl[0], ym[0], yb[0]);
  r.delivery = segment_stats(yl[1], ym[1], yb[1]);
  return r;
}

template <typename Scalar>
EvalReport evaluate(const ModelParams<Scalar>& p, const FeatureSchema& schema,
                    std::span<const TripRecord> test_rows) {
  if (test_rows.empty()) throw ValidationError("cannot evaluate an empty test set");
  const FeaturizedSet set = featurize_set(test_rows, schema);
  const auto preds = predict_set(p, schema, set);
  std::vector<double> model(set.size());
  std::vector<RequestType> types(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    model[i] = preds[i].eta_s;
    types[i] = test_rows[i].request.request_type;
  }
  return evaluate_predictions(set.label, model, set.re_eta, types);
}

template EvalReport evaluate(const ModelParams<float>&, const FeatureSchema&,
                             std::span<const TripRecord>);
template EvalReport evaluate(const ModelParams<double>&, const FeatureSchema&,
                             std::span<const TripRecord>);

// --- embedding export -----------------------------------------------------

void export_embeddings(const ModelParams<float>& p, const std::string& table, std::ostream& out) {
  const auto it = std::find(p.table_names.begin(), p.table_names.end(), table);
  if (it == p.table_names.end()) {
    std::string known;
    for (const auto& n : p.table_names) known += (known.empty() ? "" : ", ") + n;
    throw ValidationError("unknown embedding table '" + table + "' (known: " + known + ")");
  }
  const auto& m = p.tables[static_cast<std::size_t>(it - p.table_names.begin())].value;
  out << "token_id";
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << "\te" << c;
  out << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(m(r, c)));
      out << '\t' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("embedding export write failed");
}

nc::Matrix<float> read_embeddings(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("embedding TSV is empty");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), '\t'));
  std::vector<float> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long id = 0;
    ls >> id;
    if (id != rows) throw ValidationError("embedding TSV row " + std::to_string(rows) + " has id " + std::to_string(id));
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::string tok;
      if (!(ls >> tok)) throw ValidationError("embedding TSV row " + std::to_string(rows) + " is short");
      values.push_back(std::strtof(tok.c_str(), nullptr));
    }
    ++rows;
  }
  nc::Matrix<float> m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

}  // namespace etapost
