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

// The residual ETA network.
//
//   tokens -> embeddings X [L x d]
//          -> H = X + linear_attention(X) W_up          (interaction)
//          -> r = w2 . relu(flatten(H) W1 + b1) + b2 + calib[type]
//          -> r clamped to [-c, c]
//          -> eta = max(0, re_eta + r)
//
// Geohash tokens sum the embeddings at their two hash bins. The forward path
// is templated on the scalar so the same code serves 64-bit training and
// 32-bit inference.

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "etapost/featurize.hpp"
#include "etapost/loss.hpp"
#include "etapost/numcore.hpp"

namespace etapost {

struct ModelConfig {
  int embed_dim = 8;
  int attn_dim = 4;
  int hidden_size = 2048;
  double residual_clamp = 1800.0;
  int num_types = kNumRequestTypes;
  int num_tokens = 0;

  int flat_dim() const { return num_tokens * embed_dim; }
  void check() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Config sized for a schema; everything else at defaults.
ModelConfig config_for(const FeatureSchema& schema, ModelConfig base = {});

template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> table_names;
  std::vector<nc::Parameter<Scalar>> tables;  // [rows x d] per schema table
  nc::Parameter<Scalar> wq, wk, wv;           // [d x a]
  nc::Parameter<Scalar> wup;                  // [a x d]
  nc::Parameter<Scalar> w1;                   // [L*d x hidden]
  nc::Parameter<Scalar> b1;                   // [1 x hidden]
  nc::Parameter<Scalar> w2;                   // [hidden x 1]
  nc::Parameter<Scalar> b2;                   // [1 x 1]
  nc::Parameter<Scalar> calib;                // [J x 1], the per-type biases

  static ModelParams zeros(const ModelConfig& cfg, const FeatureSchema& schema) {
    cfg.check();
    ModelParams p;
    p.config = cfg;
    const int d = cfg.embed_dim, a = cfg.attn_dim;
    for (const auto& t : schema.tables) {
      p.table_names.push_back(t.name);
      p.tables.emplace_back(static_cast<Eigen::Index>(t.size), d);
    }
    p.wq = {d, a};
    p.wk = {d, a};
    p.wv = {d, a};
    p.wup = {a, d};
    p.w1 = {cfg.flat_dim(), cfg.hidden_size};
    p.b1 = {1, cfg.hidden_size};
    p.w2 = {cfg.hidden_size, 1};
    p.b2 = {1, 1};
    p.calib = {cfg.num_types, 1};
    return p;
  }

  // Visits every parameter in checkpoint order: embedding tables first as
  // "emb.<table>", then the dense layers.
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t i = 0; i < tables.size(); ++i) f("emb." + table_names[i], tables[i]);
    for_each_dense(f);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t i = 0; i < tables.size(); ++i) f("emb." + table_names[i], tables[i]);
    for_each_dense(f);
  }

  template <typename F>
  void for_each_dense(F&& f) {
    f(std::string("attn.wq"), wq);
    f(std::string("attn.wk"), wk);
    f(std::string("attn.wv"), wv);
    f(std::string("attn.wup"), wup);
    f(std::string("dec.w1"), w1);
    f(std::string("dec.b1"), b1);
    f(std::string("dec.w2"), w2);
    f(std::string("dec.b2"), b2);
    f(std::string("calib.bias"), calib);
  }
  template <typename F>
  void for_each_dense(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_dense(
        [&](const std::string& n, nc::Parameter<Scalar>& p) { f(n, std::as_const(p)); });
  }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    out.config = config;
    out.table_names = table_names;
    out.tables.reserve(tables.size());
    for (const auto& t : tables) {
      nc::Parameter<T> p;
      p.value = t.value.template cast<T>();
      out.tables.push_back(std::move(p));
    }
    auto cp = [](const nc::Parameter<Scalar>& src) {
      nc::Parameter<T> p;
      p.value = src.value.template cast<T>();
      return p;
    };
    out.wq = cp(wq);
    out.wk = cp(wk);
    out.wv = cp(wv);
    out.wup = cp(wup);
    out.w1 = cp(w1);
    out.b1 = cp(b1);
    out.w2 = cp(w2);
    out.b2 = cp(b2);
    out.calib = cp(calib);
    return out;
  }
};

struct ParamCensus {
  std::uint64_t embedding = 0;
  std::uint64_t non_embedding = 0;

  std::uint64_t total() const { return embedding + non_embedding; }
  double embedding_fraction() const {
    return total() ? static_cast<double>(embedding) / static_cast<double>(total()) : 0.0;
  }
};

// Counted from the schema and config alone (nothing is allocated).
ParamCensus census(const ModelConfig& cfg, const FeatureSchema& schema);

template <typename Scalar>
ParamCensus census(const ModelParams<Scalar>& p) {
  ParamCensus c;
  for (const auto& t : p.tables) c.embedding += static_cast<std::uint64_t>(t.size());
  p.for_each_dense([&](const std::string&, const nc::Parameter<Scalar>& q) {
    c.non_embedding += static_cast<std::uint64_t>(q.size());
  });
  return c;
}

// Embeddings ~ U(-0.05, 0.05); weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
// biases and calibration start at zero.
ModelParams<double> init_params(const ModelConfig& cfg, const FeatureSchema& schema,
                                std::uint64_t seed);

// Throws CompatibilityError unless table count, order and sizes match the
// schema.
template <typename Scalar>
void check_compatible(const ModelParams<Scalar>& p, const FeatureSchema& schema) {
  if (p.config.num_tokens != static_cast<int>(schema.num_tokens()) ||
      p.tables.size() != schema.tables.size() ||
      p.config.num_types != static_cast<int>(schema.num_types())) {
    throw CompatibilityError("model layout does not match schema (tokens " +
                             std::to_string(p.config.num_tokens) + " vs " +
                             std::to_string(schema.num_tokens()) + ")");
  }
  for (std::size_t i = 0; i < schema.tables.size(); ++i) {
    if (p.table_names[i] != schema.tables[i].name ||
        p.tables[i].rows() != static_cast<Eigen::Index>(schema.tables[i].size) ||
        p.tables[i].cols() != p.config.embed_dim) {
      throw CompatibilityError("embedding table '" + p.table_names[i] +
                               "' does not match schema table '" + schema.tables[i].name + "'");
    }
  }
}

// --- forward ------------------------------------------------------------

template <typename Scalar>
struct Workspace {
  nc::Matrix<Scalar> x;     // [L x d]
  nc::Matrix<Scalar> attn;  // [L x a]
  nc::Matrix<Scalar> h;     // [L x d]
  nc::LinearAttentionCache<Scalar> cache;
  nc::RowVector<Scalar> z1;  // [1 x hidden]
};

template <typename Scalar>
void embed(const ModelParams<Scalar>& p, const FeatureSchema& schema,
           std::span<const TokenSlot> slots, nc::Matrix<Scalar>& x) {
  const auto L = static_cast<Eigen::Index>(schema.num_tokens());
  if (static_cast<Eigen::Index>(slots.size()) != L) {
    throw ShapeError("embed: got " + std::to_string(slots.size()) + " tokens, layout has " +
                     std::to_string(L));
  }
  x.resize(L, p.config.embed_dim);
  for (Eigen::Index t = 0; t < L; ++t) {
    const auto& table = p.tables[schema.tokens[static_cast<std::size_t>(t)].table].value;
    const TokenSlot& s = slots[static_cast<std::size_t>(t)];
    nc::check_row(table, s.bin);
    x.row(t) = table.row(s.bin);
    if (s.alt != kNoBin) {
      nc::check_row(table, s.alt);
      x.row(t) += table.row(s.alt);
    }
  }
}

template <typename Scalar>
nc::Matrix<Scalar> embed(const ModelParams<Scalar>& p, const FeatureSchema& schema,
                         const TokenIndexes& tokens) {
  nc::Matrix<Scalar> x;
  embed(p, schema, std::span<const TokenSlot>(tokens.slots), x);
  return x;
}

// H = X + linear_attention(X) W_up. No positional terms, so permuting the
// rows of X permutes the rows of H.
template <typename Scalar>
void interaction(const ModelParams<Scalar>& p, const nc::Matrix<Scalar>& x, Workspace<Scalar>& ws,
                 nc::Matrix<Scalar>& h) {
  ws.attn = nc::linear_attention(x, p.wq.value, p.wk.value, p.wv.value, &ws.cache);
  h = x;
  h.noalias() += ws.attn * p.wup.value;
}

template <typename Scalar>
nc::Matrix<Scalar> interaction(const ModelParams<Scalar>& p, const nc::Matrix<Scalar>& x) {
  Workspace<Scalar> ws;
  nc::Matrix<Scalar> h;
  interaction(p, x, ws, h);
  return h;
}

// Pre-clamp residual in seconds.
template <typename Scalar>
Scalar decode_raw(const ModelParams<Scalar>& p, const nc::Matrix<Scalar>& h, int type_id,
                  Workspace<Scalar>& ws) {
  if (type_id < 0 || type_id >= p.config.num_types) {
    throw IndexError("request type id " + std::to_string(type_id) + " out of range [0, " +
                     std::to_string(p.config.num_types) + ")");
  }
  if (h.size() != p.w1.rows()) {
    throw ShapeError("decode: flattened input " + std::to_string(h.size()) + " vs W1 rows " +
                     std::to_string(p.w1.rows()));
  }
  const Eigen::Map<const nc::RowVector<Scalar>> flat(h.data(), h.size());
  ws.z1.noalias() = flat * p.w1.value;
  ws.z1 += p.b1.value.row(0);
  const Scalar out = ws.z1.cwiseMax(Scalar(0)).dot(p.w2.value.col(0));
  return out + p.b2.value(0, 0) + p.calib.value(type_id, 0);
}

inline double clamp_residual(double raw, double c) { return std::clamp(raw, -c, c); }

struct Prediction {
  double eta_s = 0.0;
  double residual_s = 0.0;      // after clamping
  double raw_residual_s = 0.0;  // before clamping
};

template <typename Scalar>
Prediction predict_tokens(const ModelParams<Scalar>& p, const FeatureSchema& schema,
                          std::span<const TokenSlot> slots, int type_id, double re_eta,
                          Workspace<Scalar>& ws) {
  embed(p, schema, slots, ws.x);
  interaction(p, ws.x, ws, ws.h);
  Prediction out;
  out.raw_residual_s = static_cast<double>(decode_raw(p, ws.h, type_id, ws));
  out.residual_s = clamp_residual(out.raw_residual_s, p.config.residual_clamp);
  out.eta_s = std::max(0.0, re_eta + out.residual_s);
  return out;
}

template <typename Scalar>
Prediction predict(const RawRequest& raw, const FeatureSchema& schema,
                   const ModelParams<Scalar>& p) {
  check_compatible(p, schema);
  const TokenIndexes ti = featurize(raw, schema);
  Workspace<Scalar> ws;
  return predict_tokens(p, schema, std::span<const TokenSlot>(ti.slots), ti.type_id, ti.re_eta,
                        ws);
}

// --- training support -----------------------------------------------------

struct TrainExample {
  const TokenSlot* slots = nullptr;  // num_tokens entries
  int type_id = 0;
  double re_eta = 0.0;
  double label = 0.0;
};

struct FreezeMask {
  bool embeddings = false;
  bool attention = false;  // wq, wk, wv, wup
};

// Reusable buffers for one batch; `touched[t]` lists embedding rows of table
// t that received gradient (may contain duplicates).
struct BatchScratch {
  std::vector<nc::Matrix<double>> x, attn;
  std::vector<nc::LinearAttentionCache<double>> cache;
  nc::Matrix<double> hmat, z1, a1, dz1, dhmat;
  std::vector<std::vector<std::uint32_t>> touched;
};

// Forward and backward over a batch with the mean asymmetric Huber loss.
// Accumulates into the `grad` of every non-frozen parameter (call
// `init_training_state` first) and returns the mean loss.
double forward_backward(ModelParams<double>& p, const FeatureSchema& schema,
                        std::span<const TrainExample> batch, const LossConfig& loss,
                        const FreezeMask& freeze, BatchScratch& scratch);

// Mean loss through the single-request forward path.
double batch_loss(const ModelParams<double>& p, const FeatureSchema& schema,
                  std::span<const TrainExample> batch, const LossConfig& loss);

// --- checkpoints --------------------------------------------------------

enum class Precision { kF32, kF64 };

struct CheckpointInfo {
  nlohmann::json manifest;
  std::string model_version;
  std::string schema_hash;
  Precision precision = Precision::kF32;
};

// Layout: 8-byte magic "ETAPCKPT", little-endian u64 manifest length, the
// JSON manifest, then the parameter arrays (little-endian, row-major) in
// manifest order. `extra` keys are merged into the manifest.
CheckpointInfo save_checkpoint(const std::string& path, const ModelParams<double>& params,
                               const FeatureSchema& schema, Precision precision,
                               const nlohmann::json& extra = nlohmann::json::object());

template <typename Scalar>
struct LoadedCheckpoint {
  CheckpointInfo info;
  ModelParams<Scalar> params;
};

// Verifies magic, data checksum, and (when a schema is given) the schema
// hash and every parameter shape. Throws CompatibilityError on mismatch.
template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::string& path,
                                         const FeatureSchema* schema = nullptr);

CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace etapost
