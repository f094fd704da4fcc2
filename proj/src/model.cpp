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

#include "etapost/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "etapost/errors.hpp"
#include "etapost/random.hpp"

namespace etapost {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

void ModelConfig::check() const {
  if (embed_dim < 1 || attn_dim < 1 || attn_dim > embed_dim) {
    throw ConfigError("model config: need 1 <= attn_dim <= embed_dim");
  }
  if (hidden_size < 1) throw ConfigError("model config: hidden_size must be >= 1");
  if (!(residual_clamp > 0.0)) throw ConfigError("model config: residual clamp must be > 0");
  if (num_types < 1) throw ConfigError("model config: need at least one request type");
  if (num_tokens < 1) throw ConfigError("model config: num_tokens must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"embed_dim", c.embed_dim},   {"attn_dim", c.attn_dim},
       {"hidden_size", c.hidden_size}, {"residual_clamp", c.residual_clamp},
       {"num_types", c.num_types},   {"num_tokens", c.num_tokens}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.embed_dim = j.at("embed_dim").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.residual_clamp = j.at("residual_clamp").get<double>();
  c.num_types = j.at("num_types").get<int>();
  c.num_tokens = j.at("num_tokens").get<int>();
}

ModelConfig config_for(const FeatureSchema& schema, ModelConfig base) {
  base.num_tokens = static_cast<int>(schema.num_tokens());
  base.num_types = static_cast<int>(schema.num_types());
  base.check();
  return base;
}

ParamCensus census(const ModelConfig& cfg, const FeatureSchema& schema) {
  ParamCensus c;
  const auto d = static_cast<std::uint64_t>(cfg.embed_dim);
  const auto a = static_cast<std::uint64_t>(cfg.attn_dim);
  const auto hidden = static_cast<std::uint64_t>(cfg.hidden_size);
  for (const auto& t : schema.tables) c.embedding += std::uint64_t{t.size} * d;
  c.non_embedding = 3 * d * a + a * d;                          // attention
  c.non_embedding += static_cast<std::uint64_t>(cfg.flat_dim()) * hidden + hidden;  // W1, b1
  c.non_embedding += hidden + 1;                                // w2, b2
  c.non_embedding += static_cast<std::uint64_t>(cfg.num_types);  // calibration
  return c;
}

ModelParams<double> init_params(const ModelConfig& cfg, const FeatureSchema& schema,
                                std::uint64_t seed) {
  ModelParams<double> p = ModelParams<double>::zeros(cfg, schema);
  SplitMix64 rng(seed);
  auto fill = [&](nc::Matrix<double>& m, double bound) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  };
  for (auto& t : p.tables) fill(t.value, 0.05);
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  fill(p.wq.value, inv_d);
  fill(p.wk.value, inv_d);
  fill(p.wv.value, inv_d);
  fill(p.wup.value, 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim)));
  fill(p.w1.value, 1.0 / std::sqrt(static_cast<double>(cfg.flat_dim())));
  fill(p.w2.value, 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size)));
  return p;
}

// --- batched forward/backward -------------------------------------------

double forward_backward(ModelParams<double>& p, const FeatureSchema& schema,
                        std::span<const TrainExample> batch, const LossConfig& loss,
                        const FreezeMask& freeze, BatchScratch& s) {
  using nc::Matrix;
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) return 0.0;
  const Eigen::Index L = p.config.num_tokens;
  const Eigen::Index d = p.config.embed_dim;
  const double clamp = p.config.residual_clamp;
  const bool need_dx = !freeze.embeddings || !freeze.attention;

  s.x.resize(static_cast<std::size_t>(B));
  s.attn.resize(static_cast<std::size_t>(B));
  s.cache.resize(static_cast<std::size_t>(B));
  s.touched.resize(p.tables.size());
  s.hmat.resize(B, L * d);

  for (Eigen::Index b = 0; b < B; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const TrainExample& ex = batch[bi];
    embed(p, schema, std::span<const TokenSlot>(ex.slots, static_cast<std::size_t>(L)), s.x[bi]);
    s.attn[bi] = nc::linear_attention(s.x[bi], p.wq.value, p.wk.value, p.wv.value, &s.cache[bi]);
    Eigen::Map<Matrix<double>> h(s.hmat.row(b).data(), L, d);
    h = s.x[bi];
    h.noalias() += s.attn[bi] * p.wup.value;
  }

  s.z1.noalias() = s.hmat * p.w1.value;
  s.z1.rowwise() += p.b1.value.row(0);
  s.a1 = s.z1.cwiseMax(0.0);
  const nc::Vector<double> out = s.a1 * p.w2.value.col(0);

  nc::Vector<double> dout(B);
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const TrainExample& ex = batch[static_cast<std::size_t>(b)];
    const double raw = out(b) + p.b2.value(0, 0) + p.calib.value(ex.type_id, 0);
    const double r = clamp_residual(raw, clamp);
    const double pre = ex.re_eta + r;
    const double y_hat = std::max(0.0, pre);
    const LossValue lv = asym_huber(ex.label, y_hat, loss);
    if (!std::isfinite(lv.value)) {
      throw DivergenceError("non-finite loss in batch row " + std::to_string(b));
    }
    total += lv.value;
    const bool inside = raw > -clamp && raw < clamp;
    dout(b) = (pre > 0.0 && inside) ? lv.grad * inv_b : 0.0;
  }

  // Decoder and calibration.
  p.w2.grad.col(0).noalias() += s.a1.transpose() * dout;
  p.b2.grad(0, 0) += dout.sum();
  for (Eigen::Index b = 0; b < B; ++b) {
    p.calib.grad(batch[static_cast<std::size_t>(b)].type_id, 0) += dout(b);
  }
  s.dz1.noalias() = dout * p.w2.value.col(0).transpose();
  s.dz1 = (s.z1.array() > 0.0).select(s.dz1, 0.0);
  p.w1.grad.noalias() += s.hmat.transpose() * s.dz1;
  p.b1.grad.row(0) += s.dz1.colwise().sum();

  if (!need_dx) return total * inv_b;

  s.dhmat.noalias() = s.dz1 * p.w1.value.transpose();
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const Eigen::Map<const Matrix<double>> dh(s.dhmat.row(b).data(), L, d);
    Matrix<double> dx = dh;
    if (!freeze.attention) p.wup.grad.noalias() += s.attn[bi].transpose() * dh;
    const Matrix<double> dattn = dh * p.wup.value.transpose();
    const auto g = nc::linear_attention_backward(s.x[bi], p.wq.value, p.wk.value, p.wv.value,
                                                 s.cache[bi], dattn);
    if (!freeze.attention) {
      p.wq.grad += g.dwq;
      p.wk.grad += g.dwk;
      p.wv.grad += g.dwv;
    }
    if (freeze.embeddings) continue;
    dx += g.dx;
    const TrainExample& ex = batch[bi];
    for (Eigen::Index t = 0; t < L; ++t) {
      const std::uint32_t table = schema.tokens[static_cast<std::size_t>(t)].table;
      const TokenSlot& slot = ex.slots[t];
      auto& grad = p.tables[table].grad;
      nc::embedding_scatter_add(grad, slot.bin, dx.row(t));
      s.touched[table].push_back(slot.bin);
      if (slot.alt != kNoBin) {
        nc::embedding_scatter_add(grad, slot.alt, dx.row(t));
        s.touched[table].push_back(slot.alt);
      }
    }
  }
  return total * inv_b;
}

double batch_loss(const ModelParams<double>& p, const FeatureSchema& schema,
                  std::span<const TrainExample> batch, const LossConfig& loss) {
  if (batch.empty()) return 0.0;
  Workspace<double> ws;
  double total = 0.0;
  for (const auto& ex : batch) {
    const Prediction pr = predict_tokens(
        p, schema, std::span<const TokenSlot>(ex.slots, schema.num_tokens()), ex.type_id,
        ex.re_eta, ws);
    total += asym_huber(ex.label, pr.eta_s, loss).value;
  }
  return total / static_cast<double>(batch.size());
}

// --- checkpoints --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'T', 'A', 'P', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

std::string hex32(std::uint32_t a, std::uint32_t b) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08x%08x", a, b);
  return buf;
}

// Incremental murmur is not needed; the whole payload is hashed at once.
std::string digest(const std::string& bytes) {
  return hex32(geo::murmur3_32(bytes, geo::kSeed1), geo::murmur3_32(bytes, geo::kSeed2));
}

std::string_view precision_name(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw CompatibilityError("unknown checkpoint precision '" + s + "'");
}

struct RawCheckpoint {
  nlohmann::json manifest;
  std::string data;
};

RawCheckpoint read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CompatibilityError("'" + path + "' is not a checkpoint (bad magic)");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1ull << 30)) {
    throw CompatibilityError("'" + path + "': corrupt manifest length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw CompatibilityError("'" + path + "': truncated manifest");
  }
  RawCheckpoint raw;
  try {
    raw.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError("'" + path + "': manifest is not valid JSON: " + e.what());
  }
  raw.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return raw;
}

CheckpointInfo info_from(const nlohmann::json& m) {
  CheckpointInfo info;
  info.manifest = m;
  try {
    if (m.at("format_version").get<int>() != kFormatVersion) {
      throw CompatibilityError("unsupported checkpoint format version");
    }
    info.model_version = m.at("model_version").get<std::string>();
    info.schema_hash = m.at("schema_hash").get<std::string>();
    info.precision = parse_precision(m.at("precision").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("checkpoint manifest missing fields: ") + e.what());
  }
  return info;
}

}  // namespace

CheckpointInfo save_checkpoint(const std::string& path, const ModelParams<double>& params,
                               const FeatureSchema& schema, Precision precision,
                               const nlohmann::json& extra) {
  check_compatible(params, schema);
  const std::size_t width = precision == Precision::kF32 ? 4 : 8;
  std::string data;
  nlohmann::json index = nlohmann::json::array();
  params.for_each([&](const std::string& name, const nc::Parameter<double>& p) {
    const std::size_t offset = data.size();
    const auto n = static_cast<std::size_t>(p.value.size());
    data.resize(offset + n * width);
    char* dst = data.data() + offset;
    if (precision == Precision::kF32) {
      for (std::size_t i = 0; i < n; ++i) {
        const float f = static_cast<float>(p.value.data()[i]);
        std::memcpy(dst + 4 * i, &f, 4);
      }
    } else {
      std::memcpy(dst, p.value.data(), n * 8);
    }
    index.push_back({{"name", name},
                     {"shape", {p.value.rows(), p.value.cols()}},
                     {"offset", offset},
                     {"count", n}});
  });

  const std::string data_hash = digest(data);
  nlohmann::json m = extra.is_object() ? extra : nlohmann::json::object();
  m["format"] = "etapost-checkpoint";
  m["format_version"] = kFormatVersion;
  m["precision"] = precision_name(precision);
  m["config"] = params.config;
  m["schema_hash"] = schema.hash();
  m["data_hash"] = data_hash;
  m["data_bytes"] = data.size();
  m["model_version"] = "etapost-" + data_hash;
  m["params"] = index;

  const std::string text = m.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  const std::uint64_t len = text.size();
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
  return info_from(m);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  return info_from(read_raw(path).manifest);
}

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::string& path, const FeatureSchema* schema) {
  RawCheckpoint raw = read_raw(path);
  LoadedCheckpoint<Scalar> out;
  out.info = info_from(raw.manifest);
  const auto& m = raw.manifest;
  if (m.value("data_bytes", std::size_t{0}) != raw.data.size() ||
      m.value("data_hash", std::string{}) != digest(raw.data)) {
    throw CompatibilityError("'" + path + "': parameter data does not match manifest checksum");
  }
  if (schema && out.info.schema_hash != schema->hash()) {
    throw CompatibilityError("'" + path + "': schema hash " + out.info.schema_hash +
                             " does not match schema " + schema->hash());
  }
  ModelConfig cfg;
  try {
    cfg = m.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("checkpoint config unreadable: ") + e.what());
  }
  cfg.check();

  // Expected layout: from the schema when given, otherwise from the index.
  ModelParams<Scalar>& p = out.params;
  if (schema) {
    p = ModelParams<Scalar>::zeros(cfg, *schema);
  } else {
    p.config = cfg;
    for (const auto& e : m.at("params")) {
      const std::string name = e.at("name").get<std::string>();
      if (name.rfind("emb.", 0) == 0) {
        p.table_names.push_back(name.substr(4));
        p.tables.emplace_back(e.at("shape")[0].get<Eigen::Index>(), cfg.embed_dim);
      }
    }
    ModelParams<Scalar> dense = ModelParams<Scalar>::zeros(cfg, FeatureSchema{});
    p.wq = dense.wq;
    p.wk = dense.wk;
    p.wv = dense.wv;
    p.wup = dense.wup;
    p.w1 = dense.w1;
    p.b1 = dense.b1;
    p.w2 = dense.w2;
    p.b2 = dense.b2;
    p.calib = dense.calib;
  }

  const std::size_t width = out.info.precision == Precision::kF32 ? 4 : 8;
  const auto& index = m.at("params");
  std::size_t k = 0;
  p.for_each([&](const std::string& name, nc::Parameter<Scalar>& q) {
    if (k >= index.size()) throw CompatibilityError("checkpoint is missing parameter " + name);
    const auto& e = index[k++];
    const auto rows = e.at("shape")[0].get<Eigen::Index>();
    const auto cols = e.at("shape")[1].get<Eigen::Index>();
    if (e.at("name").get<std::string>() != name || rows != q.rows() || cols != q.cols()) {
      throw CompatibilityError("checkpoint parameter " + e.at("name").get<std::string>() + " " +
                               nc::shape_str(rows, cols) + " does not match expected " + name +
                               " " + nc::shape_str(q.rows(), q.cols()));
    }
    const auto offset = e.at("offset").get<std::size_t>();
    const auto n = static_cast<std::size_t>(q.size());
    if (offset + n * width > raw.data.size()) {
      throw CompatibilityError("checkpoint parameter " + name + " runs past end of data");
    }
    const char* src = raw.data.data() + offset;
    for (std::size_t i = 0; i < n; ++i) {
      if (width == 4) {
        float f;
        std::memcpy(&f, src + 4 * i, 4);
        q.value.data()[i] = static_cast<Scalar>(f);
      } else {
        double v;
        std::memcpy(&v, src + 8 * i, 8);
        q.value.data()[i] = static_cast<Scalar>(v);
      }
    }
  });
  if (k != index.size()) throw CompatibilityError("checkpoint has unexpected extra parameters");
  return out;
}

template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&, const FeatureSchema*);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&,
                                                          const FeatureSchema*);

}  // namespace etapost
