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

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "etapost/errors.hpp"
#include "etapost/model.hpp"
#include "etapost/random.hpp"
#include "etapost/trainpipe.hpp"
#include "support.hpp"

namespace etapost {
namespace {

using M = nc::Matrix<double>;
using testing::fixture_schema;
using testing::random_request;
using testing::small_model;
using testing::TempDir;
using ::testing::HasSubstr;

void fill_random(M& m, SplitMix64& rng, double scale) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
}

// Every parameter U(-scale, scale), so the residual is far from zero.
ModelParams<double> random_params(const ModelConfig& mc, const FeatureSchema& s, std::uint64_t seed,
                                  double scale) {
  ModelParams<double> p = ModelParams<double>::zeros(mc, s);
  SplitMix64 rng(seed);
  p.for_each([&](const std::string&, nc::Parameter<double>& q) { fill_random(q.value, rng, scale); });
  return p;
}

// --- embedding --------------------------------------------------------------

TEST(Embed, ZeroTablesGiveZeroMatrix) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = ModelParams<double>::zeros(small_model(s), s);
  const M x = embed(p, s, featurize(fixture_request(), s));
  EXPECT_EQ(x.rows(), 20);
  EXPECT_EQ(x.cols(), 8);
  EXPECT_TRUE(x.isZero(0.0));
}

TEST(Embed, RowsAreManualLookups) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = random_params(small_model(s), s, 3, 1.0);
  const TokenIndexes t = featurize(fixture_request(), s);
  const M x = embed(p, s, t);
  for (std::size_t k = 0; k < s.num_tokens(); ++k) {
    const M& table = p.tables[s.tokens[k].table].value;
    nc::RowVector<double> want = table.row(t.slots[k].bin);
    if (s.tokens[k].hashed()) want += table.row(t.slots[k].alt);
    EXPECT_EQ(nc::RowVector<double>(x.row(static_cast<Eigen::Index>(k))), want) << s.tokens[k].name;
  }
}

TEST(Embed, EqualHashBinsDoubleTheRow) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = random_params(small_model(s), s, 4, 1.0);
  TokenIndexes t = featurize(fixture_request(), s);
  t.slots[2].alt = t.slots[2].bin;  // geo.origin.u4
  const M x = embed(p, s, t);
  EXPECT_EQ(nc::RowVector<double>(x.row(2)),
            nc::RowVector<double>(2.0 * p.tables[s.tokens[2].table].value.row(t.slots[2].bin)));
}

TEST(Embed, OutOfRangeIndex) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = ModelParams<double>::zeros(small_model(s), s);
  TokenIndexes t = featurize(fixture_request(), s);
  t.slots[0].bin = 10081;
  EXPECT_THROW(embed(p, s, t), IndexError);
  t = featurize(fixture_request(), s);
  t.slots.pop_back();
  EXPECT_THROW(embed(p, s, t), ShapeError);
}

// --- interaction --------------------------------------------------------------

TEST(Interaction, ZeroUpProjectionIsIdentity) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = random_params(small_model(s), s, 5, 1.0);
  p.wup.value.setZero();
  const M x = embed(p, s, featurize(fixture_request(), s));
  EXPECT_EQ(interaction(p, x), x);
}

// L = 3 structural test: permuting the tokens permutes H, and permuting the
// row blocks of W1 to match restores the prediction.
TEST(Interaction, PermutationEquivariance) {
  ModelConfig mc;
  mc.num_tokens = 3;
  mc.hidden_size = 12;
  const FeatureSchema none;
  SplitMix64 rng(6);
  const int perm[3] = {2, 0, 1};
  for (int it = 0; it < 20; ++it) {
    ModelParams<double> p = ModelParams<double>::zeros(mc, none);
    p.for_each_dense([&](const std::string&, nc::Parameter<double>& q) { fill_random(q.value, rng, 1.0); });
    M x(3, mc.embed_dim);
    fill_random(x, rng, 1.0);
    M xp(3, mc.embed_dim);
    for (int i = 0; i < 3; ++i) xp.row(i) = x.row(perm[i]);
    const M h = interaction(p, x), hp = interaction(p, xp);
    for (int i = 0; i < 3; ++i) {
      ASSERT_LT((hp.row(i) - h.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
    }
    ModelParams<double> q = p;
    for (int i = 0; i < 3; ++i) {
      q.w1.value.middleRows(i * mc.embed_dim, mc.embed_dim) =
          p.w1.value.middleRows(perm[i] * mc.embed_dim, mc.embed_dim);
    }
    Workspace<double> ws;
    const double r = decode_raw(p, h, 1, ws);
    const double rp = decode_raw(q, hp, 1, ws);
    ASSERT_NEAR(r, rp, 1e-10 * std::max(1.0, std::abs(r)));
  }
}

// --- decoder and prediction ------------------------------------------------------

TEST(Decoder, BiasIsolationAndClamp) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = ModelParams<double>::zeros(small_model(s), s);
  RawRequest r = fixture_request();
  for (int j = 0; j < kNumRequestTypes; ++j) {
    p.calib.value.setZero();
    p.calib.value(j, 0) = 7.0;
    r.request_type = static_cast<RequestType>(j);
    const Prediction pr = predict(r, s, p);
    EXPECT_EQ(pr.raw_residual_s, 7.0);
    EXPECT_EQ(pr.residual_s, 7.0);
    EXPECT_EQ(pr.eta_s, r.re_eta_s + 7.0);
    r.request_type = static_cast<RequestType>((j + 1) % kNumRequestTypes);
    EXPECT_EQ(predict(r, s, p).residual_s, 0.0);
  }
  p.calib.value.setZero();
  const double c = p.config.residual_clamp;
  p.b2.value(0, 0) = 10.0 * c;
  Prediction pr = predict(fixture_request(), s, p);
  EXPECT_EQ(pr.raw_residual_s, 10.0 * c);
  EXPECT_EQ(pr.residual_s, c);
  p.b2.value(0, 0) = -10.0 * c;
  pr = predict(fixture_request(), s, p);
  EXPECT_EQ(pr.residual_s, -c);
  EXPECT_EQ(pr.eta_s, 0.0);
}

TEST(Decoder, PositivityFloor) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = ModelParams<double>::zeros(small_model(s), s);
  p.b2.value(0, 0) = -150.0;
  RawRequest r = fixture_request();
  r.re_eta_s = 100.0;
  const Prediction pr = predict(r, s, p);
  EXPECT_EQ(pr.residual_s, -150.0);
  EXPECT_EQ(pr.eta_s, 0.0);
}

TEST(Decoder, InvalidTypeId) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = ModelParams<double>::zeros(small_model(s), s);
  const M h = M::Zero(20, 8);
  Workspace<double> ws;
  EXPECT_THROW(decode_raw(p, h, 4, ws), IndexError);
  EXPECT_THROW(decode_raw(p, h, -1, ws), IndexError);
  EXPECT_THROW(decode_raw(p, M(M::Zero(19, 8)), 0, ws), ShapeError);
}

TEST(Predict, ZeroModelIsIdentity) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = ModelParams<double>::zeros(small_model(s), s);
  const auto pf = p.cast<float>();
  SplitMix64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const RawRequest r = random_request(rng);
    ASSERT_EQ(predict(r, s, p).eta_s, r.re_eta_s);
    ASSERT_EQ(predict(r, s, pf).eta_s, r.re_eta_s);
  }
}

TEST(Predict, BoundsHoldForLargeWeights) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = random_params(small_model(s), s, 8, 3.0);
  SplitMix64 rng(9);
  int clamped = 0;
  for (int i = 0; i < 5000; ++i) {
    const RawRequest r = random_request(rng);
    const Prediction pr = predict(r, s, p);
    ASSERT_GE(pr.eta_s, 0.0);
    ASSERT_LE(std::abs(pr.residual_s), p.config.residual_clamp);
    if (pr.eta_s > 0.0) ASSERT_LE(std::abs(pr.eta_s - r.re_eta_s), p.config.residual_clamp * (1 + 1e-12));
    if (std::abs(pr.raw_residual_s) > p.config.residual_clamp) ++clamped;
  }
  EXPECT_GT(clamped, 0);
}

TEST(Predict, CalibrationAdditivity) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = random_params(small_model(s), s, 10, 0.5);
  SplitMix64 rng(11);
  std::vector<RawRequest> reqs;
  for (int i = 0; i < 400; ++i) reqs.push_back(random_request(rng));
  for (int j = 0; j < kNumRequestTypes; ++j) {
    auto q = p;
    q.calib.value(j, 0) += 30.0;
    for (const auto& r : reqs) {
      const double before = predict(r, s, p).raw_residual_s;
      const double after = predict(r, s, q).raw_residual_s;
      if (static_cast<int>(r.request_type) == j) {
        // One rounding of the final addition separates the two values.
        ASSERT_NEAR(after - before, 30.0, 4.0 * std::numeric_limits<double>::epsilon() *
                                              std::max(std::abs(after), 30.0));
      } else {
        ASSERT_EQ(after, before);
      }
    }
  }
}

TEST(Predict, SinglePrecisionAgrees) {
  const FeatureSchema s = fixture_schema(256, 512);
  SplitMix64 rng(12);
  for (int m = 0; m < 5; ++m) {
    const auto p = init_params(small_model(s, 64), s, 100 + m);
    auto q = p;
    for (auto& t : q.tables) t.value *= 20.0;  // push the residual well away from zero
    q.b2.value(0, 0) = 50.0;
    const auto qf = q.cast<float>();
    for (int i = 0; i < 200; ++i) {
      const RawRequest r = random_request(rng);
      const double r64 = predict(r, s, q).raw_residual_s;
      const double r32 = predict(r, s, qf).raw_residual_s;
      ASSERT_LE(std::abs(r64 - r32), 1e-3 * std::max(1.0, std::abs(r64)));
    }
  }
}

TEST(Predict, RejectsMismatchedSchema) {
  const FeatureSchema s = fixture_schema(256, 512);
  const FeatureSchema other = fixture_schema(512, 512);
  const auto p = ModelParams<double>::zeros(small_model(s), s);
  EXPECT_THROW(predict(fixture_request(), other, p), CompatibilityError);
}

// --- census ----------------------------------------------------------------------

TEST(Census, MatchesHandCount) {
  const FeatureSchema s = fixture_schema();
  const ModelConfig mc = config_for(s);
  // Tables: minute 10081, day 8, 12 geo tables, type 5, four continuous
  // tables of 4 rows, regions 3 + unknown.
  const std::uint64_t rows = 10081 + 8 + 4 * (65536 + 65536 + 262144) + 5 + 4 * 4 + 4;
  const std::uint64_t d = 8, a = 4, h = 2048, L = 20;
  const ParamCensus c = census(mc, s);
  EXPECT_EQ(c.embedding, rows * d);
  EXPECT_EQ(c.non_embedding, 4 * d * a + L * d * h + h + h + 1 + 4);
  const auto small = fixture_schema(256, 512);
  const auto p = ModelParams<double>::zeros(small_model(small), small);
  const ParamCensus cp = census(p), cs = census(small_model(small), small);
  EXPECT_EQ(cp.embedding, cs.embedding);
  EXPECT_EQ(cp.non_embedding, cs.non_embedding);
}

TEST(Census, EmbeddingsDominateAtProductionSizes) {
  const FeatureSchema desk = fixture_schema();
  EXPECT_GT(census(config_for(desk), desk).embedding_fraction(), 0.97);
  const FeatureSchema prod = fixture_schema(1u << 20, 1u << 22);
  EXPECT_GT(census(config_for(prod), prod).embedding_fraction(), 0.99);
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  c.num_tokens = 20;
  EXPECT_NO_THROW(c.check());
  auto bad = c;
  bad.attn_dim = 9;
  EXPECT_THROW(bad.check(), ConfigError);
  bad = c;
  bad.hidden_size = 0;
  EXPECT_THROW(bad.check(), ConfigError);
  bad = c;
  bad.residual_clamp = 0.0;
  EXPECT_THROW(bad.check(), ConfigError);
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
}

TEST(Init, DeterministicAndBounded) {
  const FeatureSchema s = fixture_schema(256, 512);
  const auto a = init_params(small_model(s), s, 42), b = init_params(small_model(s), s, 42);
  EXPECT_EQ(a.w1.value, b.w1.value);
  EXPECT_EQ(a.tables[3].value, b.tables[3].value);
  EXPECT_LE(a.tables[0].value.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_TRUE(a.b1.value.isZero(0.0));
  EXPECT_TRUE(a.calib.value.isZero(0.0));
  EXPECT_NE(init_params(small_model(s), s, 43).w1.value, a.w1.value);
}

// --- batched training path -----------------------------------------------------

struct Batch {
  std::vector<TokenIndexes> tokens;
  std::vector<TrainExample> examples;
};

Batch make_batch(const FeatureSchema& s, int n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Batch b;
  for (int i = 0; i < n; ++i) b.tokens.push_back(featurize(random_request(rng), s));
  for (const auto& t : b.tokens) {
    b.examples.push_back({t.slots.data(), t.type_id, t.re_eta, t.re_eta + rng.uniform(-300.0, 600.0)});
  }
  return b;
}

TEST(ForwardBackward, LossMatchesSingleRequestPath) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = init_params(small_model(s), s, 13);
  p.for_each([](const std::string&, nc::Parameter<double>& q) { q.init_training_state(); });
  const Batch b = make_batch(s, 32, 14);
  LossConfig lc;
  lc.omega = 0.3;
  BatchScratch scratch;
  const double fb = forward_backward(p, s, b.examples, lc, {}, scratch);
  EXPECT_NEAR(fb, batch_loss(p, s, b.examples, lc), 1e-9 * std::abs(fb));
}

TEST(ForwardBackward, FrozenGroupsGetNoGradient) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = init_params(small_model(s), s, 15);
  p.for_each([](const std::string&, nc::Parameter<double>& q) { q.init_training_state(); });
  const Batch b = make_batch(s, 16, 16);
  FreezeMask freeze;
  freeze.embeddings = true;
  freeze.attention = true;
  BatchScratch scratch;
  forward_backward(p, s, b.examples, {}, freeze, scratch);
  for (const auto& t : p.tables) EXPECT_TRUE(t.grad.isZero(0.0));
  EXPECT_TRUE(p.wq.grad.isZero(0.0));
  EXPECT_TRUE(p.wup.grad.isZero(0.0));
  EXPECT_FALSE(p.w1.grad.isZero(0.0));
  EXPECT_FALSE(p.calib.grad.isZero(0.0));
}

TEST(ForwardBackward, TouchedRowsCoverNonzeroGradient) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = init_params(small_model(s), s, 17);
  p.for_each([](const std::string&, nc::Parameter<double>& q) { q.init_training_state(); });
  const Batch b = make_batch(s, 8, 18);
  BatchScratch scratch;
  forward_backward(p, s, b.examples, {}, {}, scratch);
  for (std::size_t t = 0; t < p.tables.size(); ++t) {
    std::vector<bool> listed(static_cast<std::size_t>(p.tables[t].rows()), false);
    for (auto r : scratch.touched[t]) listed[r] = true;
    for (Eigen::Index r = 0; r < p.tables[t].rows(); ++r) {
      if (!listed[static_cast<std::size_t>(r)]) ASSERT_TRUE(p.tables[t].grad.row(r).isZero(0.0));
    }
  }
}

TEST(ForwardBackward, NonFiniteLossIsDivergence) {
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = init_params(small_model(s), s, 19);
  p.for_each([](const std::string&, nc::Parameter<double>& q) { q.init_training_state(); });
  Batch b = make_batch(s, 4, 20);
  b.examples[2].label = std::numeric_limits<double>::quiet_NaN();
  BatchScratch scratch;
  try {
    forward_backward(p, s, b.examples, {}, {}, scratch);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_THAT(e.what(), HasSubstr("row 2"));
  }
}

// --- checkpoints -----------------------------------------------------------------

TEST(Checkpoint, RoundTripBothPrecisions) {
  TempDir dir;
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = init_params(small_model(s), s, 21);
  const CheckpointInfo i64 = save_checkpoint(dir.file("m64.ckpt"), p, s, Precision::kF64);
  const CheckpointInfo i32 = save_checkpoint(dir.file("m32.ckpt"), p, s, Precision::kF32, {{"note", "x"}});
  EXPECT_EQ(i64.schema_hash, s.hash());
  EXPECT_NE(i64.model_version, i32.model_version);
  EXPECT_EQ(i32.manifest.at("note"), "x");

  const auto l64 = load_checkpoint<double>(dir.file("m64.ckpt"), &s);
  EXPECT_EQ(l64.params.w1.value, p.w1.value);
  EXPECT_EQ(l64.params.tables[5].value, p.tables[5].value);
  EXPECT_EQ(l64.params.config, p.config);
  const auto l32 = load_checkpoint<float>(dir.file("m32.ckpt"), &s);
  EXPECT_EQ(l32.params.w1.value, p.w1.value.cast<float>());
  EXPECT_EQ(l32.info.precision, Precision::kF32);
  const auto nos = load_checkpoint<float>(dir.file("m32.ckpt"));
  EXPECT_EQ(nos.params.tables.size(), p.tables.size());
  EXPECT_EQ(nos.params.calib.value, p.calib.value.cast<float>());
  EXPECT_EQ(read_checkpoint_info(dir.file("m32.ckpt")).model_version, i32.model_version);
}

TEST(Checkpoint, RejectsTamperingAndMismatch) {
  TempDir dir;
  const FeatureSchema s = fixture_schema(256, 512);
  const auto p = init_params(small_model(s), s, 22);
  const std::string path = dir.file("m.ckpt");
  save_checkpoint(path, p, s, Precision::kF32);

  const FeatureSchema other = fixture_schema(512, 512);
  EXPECT_THROW(load_checkpoint<float>(path, &other), CompatibilityError);
  EXPECT_THROW(load_checkpoint<float>(dir.file("nope.ckpt"), &s), IoError);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream(dir.file("t.ckpt"), std::ios::binary) << b;
    return dir.file("t.ckpt");
  };
  std::string flipped = bytes;
  flipped.back() ^= 0x01;
  EXPECT_THROW(load_checkpoint<float>(write(flipped), &s), CompatibilityError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_checkpoint<float>(write(magic), &s), CompatibilityError);
  EXPECT_THROW(load_checkpoint<float>(write(bytes.substr(0, 40)), &s), CompatibilityError);
  // Rewrite the schema hash inside the manifest.
  std::string hash = bytes;
  const auto pos = hash.find(s.hash());
  ASSERT_NE(pos, std::string::npos);
  hash[pos] = hash[pos] == '0' ? '1' : '0';
  try {
    load_checkpoint<float>(write(hash), &s);
    FAIL();
  } catch (const CompatibilityError& e) {
    EXPECT_THAT(e.what(), HasSubstr("schema hash"));
  }
}

TEST(Checkpoint, LayoutIsLittleEndianAfterManifest) {
  TempDir dir;
  const FeatureSchema s = fixture_schema(256, 512);
  auto p = ModelParams<double>::zeros(small_model(s), s);
  p.calib.value(3, 0) = 1.5;
  save_checkpoint(dir.file("m.ckpt"), p, s, Precision::kF32);
  std::ifstream in(dir.file("m.ckpt"), std::ios::binary);
  std::string bytes(std::istreambuf_iterator<char>(in), {});
  ASSERT_EQ(bytes.substr(0, 8), "ETAPCKPT");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  const auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  std::uint64_t total = 0;
  for (const auto& e : manifest.at("params")) total += e.at("count").get<std::uint64_t>();
  EXPECT_EQ(bytes.size(), 16 + len + 4 * total);
  // calib.bias is the last array; its final entry is 1.5f.
  float last = 0.0f;
  std::memcpy(&last, bytes.data() + bytes.size() - 4, 4);
  EXPECT_EQ(last, 1.5f);
  EXPECT_EQ(manifest.at("params").back().at("name"), "calib.bias");
}

}  // namespace
}  // namespace etapost
