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

#include "etapost/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <nlohmann/json.hpp>

#include "etapost/loss.hpp"
#include "etapost/model.hpp"
#include "etapost/numcore.hpp"
#include "etapost/random.hpp"
#include "etapost/synthdata.hpp"

namespace etapost {

void to_json(nlohmann::json& j, const GradCheckResult& r) {
  j = {{"op", r.op},
       {"instances", r.instances},
       {"max_deviation", r.max_deviation},
       {"tolerance", kGradCheckTolerance},
       {"passed", r.passed()}};
}

namespace {

using nc::Matrix;

Matrix<double> random_matrix(SplitMix64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Eigen::Index dim(SplitMix64& rng, int lo, int hi) {
  return lo + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

double weighted_sum(const Matrix<double>& g, const Matrix<double>& y) {
  return (g.array() * y.array()).sum();
}

template <std::size_t N>
double check(auto&& loss, std::array<Matrix<double>*, N> in, std::array<const Matrix<double>*, N> grad,
             std::uint64_t seed, int samples = 64) {
  return nc::finite_difference_check(loss, std::span<Matrix<double>* const>(in),
                                     std::span<const Matrix<double>* const>(grad), 1e-5, samples,
                                     seed);
}

double check_matmul(SplitMix64& rng) {
  Matrix<double> a = random_matrix(rng, dim(rng, 1, 6), dim(rng, 1, 6));
  Matrix<double> b = random_matrix(rng, a.cols(), dim(rng, 1, 6));
  const Matrix<double> g = random_matrix(rng, a.rows(), b.cols());
  const auto an = nc::matmul_backward(a, b, g);
  return check<2>([&] { return weighted_sum(g, nc::matmul(a, b)); }, {&a, &b}, {&an.da, &an.db},
                  rng());
}

double check_affine(SplitMix64& rng) {
  Matrix<double> x = random_matrix(rng, dim(rng, 1, 6), dim(rng, 1, 6));
  Matrix<double> w = random_matrix(rng, x.cols(), dim(rng, 1, 6));
  Matrix<double> b = random_matrix(rng, 1, w.cols());
  const Matrix<double> g = random_matrix(rng, x.rows(), w.cols());
  const auto an = nc::affine_backward(x, w, g);
  return check<3>([&] { return weighted_sum(g, nc::affine(x, w, b)); }, {&x, &w, &b},
                  {&an.dx, &an.dw, &an.db}, rng());
}

double check_relu(SplitMix64& rng) {
  Matrix<double> x = random_matrix(rng, dim(rng, 1, 8), dim(rng, 1, 8));
  // Keep every entry clear of the kink.
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double& v = x.data()[i];
    if (std::abs(v) < 0.05) v = v < 0.0 ? -0.05 : 0.05;
  }
  const Matrix<double> g = random_matrix(rng, x.rows(), x.cols());
  const Matrix<double> an = nc::relu_backward(x, g);
  return check<1>([&] { return weighted_sum(g, nc::relu(x)); }, {&x}, {&an}, rng());
}

double check_gather(SplitMix64& rng) {
  Matrix<double> table = random_matrix(rng, dim(rng, 2, 12), dim(rng, 1, 8));
  const auto n = static_cast<std::size_t>(dim(rng, 1, 10));
  std::vector<std::int64_t> idx(n);
  for (auto& i : idx) i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(table.rows())));
  const Matrix<double> g = random_matrix(rng, static_cast<Eigen::Index>(n), table.cols());
  Matrix<double> an = Matrix<double>::Zero(table.rows(), table.cols());
  for (std::size_t k = 0; k < n; ++k) {
    nc::embedding_scatter_add(an, idx[k], g.row(static_cast<Eigen::Index>(k)));
  }
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      s += g.row(static_cast<Eigen::Index>(k)).dot(nc::embedding_gather(table, idx[k]));
    }
    return s;
  };
  return check<1>(loss, {&table}, {&an}, rng());
}

double check_attention(SplitMix64& rng) {
  const Eigen::Index L = dim(rng, 1, 8), d = dim(rng, 1, 8), a = dim(rng, 1, 6);
  Matrix<double> x = random_matrix(rng, L, d);
  Matrix<double> wq = random_matrix(rng, d, a), wk = random_matrix(rng, d, a),
                 wv = random_matrix(rng, d, a);
  const Matrix<double> g = random_matrix(rng, L, a);
  nc::LinearAttentionCache<double> cache;
  nc::linear_attention(x, wq, wk, wv, &cache);
  const auto an = nc::linear_attention_backward(x, wq, wk, wv, cache, g);
  return check<4>([&] { return weighted_sum(g, nc::linear_attention(x, wq, wk, wv)); },
                  {&x, &wq, &wk, &wv}, {&an.dx, &an.dwq, &an.dwk, &an.dwv}, rng());
}

// Draws an error away from both the Huber knee and zero.
double draw_error(SplitMix64& rng, double delta) {
  for (;;) {
    const double e = rng.uniform(0.01, 3.0) * delta * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    if (std::abs(std::abs(e) - delta) > 1e-3 * delta) return e;
  }
}

double check_huber(SplitMix64& rng, bool asymmetric) {
  LossConfig cfg;
  cfg.delta = rng.uniform(1.0, 100.0);
  cfg.omega = asymmetric ? rng.uniform(0.05, 0.95) : 0.5;
  const double y = rng.uniform(100.0, 2000.0);
  Matrix<double> yhat(1, 1);
  yhat(0, 0) = y - draw_error(rng, cfg.delta);
  auto value = [&] {
    return asymmetric ? asym_huber(y, yhat(0, 0), cfg) : huber(y, yhat(0, 0), cfg.delta);
  };
  Matrix<double> an(1, 1);
  an(0, 0) = value().grad;
  return check<1>([&] { return value().value; }, {&yhat}, {&an}, rng());
}

double check_model(SplitMix64& rng) {
  synth::WorldConfig wc;
  wc.seed = rng();
  const synth::World world(wc);
  const auto rows = synth::generate_trips(world, 48, rng());
  FitOptions fo;
  fo.eta_bins = fo.distance_bins = fo.speed_bins = 6;
  fo.geo.bins_point = 16;
  fo.geo.bins_pair = 32;
  const FeatureSchema schema = fit_schema(rows, fo);
  ModelConfig mc;
  mc.hidden_size = 16;
  mc = config_for(schema, mc);
  ModelParams<double> p = init_params(mc, schema, rng());
  // Larger embeddings exercise the attention path harder than the default init.
  for (auto& t : p.tables) t.value *= 10.0;
  p.for_each([](const std::string&, nc::Parameter<double>& q) { q.init_training_state(); });

  LossConfig lc;
  lc.omega = rng.uniform(0.1, 0.9);
  // Labels sit a drawn error away from the current prediction so no sample
  // straddles the Huber knee, and rows with a hidden unit near its kink are
  // redrawn; either would make central differences disagree by O(eps).
  const std::size_t batch_size = 1 + rng.below(6);
  std::vector<TokenIndexes> tokens;
  std::vector<double> labels;
  Workspace<double> ws;
  while (tokens.size() < batch_size) {
    const auto& r = rows[rng.below(rows.size())];
    TokenIndexes t = featurize(r.request, schema);
    const Prediction pr = predict_tokens(p, schema, std::span<const TokenSlot>(t.slots), t.type_id,
                                         t.re_eta, ws);
    if (ws.z1.cwiseAbs().minCoeff() < 1e-3) continue;
    labels.push_back(pr.eta_s + draw_error(rng, lc.delta));
    tokens.push_back(std::move(t));
  }
  std::vector<TrainExample> batch;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    TrainExample ex;
    ex.slots = tokens[i].slots.data();
    ex.type_id = tokens[i].type_id;
    ex.re_eta = tokens[i].re_eta;
    ex.label = labels[i];
    batch.push_back(ex);
  }
  BatchScratch scratch;
  forward_backward(p, schema, batch, lc, {}, scratch);

  std::vector<Matrix<double>*> in;
  std::vector<const Matrix<double>*> grad;
  p.for_each([&](const std::string&, nc::Parameter<double>& q) {
    // The minute-of-week table would swamp the sample with untouched rows;
    // gathers are covered on their own above.
    if (q.rows() > 1000 && q.cols() == mc.embed_dim) return;
    in.push_back(&q.value);
    grad.push_back(&q.grad);
  });
  // The loss runs through eta = re_eta + r with re_eta in the thousands, so
  // a wider step keeps roundoff below the truncation error.
  return nc::finite_difference_check([&] { return batch_loss(p, schema, batch, lc); },
                                     std::span<Matrix<double>* const>(in),
                                     std::span<const Matrix<double>* const>(grad), 1e-4, 256,
                                     rng());
}

}  // namespace

std::vector<GradCheckResult> run_grad_check_suite(int instances, std::uint64_t seed) {
  SplitMix64 rng(seed);
  struct Op {
    const char* name;
    double (*fn)(SplitMix64&);
  };
  const Op ops[] = {
      {"matmul", check_matmul},
      {"affine", check_affine},
      {"relu", check_relu},
      {"embedding_gather", check_gather},
      {"linear_attention", check_attention},
      {"huber", [](SplitMix64& r) { return check_huber(r, false); }},
      {"asym_huber", [](SplitMix64& r) { return check_huber(r, true); }},
      {"model", check_model},
  };
  std::vector<GradCheckResult> out;
  for (const Op& op : ops) {
    GradCheckResult r;
    r.op = op.name;
    for (int i = 0; i < instances; ++i) {
      r.max_deviation = std::max(r.max_deviation, op.fn(rng));
      ++r.instances;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace etapost
