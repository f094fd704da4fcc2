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

// Dense math for the model: Eigen matrices templated on the scalar type,
// forward functions, and hand-derived vector-Jacobian products.
//
// Every `*_backward` takes the forward inputs plus the upstream gradient and
// returns gradients for each input. There is no graph; the model composes
// these directly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "etapost/errors.hpp"

namespace etapost::nc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename A, typename B>
void check_inner(const A& a, const B& b, const char* op) {
  if (a.cols() != b.rows()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

// Value with gradient and Adam moments. Inference-only parameters leave the
// training state empty.
template <typename Scalar>
struct Parameter {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Matrix<Scalar> m;
  Matrix<Scalar> v;

  Parameter() = default;
  Parameter(Eigen::Index rows, Eigen::Index cols) : value(Matrix<Scalar>::Zero(rows, cols)) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  Eigen::Index size() const { return value.size(); }

  bool has_training_state() const { return grad.size() == value.size(); }

  void init_training_state() {
    grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    m = Matrix<Scalar>::Zero(value.rows(), value.cols());
    v = Matrix<Scalar>::Zero(value.rows(), value.cols());
  }
};

// --- matmul -------------------------------------------------------------------

template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  check_inner(a, b, "matmul");
  return a * b;
}

template <typename Scalar>
struct MatmulGrad {
  Matrix<Scalar> da;
  Matrix<Scalar> db;
};

template <typename Scalar>
MatmulGrad<Scalar> matmul_backward(const Matrix<Scalar>& a, const Matrix<Scalar>& b,
                                   const Matrix<Scalar>& dc) {
  check_inner(a, b, "matmul_backward");
  if (dc.rows() != a.rows() || dc.cols() != b.cols()) {
    throw ShapeError("matmul_backward: upstream " + shape_str(dc.rows(), dc.cols()) +
                     " does not match output " + shape_str(a.rows(), b.cols()));
  }
  return {dc * b.transpose(), a.transpose() * dc};
}

// --- affine / relu --------------------------------------------------------

// X [n x in], W [in x out], b [1 x out].
template <typename Scalar>
Matrix<Scalar> affine(const Matrix<Scalar>& x, const Matrix<Scalar>& w, const Matrix<Scalar>& b) {
  check_inner(x, w, "affine");
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine: bias " + shape_str(b.rows(), b.cols()) + " vs weight " +
                     shape_str(w.rows(), w.cols()));
  }
  Matrix<Scalar> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename Scalar>
struct AffineGrad {
  Matrix<Scalar> dx;
  Matrix<Scalar> dw;
  Matrix<Scalar> db;
};

template <typename Scalar>
AffineGrad<Scalar> affine_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& w,
                                   const Matrix<Scalar>& dy) {
  check_inner(x, w, "affine_backward");
  return {dy * w.transpose(), x.transpose() * dy, dy.colwise().sum()};
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

// Gradient at exactly zero is zero.
template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy) {
  return (x.array() > Scalar(0)).select(dy, Scalar(0));
}

// --- elu(x) + 1 feature map (alpha = 1) -----------------------------------

template <typename Scalar>
inline Scalar elu_plus_one(Scalar x) {
  return x > Scalar(0) ? x + Scalar(1) : std::exp(x);
}

template <typename Scalar>
inline Scalar elu_plus_one_grad(Scalar x) {
  return x > Scalar(0) ? Scalar(1) : std::exp(x);
}

template <typename Derived>
auto feature_map(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return elu_plus_one(v); });
}

// --- embeddings -------------------------------------------------------------

template <typename Scalar>
void check_row(const Matrix<Scalar>& table, std::int64_t index) {
  if (index < 0 || index >= table.rows()) {
    throw IndexError("embedding index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(table.rows()) + ")");
  }
}

template <typename Scalar>
RowVector<Scalar> embedding_gather(const Matrix<Scalar>& table, std::int64_t index) {
  check_row(table, index);
  return table.row(index);
}

// Accumulates; duplicate indexes within a batch sum their contributions.
template <typename Scalar, typename Derived>
void embedding_scatter_add(Matrix<Scalar>& grad_table, std::int64_t index,
                           const Eigen::MatrixBase<Derived>& upstream) {
  check_row(grad_table, index);
  grad_table.row(index) += upstream;
}

// --- attention --------------------------------------------------------------

// Intermediate values of one linear-attention forward pass, kept for the
// backward pass.
template <typename Scalar>
struct LinearAttentionCache {
  Matrix<Scalar> q, k, v;        // [L x a]
  Matrix<Scalar> phi_q, phi_k;   // [L x a]
  Matrix<Scalar> kv;             // sum_j phi(K_j) V_j^T  [a x a]
  RowVector<Scalar> z;           // sum_j phi(K_j)        [1 x a]
  Matrix<Scalar> num;            // phi(Q) kv             [L x a]
  Vector<Scalar> den;            // phi(Q) z^T            [L]
};

// V'_i = (phi(Q_i)^T S) / (phi(Q_i)^T z), with S and z summarized once so
// the cost is O(L a^2). Projections are [d x a].
template <typename Scalar>
Matrix<Scalar> linear_attention(const Matrix<Scalar>& x, const Matrix<Scalar>& wq,
                                const Matrix<Scalar>& wk, const Matrix<Scalar>& wv,
                                LinearAttentionCache<Scalar>* cache = nullptr) {
  check_inner(x, wq, "linear_attention");
  LinearAttentionCache<Scalar> local;
  LinearAttentionCache<Scalar>& c = cache ? *cache : local;
  c.q.noalias() = x * wq;
  c.k.noalias() = x * wk;
  c.v.noalias() = x * wv;
  c.phi_q = feature_map(c.q);
  c.phi_k = feature_map(c.k);
  c.kv.noalias() = c.phi_k.transpose() * c.v;
  c.z = c.phi_k.colwise().sum();
  c.num.noalias() = c.phi_q * c.kv;
  c.den.noalias() = c.phi_q * c.z.transpose();
  return c.num.array().colwise() / c.den.array();
}

template <typename Scalar>
struct AttentionGrad {
  Matrix<Scalar> dx;
  Matrix<Scalar> dwq, dwk, dwv;
};

template <typename Scalar>
AttentionGrad<Scalar> linear_attention_backward(const Matrix<Scalar>& x,
                                                const Matrix<Scalar>& wq,
                                                const Matrix<Scalar>& wk,
                                                const Matrix<Scalar>& wv,
                                                const LinearAttentionCache<Scalar>& c,
                                                const Matrix<Scalar>& dout) {
  const Vector<Scalar> inv_den = c.den.cwiseInverse();
  // out = num / den (row-wise)
  const Matrix<Scalar> dnum = dout.array().colwise() * inv_den.array();
  const Vector<Scalar> dden =
      -((dout.array() * c.num.array()).rowwise().sum() * inv_den.array().square()).matrix();

  Matrix<Scalar> dphi_q = dnum * c.kv.transpose();
  dphi_q.noalias() += dden * c.z;
  const Matrix<Scalar> dkv = c.phi_q.transpose() * dnum;
  const RowVector<Scalar> dz = dden.transpose() * c.phi_q;

  Matrix<Scalar> dphi_k = c.v * dkv.transpose();
  dphi_k.rowwise() += dz;
  const Matrix<Scalar> dv = c.phi_k * dkv;

  const Matrix<Scalar> dq =
      dphi_q.cwiseProduct(c.q.unaryExpr([](Scalar s) { return elu_plus_one_grad(s); }));
  const Matrix<Scalar> dk =
      dphi_k.cwiseProduct(c.k.unaryExpr([](Scalar s) { return elu_plus_one_grad(s); }));

  AttentionGrad<Scalar> g;
  g.dwq = x.transpose() * dq;
  g.dwk = x.transpose() * dk;
  g.dwv = x.transpose() * dv;
  g.dx = dq * wq.transpose();
  g.dx.noalias() += dk * wk.transpose();
  g.dx.noalias() += dv * wv.transpose();
  return g;
}

// Row-normalized weights phi(Q_i)^T phi(K_j) / phi(Q_i)^T z, [L x L]. Only
// used to inspect the attention pattern.
template <typename Scalar>
Matrix<Scalar> linear_attention_weights(const Matrix<Scalar>& x, const Matrix<Scalar>& wq,
                                        const Matrix<Scalar>& wk) {
  const Matrix<Scalar> phi_q = feature_map(Matrix<Scalar>(x * wq));
  const Matrix<Scalar> phi_k = feature_map(Matrix<Scalar>(x * wk));
  Matrix<Scalar> a = phi_q * phi_k.transpose();
  const Vector<Scalar> rows = a.rowwise().sum();
  return a.array().colwise() / rows.array();
}

// Quadratic softmax attention: A = softmax(Q K^T / sqrt(a)) row-wise, output
// A V. Reference path for tests; the model uses linear_attention.
template <typename Scalar>
Matrix<Scalar> softmax_attention(const Matrix<Scalar>& x, const Matrix<Scalar>& wq,
                                 const Matrix<Scalar>& wk, const Matrix<Scalar>& wv,
                                 Matrix<Scalar>* weights_out = nullptr) {
  check_inner(x, wq, "softmax_attention");
  const Matrix<Scalar> q = x * wq;
  const Matrix<Scalar> k = x * wk;
  const Matrix<Scalar> v = x * wv;
  Matrix<Scalar> logits = (q * k.transpose()) / std::sqrt(static_cast<Scalar>(wq.cols()));
  const Vector<Scalar> row_max = logits.rowwise().maxCoeff();
  logits = (logits.colwise() - row_max).array().exp();
  const Vector<Scalar> row_sum = logits.rowwise().sum();
  logits = logits.array().colwise() / row_sum.array();
  Matrix<Scalar> out = logits * v;
  if (weights_out) *weights_out = std::move(logits);
  return out;
}

// --- finite differences -------------------------------------------------

// Central differences on a random subsample of at least `min_samples`
// coordinates drawn across all inputs (all coordinates when fewer exist).
// `loss` must read the current contents of `inputs`. Returns the largest
// |analytic - numeric| / max(|analytic|, |numeric|, floor), where floor is
// 1e-3 of the largest sampled gradient magnitude (and at least 1e-10) so
// near-zero coordinates do not dominate.
template <typename Loss>
double finite_difference_check(Loss&& loss, std::span<Matrix<double>* const> inputs,
                               std::span<const Matrix<double>* const> analytic,
                               double eps = 1e-5, int min_samples = 64,
                               std::uint64_t seed = 7) {
  if (inputs.size() != analytic.size()) {
    throw ShapeError("finite_difference_check: inputs and gradients differ in count");
  }
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i]->rows() != analytic[i]->rows() || inputs[i]->cols() != analytic[i]->cols()) {
      throw ShapeError("finite_difference_check: gradient shape mismatch for input " +
                       std::to_string(i));
    }
    total += inputs[i]->size();
  }
  if (total <= min_samples) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      for (Eigen::Index k = 0; k < inputs[i]->size(); ++k) coords.emplace_back(i, k);
    }
  } else {
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick_input(
        inputs.size(), 0.0, static_cast<double>(inputs.size()),
        [&](double p) { return static_cast<double>(inputs[static_cast<std::size_t>(p)]->size()); });
    // Every input gets at least one coordinate.
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i]->size() > 0) {
        coords.emplace_back(i, static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(inputs[i]->size())));
      }
    }
    while (static_cast<int>(coords.size()) < min_samples) {
      const std::size_t i = pick_input(rng);
      coords.emplace_back(i, static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(inputs[i]->size())));
    }
  }

  std::vector<double> numeric(coords.size()), exact(coords.size());
  double scale = 0.0;
  for (std::size_t c = 0; c < coords.size(); ++c) {
    auto [i, k] = coords[c];
    double& x = inputs[i]->data()[k];
    const double saved = x;
    x = saved + eps;
    const double fp = loss();
    x = saved - eps;
    const double fm = loss();
    x = saved;
    numeric[c] = (fp - fm) / (2.0 * eps);
    exact[c] = analytic[i]->data()[k];
    scale = std::max(scale, std::abs(exact[c]));
  }
  const double floor = std::max(1e-3 * scale, 1e-10);
  double worst = 0.0;
  for (std::size_t c = 0; c < coords.size(); ++c) {
    const double denom = std::max({std::abs(exact[c]), std::abs(numeric[c]), floor});
    worst = std::max(worst, std::abs(exact[c] - numeric[c]) / denom);
  }
  return worst;
}

}  // namespace etapost::nc
