#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ssreg/common.hpp"
#include "ssreg/params.hpp"

namespace ssreg {

// Index triple mined within a batch. alpha is the label-derived adaptive
// margin coefficient; ordering invariant |y_a-y_n| <= |y_a-y_f| holds by
// construction in mine_triplets.
struct Triplet {
  int anchor = 0;
  int near = 0;
  int far = 0;
  double alpha = 0.0;
};

template <typename Scalar>
struct ScalarLoss {
  Scalar value = 0;
  Scalar d_pred = 0;
};

template <typename Scalar>
struct TripletLossValue {
  Scalar value = 0;
  VectorX<Scalar> d_anchor, d_near, d_far;
};

template <typename Scalar>
struct ConsistencyLossValue {
  Scalar value = 0;
  VectorX<Scalar> d_embed1, d_embed2;
  Scalar d_pred1 = 0, d_pred2 = 0;
};

// (y - y')^2
template <typename Scalar>
ScalarLoss<Scalar> mse_loss(Scalar y_pred, Scalar y_true) {
  const Scalar diff = y_pred - y_true;
  return {diff * diff, Scalar(2) * diff};
}

// alpha = (y_a - y_f)^2 - (y_a - y_n)^2, nonnegative under near/far ordering.
inline double adaptive_coefficient(double y_a, double y_n, double y_f) {
  if (std::abs(y_a - y_n) > std::abs(y_a - y_f))
    throw ConfigError("adaptive_coefficient: near/far ordering violated");
  const double dn = y_a - y_n;
  const double df = y_a - y_f;
  return df * df - dn * dn;
}

// max(0, ||F_a-F_n||^2 - ||F_a-F_f||^2 + alpha*m), subgradient 0 at the kink.
template <typename Scalar>
TripletLossValue<Scalar> adaptive_triplet_loss(const VectorX<Scalar>& f_a,
                                               const VectorX<Scalar>& f_n,
                                               const VectorX<Scalar>& f_f, Scalar alpha,
                                               Scalar margin) {
  if (f_a.size() != f_n.size() || f_a.size() != f_f.size())
    throw ConfigError("adaptive_triplet_loss: embedding dimension mismatch");
  TripletLossValue<Scalar> out;
  const VectorX<Scalar> an = f_a - f_n;
  const VectorX<Scalar> af = f_a - f_f;
  const Scalar pre_hinge = an.squaredNorm() - af.squaredNorm() + alpha * margin;
  const Eigen::Index d = f_a.size();
  if (pre_hinge > Scalar(0)) {
    out.value = pre_hinge;
    out.d_anchor = Scalar(2) * (an - af);  // == 2*(f_f - f_n)
    out.d_near = Scalar(-2) * an;
    out.d_far = Scalar(2) * af;
  } else {
    out.d_anchor = VectorX<Scalar>::Zero(d);
    out.d_near = VectorX<Scalar>::Zero(d);
    out.d_far = VectorX<Scalar>::Zero(d);
  }
  return out;
}

// Non-adaptive counterpart: the margin coefficient is the constant 1.
template <typename Scalar>
TripletLossValue<Scalar> fixed_triplet_loss(const VectorX<Scalar>& f_a,
                                            const VectorX<Scalar>& f_n,
                                            const VectorX<Scalar>& f_f, Scalar margin) {
  return adaptive_triplet_loss(f_a, f_n, f_f, Scalar(1), margin);
}

// ||F_1-F_2||^2 + (y_1-y_2)^2, symmetric between branches.
template <typename Scalar>
ConsistencyLossValue<Scalar> consistency_loss(const VectorX<Scalar>& f1,
                                              const VectorX<Scalar>& f2, Scalar y1,
                                              Scalar y2) {
  if (f1.size() != f2.size())
    throw ConfigError("consistency_loss: embedding dimension mismatch");
  ConsistencyLossValue<Scalar> out;
  const VectorX<Scalar> df = f1 - f2;
  const Scalar dy = y1 - y2;
  out.value = df.squaredNorm() + dy * dy;
  out.d_embed1 = Scalar(2) * df;
  out.d_embed2 = Scalar(-2) * df;
  out.d_pred1 = Scalar(2) * dy;
  out.d_pred2 = Scalar(-2) * dy;
  return out;
}

// One triplet per batch element as anchor, companions drawn uniformly without
// replacement from the remaining indices, then ordered near/far by label
// distance (tie: lower index is near). Batches under 3 yield no triplets.
inline std::vector<Triplet> mine_triplets(const std::vector<double>& labels, Rng& rng) {
  const int n = static_cast<int>(labels.size());
  std::vector<Triplet> out;
  if (n < 3) return out;
  out.reserve(n);
  for (int a = 0; a < n; ++a) {
    int j = rng.uniform_int(0, n - 2);
    if (j >= a) ++j;
    int k = rng.uniform_int(0, n - 3);
    // skip both a and j, lower index first
    const int lo = std::min(a, j), hi = std::max(a, j);
    if (k >= lo) ++k;
    if (k >= hi) ++k;

    const double dj = std::abs(labels[a] - labels[j]);
    const double dk = std::abs(labels[a] - labels[k]);
    int near = j, far = k;
    if (dk < dj || (dk == dj && k < j)) {
      near = k;
      far = j;
    }
    out.push_back({a, near, far, adaptive_coefficient(labels[a], labels[near], labels[far])});
  }
  return out;
}

enum class LossMode { kPretrain, kSelfTrain };

// Per-batch combined loss with upstream gradients for every forward output.
// View-2 entries are populated only in self-train mode.
template <typename Scalar>
struct BatchLossValue {
  Scalar value = 0;
  Scalar mse_term = 0;
  Scalar triplet_term = 0;
  Scalar consistency_term = 0;
  std::vector<VectorX<Scalar>> d_embed1, d_embed2;
  std::vector<Scalar> d_pred1, d_pred2;
  std::vector<Triplet> triplets;
  bool triplets_skipped = false;  // batch < 3
};

// Pretrain: L = mean MSE + lambda * mean triplet (view 1).
// Self-train: adds lambda_c * mean consistency between the two views; MSE and
// triplet stay on view 1. All terms are batch means.
template <typename Scalar>
BatchLossValue<Scalar> total_loss(const std::vector<VectorX<Scalar>>& embeds1,
                                  const std::vector<Scalar>& preds1,
                                  const std::vector<double>& targets, LossMode mode,
                                  Scalar lambda, Scalar margin, bool adaptive, Rng& rng,
                                  const std::vector<VectorX<Scalar>>* embeds2 = nullptr,
                                  const std::vector<Scalar>* preds2 = nullptr,
                                  Scalar lambda_c = Scalar(1),
                                  const std::vector<int>* triplet_pool = nullptr) {
  const int n = static_cast<int>(preds1.size());
  if (n == 0) throw ConfigError("total_loss: empty batch");
  if (static_cast<int>(embeds1.size()) != n || static_cast<int>(targets.size()) != n)
    throw ConfigError("total_loss: batch component sizes disagree");
  if (mode == LossMode::kSelfTrain && (embeds2 == nullptr || preds2 == nullptr))
    throw ConfigError("total_loss: self-train mode requires second views");

  const Eigen::Index d = embeds1[0].size();
  BatchLossValue<Scalar> out;
  out.d_embed1.assign(n, VectorX<Scalar>::Zero(d));
  out.d_pred1.assign(n, Scalar(0));
  if (mode == LossMode::kSelfTrain) {
    out.d_embed2.assign(n, VectorX<Scalar>::Zero(d));
    out.d_pred2.assign(n, Scalar(0));
  }
  const Scalar inv_n = Scalar(1) / Scalar(n);

  for (int i = 0; i < n; ++i) {
    const auto l = mse_loss(preds1[i], static_cast<Scalar>(targets[i]));
    out.mse_term += l.value * inv_n;
    out.d_pred1[i] += l.d_pred * inv_n;
  }

  // triplet term, mined over the pool (defaults to the whole batch)
  if (lambda != Scalar(0)) {
    std::vector<int> pool;
    if (triplet_pool) {
      pool = *triplet_pool;
    } else {
      pool.resize(n);
      for (int i = 0; i < n; ++i) pool[i] = i;
    }
    std::vector<double> pool_labels(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool_labels[i] = targets[pool[i]];
    std::vector<Triplet> local = mine_triplets(pool_labels, rng);
    if (local.empty()) {
      out.triplets_skipped = true;
    } else {
      const Scalar inv_t = Scalar(1) / Scalar(local.size());
      for (const auto& t : local) {
        const int a = pool[t.anchor], nn = pool[t.near], ff = pool[t.far];
        const Scalar alpha = adaptive ? static_cast<Scalar>(t.alpha) : Scalar(1);
        const auto l = adaptive_triplet_loss(embeds1[a], embeds1[nn], embeds1[ff], alpha, margin);
        out.triplet_term += l.value * inv_t;
        out.d_embed1[a] += lambda * inv_t * l.d_anchor;
        out.d_embed1[nn] += lambda * inv_t * l.d_near;
        out.d_embed1[ff] += lambda * inv_t * l.d_far;
        out.triplets.push_back({a, nn, ff, t.alpha});
      }
    }
  }

  if (mode == LossMode::kSelfTrain && lambda_c != Scalar(0)) {
    for (int i = 0; i < n; ++i) {
      const auto l = consistency_loss(embeds1[i], (*embeds2)[i], preds1[i], (*preds2)[i]);
      out.consistency_term += l.value * inv_n;
      out.d_embed1[i] += lambda_c * inv_n * l.d_embed1;
      out.d_embed2[i] += lambda_c * inv_n * l.d_embed2;
      out.d_pred1[i] += lambda_c * inv_n * l.d_pred1;
      out.d_pred2[i] += lambda_c * inv_n * l.d_pred2;
    }
  }

  out.value = out.mse_term + lambda * out.triplet_term +
              (mode == LossMode::kSelfTrain ? lambda_c * out.consistency_term : Scalar(0));
  return out;
}

}  // namespace ssreg
