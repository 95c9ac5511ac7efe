#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/QR>

#include "ssreg/losses.hpp"

using namespace ssreg;

namespace {

VectorX<double> vec2(double a, double b) {
  VectorX<double> v(2);
  v << a, b;
  return v;
}

VectorX<double> random_vec(int d, Rng& rng, double lo = -2, double hi = 2) {
  VectorX<double> v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("mse_loss examples") {
  CHECK(mse_loss(0.7, 0.7).value == 0.0);
  CHECK(mse_loss(0.7, 0.7).d_pred == 0.0);
  CHECK(mse_loss(1.0, 0.0).value == 1.0);
  CHECK(mse_loss(1.0, 0.0).d_pred == 2.0);
}

TEST_CASE("mse_loss gradient matches finite differences") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const double y = rng.uniform(-2, 2), t = rng.uniform(-2, 2), h = 1e-6;
    const double fd = (mse_loss(y + h, t).value - mse_loss(y - h, t).value) / (2 * h);
    CHECK(mse_loss(y, t).d_pred == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("adaptive_coefficient examples and ordering check") {
  CHECK(adaptive_coefficient(0.8, 0.7, 0.5) == doctest::Approx(0.08).epsilon(1e-12));
  CHECK(adaptive_coefficient(0.4, 0.4, 0.4) == 0.0);
  CHECK(adaptive_coefficient(1.0, 0.9, 0.8) == doctest::Approx(0.03).epsilon(1e-12));
  CHECK_THROWS_AS(adaptive_coefficient(0.8, 0.5, 0.7), ConfigError);
}

TEST_CASE("adaptive coefficient is zero exactly when label distances tie") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    // dyadic grid keeps ya +- d exact in floating point
    const double ya = rng.uniform_int(0, 1024) / 1024.0;
    const double d = rng.uniform_int(0, 512) / 1024.0;
    CHECK(adaptive_coefficient(ya, ya - d, ya + d) == 0.0);
    const double d2 = d + rng.uniform_int(16, 256) / 1024.0;
    CHECK(adaptive_coefficient(ya, ya - d, ya + d2) > 0.0);
  }
}

TEST_CASE("adaptive_triplet_loss worked examples") {
  // labels (0.9, 0.8, 0.5): alpha = 0.16 - 0.01 = 0.15
  const double alpha = adaptive_coefficient(0.9, 0.8, 0.5);
  CHECK(alpha == doctest::Approx(0.15).epsilon(1e-12));

  auto inactive = adaptive_triplet_loss(vec2(0, 0), vec2(1, 0), vec2(0, 2), alpha, 0.5);
  CHECK(inactive.value == 0.0);  // max(0, 1 - 4 + 0.075)
  CHECK(inactive.d_anchor.isZero());
  CHECK(inactive.d_near.isZero());
  CHECK(inactive.d_far.isZero());

  auto active = adaptive_triplet_loss(vec2(0, 0), vec2(2, 0), vec2(1, 0), alpha, 0.5);
  CHECK(active.value == doctest::Approx(3.075).epsilon(1e-12));  // 4 - 1 + 0.075

  auto degenerate = adaptive_triplet_loss(vec2(1, 1), vec2(1, 1), vec2(1, 1), 0.0, 0.5);
  CHECK(degenerate.value == 0.0);
  CHECK(degenerate.d_anchor.isZero());

  Rng rng(99);
  CHECK_THROWS_AS(adaptive_triplet_loss(vec2(0, 0), vec2(1, 0), random_vec(3, rng), 0.1, 0.5),
                  ConfigError);
}

TEST_CASE("fixed_triplet_loss examples and equivalence at alpha=1") {
  auto at_margin = fixed_triplet_loss(vec2(1, 1), vec2(1, 1), vec2(1, 1), 0.5);
  CHECK(at_margin.value == doctest::Approx(0.5).epsilon(1e-12));

  CHECK(fixed_triplet_loss(vec2(0, 0), vec2(1, 0), vec2(0, 2), 0.5).value == 0.0);

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    auto a = random_vec(4, rng), n = random_vec(4, rng), f = random_vec(4, rng);
    const double m = rng.uniform(0.1, 1.0);
    CHECK(fixed_triplet_loss(a, n, f, m).value ==
          adaptive_triplet_loss(a, n, f, 1.0, m).value);
  }
}

TEST_CASE("triplet loss value is invariant under common rotations") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const int d = 5;
    auto a = random_vec(d, rng), n = random_vec(d, rng), f = random_vec(d, rng);
    const double alpha = rng.uniform(0, 0.5), m = rng.uniform(0.1, 1.0);

    Eigen::MatrixXd g(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) g(r, c) = rng.normal();
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();

    const double base = adaptive_triplet_loss(a, n, f, alpha, m).value;
    const double rotated =
        adaptive_triplet_loss<double>(q * a, q * n, q * f, alpha, m).value;
    CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("hinge monotonicity in the two pairwise distances") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const int d = 4;
    auto a = random_vec(d, rng), n = random_vec(d, rng), f = random_vec(d, rng);
    const double alpha = rng.uniform(0, 0.5), m = rng.uniform(0.1, 1.0);
    const double base = adaptive_triplet_loss(a, n, f, alpha, m).value;

    // pushing the far sample further away never increases the loss
    const double s = rng.uniform(1.0, 3.0);
    VectorX<double> f_moved = a + s * (f - a);
    CHECK(adaptive_triplet_loss(a, n, f_moved, alpha, m).value <= base + 1e-12);

    // pushing the near sample further away never decreases it
    VectorX<double> n_far = a + s * (n - a);
    CHECK(adaptive_triplet_loss(a, n_far, f, alpha, m).value >= base - 1e-12);
  }
}

TEST_CASE("triplet and consistency gradients match finite differences") {
  Rng rng(6);
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 4;
    auto a = random_vec(d, rng), n = random_vec(d, rng), f = random_vec(d, rng);
    const double alpha = rng.uniform(0, 0.5), m = rng.uniform(0.1, 1.0);
    auto loss = adaptive_triplet_loss(a, n, f, alpha, m);
    for (int i = 0; i < d; ++i) {
      auto bump = [&](VectorX<double> v, double delta, int idx) {
        v[idx] += delta;
        return v;
      };
      const double fd_a = (adaptive_triplet_loss<double>(bump(a, h, i), n, f, alpha, m).value -
                           adaptive_triplet_loss<double>(bump(a, -h, i), n, f, alpha, m).value) /
                          (2 * h);
      CHECK(loss.d_anchor[i] == doctest::Approx(fd_a).epsilon(1e-5).scale(1.0));
    }

    auto f1 = random_vec(d, rng), f2 = random_vec(d, rng);
    const double y1 = rng.uniform(-1, 1), y2 = rng.uniform(-1, 1);
    auto c = consistency_loss(f1, f2, y1, y2);
    const double fd_y1 =
        (consistency_loss(f1, f2, y1 + h, y2).value - consistency_loss(f1, f2, y1 - h, y2).value) /
        (2 * h);
    CHECK(c.d_pred1 == doctest::Approx(fd_y1).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("consistency_loss examples and symmetry") {
  CHECK(consistency_loss(vec2(1, 2), vec2(1, 2), 0.3, 0.3).value == 0.0);
  CHECK(consistency_loss(vec2(1, 0), vec2(0, 0), 0.2, 0.0).value ==
        doctest::Approx(1.04).epsilon(1e-12));
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    auto f1 = random_vec(3, rng), f2 = random_vec(3, rng);
    const double y1 = rng.uniform(-1, 1), y2 = rng.uniform(-1, 1);
    CHECK(consistency_loss(f1, f2, y1, y2).value ==
          consistency_loss(f2, f1, y2, y1).value);
  }
}

TEST_CASE("mine_triplets: batch of 3 is forced, ordering and tie-break") {
  Rng rng(8);
  auto triplets = mine_triplets({0.5, 0.6, 0.9}, rng);
  REQUIRE(triplets.size() == 3);
  for (const auto& t : triplets) {
    CHECK(t.anchor != t.near);
    CHECK(t.anchor != t.far);
    CHECK(t.near != t.far);
  }
  // anchor 0's companions are forced to {1,2}: 0.6 is nearer to 0.5 than 0.9
  CHECK(triplets[0].anchor == 0);
  CHECK(triplets[0].near == 1);
  CHECK(triplets[0].far == 2);

  // exact tie: lower index becomes the near sample
  for (int trial = 0; trial < 50; ++trial) {
    auto tied = mine_triplets({0.5, 0.4, 0.6}, rng);
    CHECK(tied[0].near == 1);
    CHECK(tied[0].far == 2);
    CHECK(tied[0].alpha == 0.0);
  }
}

TEST_CASE("mine_triplets: batch below 3 yields nothing") {
  Rng rng(9);
  CHECK(mine_triplets({0.5, 0.7}, rng).empty());
}

TEST_CASE("mine_triplets ordering invariant over 10^4 random batches") {
  Rng rng(10);
  for (int batch = 0; batch < 10000; ++batch) {
    const int n = rng.uniform_int(3, 16);
    std::vector<double> labels(n);
    for (auto& y : labels) y = rng.uniform(0.2, 1.4);
    const auto triplets = mine_triplets(labels, rng);
    REQUIRE(triplets.size() == static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto& t = triplets[i];
      CHECK(t.anchor == i);
      CHECK(std::abs(labels[t.anchor] - labels[t.near]) <=
            std::abs(labels[t.anchor] - labels[t.far]));
      CHECK(t.alpha >= 0.0);
    }
  }
}

TEST_CASE("total_loss: lambda=0 and lambda_c=0 reduce to batch-mean MSE") {
  Rng rng(11), mine(12);
  const int n = 6, d = 3;
  std::vector<VectorX<double>> embeds, embeds2;
  std::vector<double> preds, preds2, targets;
  for (int i = 0; i < n; ++i) {
    embeds.push_back(random_vec(d, rng));
    embeds2.push_back(random_vec(d, rng));
    preds.push_back(rng.uniform(0, 1));
    preds2.push_back(rng.uniform(0, 1));
    targets.push_back(rng.uniform(0, 1));
  }
  auto batch = total_loss<double>(embeds, preds, targets, LossMode::kSelfTrain, 0.0, 0.5,
                                  true, mine, &embeds2, &preds2, 0.0);
  double expected = 0.0;
  for (int i = 0; i < n; ++i) expected += mse_loss(preds[i], targets[i]).value / n;
  CHECK(batch.value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("total_loss: identical views and inactive hinges leave only MSE") {
  Rng rng(13), mine(14);
  const int n = 4, d = 3;
  // far-apart embeddings with tiny alpha*margin keep every hinge inactive
  std::vector<VectorX<double>> embeds;
  std::vector<double> preds, targets;
  for (int i = 0; i < n; ++i) {
    VectorX<double> e = VectorX<double>::Zero(d);
    e[0] = i * 10.0;
    embeds.push_back(e);
    preds.push_back(0.5 + 0.001 * i);
    targets.push_back(0.5);
  }
  // equal label spacing makes |y_a-y_n| < |y_a-y_f| or alpha small; check hinges
  auto embeds2 = embeds;
  auto preds2 = preds;
  auto batch = total_loss<double>(embeds, preds, targets, LossMode::kSelfTrain, 0.5, 0.5,
                                  true, mine, &embeds2, &preds2, 1.0);
  CHECK(batch.consistency_term == 0.0);
  double expected_mse = 0.0;
  for (int i = 0; i < n; ++i) expected_mse += mse_loss(preds[i], targets[i]).value / n;
  CHECK(batch.mse_term == doctest::Approx(expected_mse).epsilon(1e-12));
}

TEST_CASE("total_loss matches an independent straight-line recomputation") {
  Rng rng(15);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng mine(seed);
    const int n = 8, d = 4;
    std::vector<VectorX<double>> e1, e2;
    std::vector<double> p1, p2, targets;
    for (int i = 0; i < n; ++i) {
      e1.push_back(random_vec(d, rng));
      e2.push_back(random_vec(d, rng));
      p1.push_back(rng.uniform(0, 1.5));
      p2.push_back(rng.uniform(0, 1.5));
      targets.push_back(rng.uniform(0.2, 1.4));
    }
    const double lambda = 0.5, m = 0.5, lambda_c = 1.0;
    auto batch = total_loss<double>(e1, p1, targets, LossMode::kSelfTrain, lambda, m, true,
                                    mine, &e2, &p2, lambda_c);

    // straight-line recomputation from the returned triplet indices
    double mse_term = 0.0, trip_term = 0.0, cons_term = 0.0;
    for (int i = 0; i < n; ++i) {
      mse_term += (targets[i] - p1[i]) * (targets[i] - p1[i]);
      double fdist = 0.0;
      for (int k = 0; k < d; ++k) fdist += (e1[i][k] - e2[i][k]) * (e1[i][k] - e2[i][k]);
      cons_term += fdist + (p1[i] - p2[i]) * (p1[i] - p2[i]);
    }
    mse_term /= n;
    cons_term /= n;
    REQUIRE(batch.triplets.size() == static_cast<std::size_t>(n));
    for (const auto& t : batch.triplets) {
      const double alpha =
          (targets[t.anchor] - targets[t.far]) * (targets[t.anchor] - targets[t.far]) -
          (targets[t.anchor] - targets[t.near]) * (targets[t.anchor] - targets[t.near]);
      double dn = 0.0, df = 0.0;
      for (int k = 0; k < d; ++k) {
        dn += (e1[t.anchor][k] - e1[t.near][k]) * (e1[t.anchor][k] - e1[t.near][k]);
        df += (e1[t.anchor][k] - e1[t.far][k]) * (e1[t.anchor][k] - e1[t.far][k]);
      }
      trip_term += std::max(0.0, dn - df + alpha * m) / n;
    }
    const double expected = mse_term + lambda * trip_term + lambda_c * cons_term;
    CHECK(batch.value == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("total_loss: self-train mode without second views is a usage error") {
  Rng mine(1);
  std::vector<VectorX<double>> e = {vec2(0, 0), vec2(1, 0), vec2(0, 1)};
  std::vector<double> p = {0.1, 0.2, 0.3}, t = {0.1, 0.2, 0.3};
  CHECK_THROWS_AS(total_loss<double>(e, p, t, LossMode::kSelfTrain, 0.5, 0.5, true, mine),
                  ConfigError);
}
