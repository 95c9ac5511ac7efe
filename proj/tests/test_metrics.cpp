#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ssreg/common.hpp"
#include "ssreg/data.hpp"
#include "ssreg/evaluate.hpp"
#include "ssreg/metrics.hpp"
#include "ssreg/net.hpp"

using namespace ssreg;

namespace {

// Independent oracle: single-pass textbook formula,
// r = (n*Sxy - Sx*Sy) / sqrt((n*Sxx - Sx^2) * (n*Syy - Sy^2)).
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

std::vector<double> random_vec(int n, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("pearson_r hand examples") {
  std::vector<double> a = {1, 2, 3};
  std::vector<double> up = {2, 4, 6};
  std::vector<double> down = {6, 4, 2};
  CHECK(*pearson_r(a, up) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*pearson_r(a, down) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(*pearson_r(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pearson_r is undefined under zero variance or tiny samples") {
  std::vector<double> flat = {0.5, 0.5, 0.5};
  std::vector<double> var = {1, 2, 3};
  CHECK(!pearson_r(flat, var).has_value());
  CHECK(!pearson_r(var, flat).has_value());
  std::vector<double> one = {1.0};
  CHECK(!pearson_r(one, one).has_value());
}

TEST_CASE("pearson_r matches the single-pass oracle on random data") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(3, 200);
    auto x = random_vec(n, rng);
    auto y = random_vec(n, rng);
    const auto r = pearson_r(x, y);
    REQUIRE(r.has_value());
    CHECK(*r == doctest::Approx(pearson_oracle(x, y)).epsilon(1e-9));
    CHECK(*r >= -1.0 - 1e-12);
    CHECK(*r <= 1.0 + 1e-12);
  }
}

TEST_CASE("pearson_r affine invariance, sign flip, and symmetry") {
  Rng rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 50;
    auto x = random_vec(n, rng);
    auto y = random_vec(n, rng);
    const double base = *pearson_r(x, y);

    const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3, 3);
    std::vector<double> xt(n), xf(n);
    for (int i = 0; i < n; ++i) {
      xt[i] = a * x[i] + b;
      xf[i] = -a * x[i] + b;
    }
    CHECK(*pearson_r(xt, y) == doctest::Approx(base).epsilon(1e-12).scale(1.0));
    CHECK(*pearson_r(xf, y) == doctest::Approx(-base).epsilon(1e-12).scale(1.0));
    CHECK(*pearson_r(y, x) == doctest::Approx(base).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("mse and rmse hand examples") {
  std::vector<double> p = {1, 2, 3};
  std::vector<double> t = {1, 2, 3};
  CHECK(mse(p, t) == 0.0);
  CHECK(rmse(p, t) == 0.0);
  std::vector<double> p2 = {0, 0, 0};
  std::vector<double> t2 = {3, 0, 0};
  CHECK(mse(p2, t2) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(rmse(p2, t2) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("rmse properties on large random vectors") {
  Rng rng(23);
  const int n = 10000;
  auto p = random_vec(n, rng), t = random_vec(n, rng);
  CHECK(rmse(p, t) == doctest::Approx(std::sqrt(mse(p, t))).epsilon(1e-12));
  CHECK(rmse(p, p) == 0.0);
  // symmetry in arguments
  CHECK(rmse(p, t) == rmse(t, p));
  // shift both by the same constant: unchanged
  std::vector<double> ps(n), ts(n);
  for (int i = 0; i < n; ++i) {
    ps[i] = p[i] + 0.7;
    ts[i] = t[i] + 0.7;
  }
  CHECK(rmse(ps, ts) == doctest::Approx(rmse(p, t)).epsilon(1e-12));
}

TEST_CASE("make_report and CSV formatting") {
  std::vector<double> p = {1, 2, 3};
  std::vector<double> t = {2, 4, 6};
  auto rep = make_report("val", 7, p, t);
  CHECK(rep.split == "val");
  CHECK(rep.epoch == 7);
  CHECK(rep.n == 3);
  REQUIRE(rep.r_value.has_value());
  CHECK(*rep.r_value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.mse == doctest::Approx((1.0 + 4.0 + 9.0) / 3.0).epsilon(1e-12));
  CHECK(MetricsReport::csv_header() == "epoch,split,r_value,rmse,mse,n");
  CHECK(rep.csv_row().rfind("7,val,1,", 0) == 0);

  std::vector<double> flat = {0.5, 0.5, 0.5};
  auto undef = make_report("test", 0, flat, t);
  CHECK(!undef.r_value.has_value());
  CHECK(undef.csv_row().find(",undefined,") != std::string::npos);
}

TEST_CASE("evaluate: zero params give constant predictions with oracle rmse") {
  NetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 4;
  auto params = init_params<float>(cfg, 31);
  // zero everything: prediction is exactly the head bias (0)
  for (auto& arr : params.arrays) arr.values.setZero();

  SynthOptions synth;
  synth.size = 16;
  auto samples = generate_synthetic(8, 41, synth);
  auto rep = evaluate(cfg, params, samples, "val", 3);
  CHECK(rep.n == 8);
  CHECK(!rep.r_value.has_value());  // constant predictions
  double acc = 0.0;
  for (const auto& s : samples) acc += (*s.label) * (*s.label);
  CHECK(rep.mse == doctest::Approx(acc / 8).epsilon(1e-9));
  CHECK(rep.rmse == doctest::Approx(std::sqrt(acc / 8)).epsilon(1e-9));

  // idempotent: same inputs, identical report
  auto rep2 = evaluate(cfg, params, samples, "val", 3);
  CHECK(rep2.csv_row() == rep.csv_row());
}

TEST_CASE("evaluate rejects unlabeled samples") {
  NetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 4;
  auto params = init_params<float>(cfg, 32);
  SynthOptions synth;
  synth.size = 16;
  auto samples = generate_synthetic(3, 42, synth);
  samples[1].label.reset();
  CHECK_THROWS_AS(evaluate(cfg, params, samples, "val", 0), DataError);
}

TEST_CASE("calibrate_output: affine head correction is optimal on the fitting split") {
  NetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 4;
  auto params = init_params<float>(cfg, 77);
  SynthOptions synth;
  synth.size = 16;
  auto samples = generate_synthetic(24, 51, synth);

  const auto before = evaluate(cfg, params, samples, "val", 0);
  const auto cal = calibrate_output(cfg, params, samples);
  const auto after = evaluate(cfg, cal, samples, "val", 0);

  // never worse than uncalibrated on the split it was fitted on
  CHECK(after.mse <= before.mse + 1e-9);
  // correlation is invariant under a positive affine map and |R| under any
  if (before.r_value.has_value()) {
    REQUIRE(after.r_value.has_value());
    CHECK(std::abs(*after.r_value) == doctest::Approx(std::abs(*before.r_value)).epsilon(1e-6));
  }
  // residuals are centred: mean prediction equals mean label after the fit
  double mp = 0, my = 0;
  for (const auto& s : samples) {
    mp += predict(cfg, cal, s.image);
    my += *s.label;
  }
  CHECK(mp / samples.size() == doctest::Approx(my / samples.size()).epsilon(1e-4));
}

TEST_CASE("calibrate_output: constant predictions are left unchanged") {
  NetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 4;
  auto params = init_params<float>(cfg, 78);
  for (auto& arr : params.arrays) arr.values.setZero();
  SynthOptions synth;
  synth.size = 16;
  auto samples = generate_synthetic(6, 52, synth);
  const auto cal = calibrate_output(cfg, params, samples);
  for (std::size_t i = 0; i < params.arrays.size(); ++i)
    CHECK((cal.arrays[i].values == params.arrays[i].values).all());
  CHECK_THROWS_AS(calibrate_output(cfg, params, {}), ConfigError);
}

TEST_CASE("generate_pseudo_labels agrees with predict, keyed by id") {
  NetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 4;
  auto params = init_params<float>(cfg, 33);
  SynthOptions synth;
  synth.size = 16;
  auto samples = generate_synthetic(5, 43, synth);
  auto pl = generate_pseudo_labels(cfg, params, samples);
  REQUIRE(pl.size() == 5);
  for (const auto& s : samples) {
    REQUIRE(pl.count(s.id) == 1);
    CHECK(pl.at(s.id) == predict(cfg, params, s.image));
  }
}
