#include "ssreg/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "ssreg/common.hpp"

namespace ssreg {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::optional<double> pearson_r(std::span<const double> preds,
                                std::span<const double> truths) {
  if (preds.size() != truths.size())
    throw ConfigError("pearson_r: length mismatch");
  const std::size_t n = preds.size();
  if (n < 2) return std::nullopt;

  double mean_p = 0.0, mean_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_p += preds[i];
    mean_t += truths[i];
  }
  mean_p /= static_cast<double>(n);
  mean_t /= static_cast<double>(n);

  double spp = 0.0, stt = 0.0, spt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = preds[i] - mean_p;
    const double dt = truths[i] - mean_t;
    spp += dp * dp;
    stt += dt * dt;
    spt += dp * dt;
  }
  if (spp == 0.0 || stt == 0.0) return std::nullopt;
  return spt / std::sqrt(spp * stt);
}

double mse(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size()) throw ConfigError("mse: length mismatch");
  if (preds.empty()) throw ConfigError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - truths[i];
    acc += d * d;
  }
  return acc / static_cast<double>(preds.size());
}

double rmse(std::span<const double> preds, std::span<const double> truths) {
  return std::sqrt(mse(preds, truths));
}

MetricsReport make_report(const std::string& split, int epoch,
                          std::span<const double> preds,
                          std::span<const double> truths) {
  MetricsReport r;
  r.split = split;
  r.epoch = epoch;
  r.n = static_cast<int>(preds.size());
  r.mse = mse(preds, truths);
  r.rmse = std::sqrt(r.mse);
  r.r_value = preds.size() >= 2 ? pearson_r(preds, truths) : std::nullopt;
  return r;
}

std::string MetricsReport::csv_row() const {
  std::string r = std::to_string(epoch) + "," + split + ",";
  r += r_value ? format_double(*r_value) : "undefined";
  r += "," + format_double(rmse) + "," + format_double(mse) + "," + std::to_string(n);
  return r;
}

}  // namespace ssreg
