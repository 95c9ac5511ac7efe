#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ssreg {

// R-value / RMSE / MSE on one split at one epoch. r_value is empty when the
// correlation is undefined (zero variance); gates treat that as "not better".
struct MetricsReport {
  std::string split;
  int epoch = 0;
  std::optional<double> r_value;
  double rmse = 0.0;
  double mse = 0.0;
  int n = 0;

  static std::string csv_header() { return "epoch,split,r_value,rmse,mse,n"; }
  std::string csv_row() const;
};

// Sample Pearson correlation, 64-bit accumulation. Empty optional when either
// vector has zero variance.
std::optional<double> pearson_r(std::span<const double> preds, std::span<const double> truths);

double mse(std::span<const double> preds, std::span<const double> truths);
double rmse(std::span<const double> preds, std::span<const double> truths);

MetricsReport make_report(const std::string& split, int epoch,
                          std::span<const double> preds, std::span<const double> truths);

std::string format_double(double v);

}  // namespace ssreg
