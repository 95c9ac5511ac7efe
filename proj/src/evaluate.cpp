#include "ssreg/evaluate.hpp"

#include <algorithm>
#include <numeric>

namespace ssreg {

double predict(const NetConfig& cfg, const ParamStore<float>& params, const Image& image) {
  return static_cast<double>(forward(cfg, params, image).prediction);
}

MetricsReport evaluate(const NetConfig& cfg, const ParamStore<float>& params,
                       const std::vector<Sample>& split, const std::string& split_name,
                       int epoch) {
  if (split.empty()) throw ConfigError("evaluate: empty split");
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return split[a].id < split[b].id; });

  std::vector<double> preds, truths;
  preds.reserve(split.size());
  truths.reserve(split.size());
  for (std::size_t i : order) {
    const Sample& s = split[i];
    if (!s.is_labeled())
      throw DataError("evaluate: unlabeled sample '" + s.id + "' in evaluation split");
    preds.push_back(predict(cfg, params, s.image));
    truths.push_back(*s.label);
  }
  return make_report(split_name, epoch, preds, truths);
}

ParamStore<float> calibrate_output(const NetConfig& cfg, const ParamStore<float>& params,
                                   const std::vector<Sample>& split) {
  if (split.empty()) throw ConfigError("calibrate_output: empty split");
  double sp = 0, sy = 0, spp = 0, spy = 0;
  for (const auto& s : split) {
    if (!s.is_labeled())
      throw DataError("calibrate_output: unlabeled sample '" + s.id + "'");
    const double p = predict(cfg, params, s.image);
    const double y = *s.label;
    sp += p;
    sy += y;
    spp += p * p;
    spy += p * y;
  }
  const double n = static_cast<double>(split.size());
  const double var_p = spp / n - (sp / n) * (sp / n);
  if (!(var_p > 1e-12)) return params;
  const double a = (spy / n - (sp / n) * (sy / n)) / var_p;
  const double b = sy / n - a * (sp / n);
  ParamStore<float> out = params;
  auto& hw = out.arrays[4].values;
  auto& hb = out.arrays[5].values;
  hw *= static_cast<float>(a);
  hb[0] = static_cast<float>(a * static_cast<double>(params.arrays[5].values[0]) + b);
  return out;
}

std::map<std::string, double> generate_pseudo_labels(const NetConfig& cfg,
                                                     const ParamStore<float>& params,
                                                     const std::vector<Sample>& unlabeled) {
  std::map<std::string, double> out;
  for (const auto& s : unlabeled) out[s.id] = predict(cfg, params, s.image);
  return out;
}

}  // namespace ssreg
