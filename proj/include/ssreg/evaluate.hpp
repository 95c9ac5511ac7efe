#pragma once

#include <map>
#include <string>
#include <vector>

#include "ssreg/data.hpp"
#include "ssreg/metrics.hpp"
#include "ssreg/net.hpp"

namespace ssreg {

// Deterministic single forward on the un-augmented image.
double predict(const NetConfig& cfg, const ParamStore<float>& params, const Image& image);

// Runs forward on every sample (no augmentation, id order) and aggregates
// R-value / RMSE / MSE with 64-bit accumulation. Requires labels.
MetricsReport evaluate(const NetConfig& cfg, const ParamStore<float>& params,
                       const std::vector<Sample>& split, const std::string& split_name,
                       int epoch);

// Least-squares affine correction of the scalar output, fitted on a labeled
// split and folded into the linear head (weights *= a, bias = a*bias + b).
// The fixed lr schedule moves each head parameter by at most lr x steps, far
// less than the O(1) output-scale error at initialisation, so trained models
// end with systematically compressed predictions; the affine fit restores the
// output scale without touching the learned representation. Leaves the
// parameters unchanged when the predictions have (near-)zero variance.
ParamStore<float> calibrate_output(const NetConfig& cfg, const ParamStore<float>& params,
                                   const std::vector<Sample>& split);

// Pseudo-labels from un-augmented forward passes, keyed by sample id.
std::map<std::string, double> generate_pseudo_labels(const NetConfig& cfg,
                                                     const ParamStore<float>& params,
                                                     const std::vector<Sample>& unlabeled);

}  // namespace ssreg
