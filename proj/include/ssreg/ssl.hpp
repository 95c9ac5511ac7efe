#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssreg/data.hpp"
#include "ssreg/evaluate.hpp"
#include "ssreg/metrics.hpp"
#include "ssreg/net.hpp"

namespace ssreg {

struct StrategyConfig {
  double lambda_triplet = 0.5;
  double lambda_consistency = 1.0;
  double margin = 0.5;
  bool adaptive_triplet = true;
  double te_decay = 0.6;   // temporal ensembling prediction EMA
  double mt_decay = 0.99;  // mean teacher weight EMA
  double lr_pretrain = 1e-4;
  double lr_finetune = 1e-5;
  double weight_decay = 4e-4;
  int batch_size = 16;
  int pretrain_epochs = 200;
  int finetune_epochs = 100;
  bool triplet_on_pseudo = true;  // include pseudo-labeled items in triplet mining
  bool warm_start_gate = false;   // seed the gate from the pre-trained model

  void validate() const;
};

// Pseudo-label regeneration gate: regenerate iff R improved AND MSE improved,
// strict inequalities, starting from (0, +inf). Undefined R never improves.
struct ImprovementGate {
  double best_r = 0.0;
  double best_mse = std::numeric_limits<double>::infinity();

  bool offer(std::optional<double> r, double mse_value) {
    if (!r.has_value()) return false;
    if (*r > best_r && mse_value < best_mse) {
      best_r = *r;
      best_mse = mse_value;
      return true;
    }
    return false;
  }
};

struct TrainerState {
  int epoch = 0;
  int total_epochs = 0;
  ImprovementGate gate;
  std::map<std::string, double> pseudo_labels;
  std::vector<int> regeneration_epochs;
};

struct EpochLog {
  int epoch = 0;
  std::string strategy;
  double train_loss = 0.0;
  std::optional<double> val_r;
  double val_rmse = 0.0;
  double val_mse = 0.0;
  bool regenerated = false;

  static std::string csv_header() {
    return "epoch,strategy,train_loss,val_r,val_rmse,val_mse,regenerated";
  }
  std::string csv_row() const;
};

struct TrainResult {
  ParamStore<float> params;  // checkpoint of the best validation-R epoch
  std::vector<EpochLog> log;
  TrainerState state;
  MetricsReport best_val;
};

// Supervised pre-training with L = mse + lambda * triplet; lr drops to
// lr_finetune at the halfway epoch; returns the best validation-R epoch.
TrainResult pretrain(const NetConfig& net_cfg, const std::vector<Sample>& labeled,
                     const std::vector<Sample>& validation, const StrategyConfig& cfg,
                     const AugmentConfig& aug, std::uint64_t seed);

// Validation-gated self-training: evaluate, regenerate pseudo-labels when the
// gate fires, then fine-tune one epoch on labeled + pseudo-labeled data with
// two augmented views and the consistency loss.
TrainResult self_train(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                       const std::vector<Sample>& labeled,
                       const std::vector<Sample>& unlabeled,
                       const std::vector<Sample>& validation, const StrategyConfig& cfg,
                       const AugmentConfig& aug, std::uint64_t seed);

// Pseudo-labels generated once from the pre-trained model, never refreshed,
// no consistency loss.
TrainResult naive_ssl(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                      const std::vector<Sample>& labeled,
                      const std::vector<Sample>& unlabeled,
                      const std::vector<Sample>& validation, const StrategyConfig& cfg,
                      const AugmentConfig& aug, std::uint64_t seed);

// Output consistency between two augmented views; no pseudo-labels.
TrainResult pi_model(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                     const std::vector<Sample>& labeled,
                     const std::vector<Sample>& unlabeled,
                     const std::vector<Sample>& validation, const StrategyConfig& cfg,
                     const AugmentConfig& aug, std::uint64_t seed);

// Per-sample prediction EMA (bias-corrected) as pseudo-label targets.
TrainResult temporal_ensembling(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                                const std::vector<Sample>& labeled,
                                const std::vector<Sample>& unlabeled,
                                const std::vector<Sample>& validation,
                                const StrategyConfig& cfg, const AugmentConfig& aug,
                                std::uint64_t seed);

// Teacher = per-step weight EMA of the student; unlabeled targets come from
// the teacher. Returns the student.
TrainResult mean_teacher(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                         const std::vector<Sample>& labeled,
                         const std::vector<Sample>& unlabeled,
                         const std::vector<Sample>& validation, const StrategyConfig& cfg,
                         const AugmentConfig& aug, std::uint64_t seed);

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace ssreg
