#include "ssreg/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "ssreg/adam.hpp"
#include "ssreg/losses.hpp"

namespace ssreg {

void StrategyConfig::validate() const {
  if (lambda_triplet < 0 || lambda_consistency < 0)
    throw ConfigError("StrategyConfig: loss weights must be nonnegative");
  if (margin <= 0) throw ConfigError("StrategyConfig: margin must be positive");
  if (te_decay <= 0 || te_decay >= 1 || mt_decay <= 0 || mt_decay >= 1)
    throw ConfigError("StrategyConfig: EMA decay must be in (0,1)");
  if (batch_size < 1) throw ConfigError("StrategyConfig: batch size must be positive");
  if (pretrain_epochs < 0 || finetune_epochs < 0)
    throw ConfigError("StrategyConfig: epoch counts must be nonnegative");
  if (lr_pretrain <= 0 || lr_finetune <= 0)
    throw ConfigError("StrategyConfig: learning rates must be positive");
}

std::string EpochLog::csv_row() const {
  std::string r = std::to_string(epoch) + "," + strategy + "," + format_double(train_loss) + ",";
  r += val_r ? format_double(*val_r) : "undefined";
  r += "," + format_double(val_rmse) + "," + format_double(val_mse) + ",";
  r += regenerated ? "true" : "false";
  return r;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("write_training_log: cannot open " + path.string());
  f << EpochLog::csv_header() << "\n";
  for (const auto& row : log) f << row.csv_row() << "\n";
}

namespace {

struct Item {
  const Sample* sample = nullptr;
  double target = 0.0;
  bool pseudo = false;
};

void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);
}

// Keeps the checkpoint of the strictly best validation R seen so far.
struct BestTracker {
  std::optional<double> best_r;
  ParamStore<float> params;
  MetricsReport report;

  void offer(const MetricsReport& rep, const ParamStore<float>& p) {
    if (!rep.r_value) return;
    if (!best_r || *rep.r_value > *best_r) {
      best_r = rep.r_value;
      params = p;
      report = rep;
    }
  }

  TrainResult finish(const ParamStore<float>& fallback) const {
    TrainResult r;
    r.params = best_r ? params : fallback;
    r.best_val = report;
    return r;
  }
};

void check_batch_finite(double value, const char* strategy, int epoch, std::size_t batch) {
  if (!std::isfinite(value))
    throw NumericError(std::string(strategy) + ": non-finite loss at epoch " +
                       std::to_string(epoch) + ", batch " + std::to_string(batch));
}

std::vector<Item> labeled_items(const std::vector<Sample>& labeled) {
  std::vector<Item> items;
  items.reserve(labeled.size());
  for (const auto& s : labeled) items.push_back({&s, s.label.value(), false});
  return items;
}

// One epoch of single-view training with L = mse + lambda * triplet.
double supervised_epoch(const NetConfig& net_cfg, const std::vector<Item>& items,
                        ParamStore<float>& params, AdamState<float>& adam,
                        const AugmentConfig& aug, const StrategyConfig& cfg, Rng& shuffle_rng,
                        Rng& aug_rng, Rng& mine_rng, bool use_triplet, const char* strategy,
                        int epoch, bool* warned_small_batch) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, shuffle_rng);

  double loss_sum = 0.0;
  std::size_t n_batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const int bs = static_cast<int>(end - start);

    std::vector<ForwardOutput<float>> outs(bs);
    std::vector<VectorX<float>> embeds(bs);
    std::vector<float> preds(bs);
    std::vector<double> targets(bs);
    for (int i = 0; i < bs; ++i) {
      const Item& it = items[order[start + i]];
      outs[i] = forward(net_cfg, params, augment(it.sample->image, aug, aug_rng));
      embeds[i] = outs[i].embedding;
      preds[i] = outs[i].prediction;
      targets[i] = it.target;
    }

    const float lambda = use_triplet ? static_cast<float>(cfg.lambda_triplet) : 0.0f;
    auto batch = total_loss<float>(embeds, preds, targets, LossMode::kPretrain, lambda,
                                   static_cast<float>(cfg.margin), cfg.adaptive_triplet,
                                   mine_rng);
    if (batch.triplets_skipped && warned_small_batch && !*warned_small_batch) {
      std::cerr << "notice: batch of " << bs << " < 3, triplet loss skipped\n";
      *warned_small_batch = true;
    }
    check_batch_finite(batch.value, strategy, epoch, n_batches);

    ParamStore<float> grads = params.zeros_like();
    for (int i = 0; i < bs; ++i) {
      auto g = backward(net_cfg, params, outs[i].tape, batch.d_embed1[i], batch.d_pred1[i]);
      for (std::size_t a = 0; a < grads.arrays.size(); ++a)
        grads.arrays[a].values += g.arrays[a].values;
    }
    adam_step(params, grads, adam);
    loss_sum += batch.value;
    ++n_batches;
  }
  return n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
}

struct Streams {
  Rng shuffle;
  Rng aug;
  Rng mine;

  explicit Streams(std::uint64_t seed)
      : shuffle(derive_seed(seed, "shuffle")),
        aug(derive_seed(seed, "augment")),
        mine(derive_seed(seed, "mining")) {}
};

}  // namespace

TrainResult pretrain(const NetConfig& net_cfg, const std::vector<Sample>& labeled,
                     const std::vector<Sample>& validation, const StrategyConfig& cfg,
                     const AugmentConfig& aug, std::uint64_t seed) {
  cfg.validate();
  if (labeled.empty()) throw ConfigError("pretrain: no labeled samples");

  ParamStore<float> params = init_params<float>(net_cfg, derive_seed(seed, "init"));
  AdamState<float> adam = AdamState<float>::init(params, cfg.lr_pretrain, cfg.weight_decay);
  Streams streams(seed);
  const std::vector<Item> items = labeled_items(labeled);

  BestTracker best;
  std::vector<EpochLog> log;
  bool warned = false;
  for (int e = 0; e < cfg.pretrain_epochs; ++e) {
    adam.lr = e < cfg.pretrain_epochs / 2 ? cfg.lr_pretrain : cfg.lr_finetune;
    const double train_loss =
        supervised_epoch(net_cfg, items, params, adam, aug, cfg, streams.shuffle, streams.aug,
                         streams.mine, cfg.lambda_triplet > 0, "pretrain", e, &warned);
    const MetricsReport rep = evaluate(net_cfg, params, validation, "validation", e);
    best.offer(rep, params);
    log.push_back({e, "pretrain", train_loss, rep.r_value, rep.rmse, rep.mse, false});
  }

  TrainResult result = best.finish(params);
  result.log = std::move(log);
  return result;
}

TrainResult self_train(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                       const std::vector<Sample>& labeled,
                       const std::vector<Sample>& unlabeled,
                       const std::vector<Sample>& validation, const StrategyConfig& cfg,
                       const AugmentConfig& aug, std::uint64_t seed) {
  cfg.validate();
  if (labeled.empty()) throw ConfigError("self_train: no labeled samples");

  ParamStore<float> params = pretrained;
  AdamState<float> adam = AdamState<float>::init(params, cfg.lr_finetune, cfg.weight_decay);
  Streams streams(seed);

  TrainerState state;
  state.total_epochs = cfg.finetune_epochs;
  if (cfg.warm_start_gate) {
    const MetricsReport rep0 = evaluate(net_cfg, params, validation, "validation", -1);
    if (rep0.r_value) state.gate.best_r = *rep0.r_value;
    state.gate.best_mse = rep0.mse;
  }

  BestTracker best;
  std::vector<EpochLog> log;
  bool warned = false;

  for (int e = 0; e < cfg.finetune_epochs; ++e) {
    state.epoch = e;
    const MetricsReport rep = evaluate(net_cfg, params, validation, "validation", e);
    best.offer(rep, params);
    const bool regen = state.gate.offer(rep.r_value, rep.mse);
    if (regen) {
      state.pseudo_labels = generate_pseudo_labels(net_cfg, params, unlabeled);
      state.regeneration_epochs.push_back(e);
    }

    std::vector<Item> items = labeled_items(labeled);
    for (const auto& s : unlabeled) {
      auto it = state.pseudo_labels.find(s.id);
      if (it != state.pseudo_labels.end()) items.push_back({&s, it->second, true});
    }

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, streams.shuffle);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const int bs = static_cast<int>(end - start);

      std::vector<ForwardOutput<float>> outs1(bs), outs2(bs);
      std::vector<VectorX<float>> embeds1(bs), embeds2(bs);
      std::vector<float> preds1(bs), preds2(bs);
      std::vector<double> targets(bs);
      std::vector<int> labeled_pool;
      for (int i = 0; i < bs; ++i) {
        const Item& it = items[order[start + i]];
        auto [v1, v2] = two_views(*it.sample, aug, streams.aug);
        outs1[i] = forward(net_cfg, params, v1);
        outs2[i] = forward(net_cfg, params, v2);
        embeds1[i] = outs1[i].embedding;
        embeds2[i] = outs2[i].embedding;
        preds1[i] = outs1[i].prediction;
        preds2[i] = outs2[i].prediction;
        targets[i] = it.target;
        if (!it.pseudo) labeled_pool.push_back(i);
      }

      auto batch = total_loss<float>(
          embeds1, preds1, targets, LossMode::kSelfTrain,
          static_cast<float>(cfg.lambda_triplet), static_cast<float>(cfg.margin),
          cfg.adaptive_triplet, streams.mine, &embeds2, &preds2,
          static_cast<float>(cfg.lambda_consistency),
          cfg.triplet_on_pseudo ? nullptr : &labeled_pool);
      if (batch.triplets_skipped && !warned) {
        std::cerr << "notice: triplet pool < 3 in a batch, triplet loss skipped\n";
        warned = true;
      }
      check_batch_finite(batch.value, "self_train", e, n_batches);

      ParamStore<float> grads = params.zeros_like();
      for (int i = 0; i < bs; ++i) {
        auto g1 = backward(net_cfg, params, outs1[i].tape, batch.d_embed1[i], batch.d_pred1[i]);
        auto g2 = backward(net_cfg, params, outs2[i].tape, batch.d_embed2[i], batch.d_pred2[i]);
        for (std::size_t a = 0; a < grads.arrays.size(); ++a)
          grads.arrays[a].values += g1.arrays[a].values + g2.arrays[a].values;
      }
      adam_step(params, grads, adam);
      loss_sum += batch.value;
      ++n_batches;
    }

    log.push_back({e, "self_train", n_batches ? loss_sum / n_batches : 0.0, rep.r_value,
                   rep.rmse, rep.mse, regen});
  }

  const MetricsReport final_rep =
      evaluate(net_cfg, params, validation, "validation", cfg.finetune_epochs);
  best.offer(final_rep, params);

  TrainResult result = best.finish(params);
  result.log = std::move(log);
  result.state = std::move(state);
  return result;
}

TrainResult naive_ssl(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                      const std::vector<Sample>& labeled,
                      const std::vector<Sample>& unlabeled,
                      const std::vector<Sample>& validation, const StrategyConfig& cfg,
                      const AugmentConfig& aug, std::uint64_t seed) {
  cfg.validate();
  ParamStore<float> params = pretrained;
  AdamState<float> adam = AdamState<float>::init(params, cfg.lr_finetune, cfg.weight_decay);
  Streams streams(seed);

  TrainerState state;
  state.total_epochs = cfg.finetune_epochs;
  state.pseudo_labels = generate_pseudo_labels(net_cfg, pretrained, unlabeled);
  if (!unlabeled.empty()) state.regeneration_epochs.push_back(0);

  std::vector<Item> items = labeled_items(labeled);
  for (const auto& s : unlabeled) items.push_back({&s, state.pseudo_labels.at(s.id), true});

  BestTracker best;
  std::vector<EpochLog> log;
  bool warned = false;
  for (int e = 0; e < cfg.finetune_epochs; ++e) {
    state.epoch = e;
    const double train_loss =
        supervised_epoch(net_cfg, items, params, adam, aug, cfg, streams.shuffle, streams.aug,
                         streams.mine, cfg.lambda_triplet > 0, "naive_ssl", e, &warned);
    const MetricsReport rep = evaluate(net_cfg, params, validation, "validation", e);
    best.offer(rep, params);
    log.push_back({e, "ssl", train_loss, rep.r_value, rep.rmse, rep.mse, e == 0});
  }

  TrainResult result = best.finish(params);
  result.log = std::move(log);
  result.state = std::move(state);
  return result;
}

TrainResult pi_model(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                     const std::vector<Sample>& labeled,
                     const std::vector<Sample>& unlabeled,
                     const std::vector<Sample>& validation, const StrategyConfig& cfg,
                     const AugmentConfig& aug, std::uint64_t seed) {
  cfg.validate();
  ParamStore<float> params = pretrained;
  AdamState<float> adam = AdamState<float>::init(params, cfg.lr_finetune, cfg.weight_decay);
  Streams streams(seed);

  std::vector<Item> items = labeled_items(labeled);
  for (const auto& s : unlabeled) items.push_back({&s, 0.0, true});

  BestTracker best;
  std::vector<EpochLog> log;
  for (int e = 0; e < cfg.finetune_epochs; ++e) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, streams.shuffle);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const int bs = static_cast<int>(end - start);

      std::vector<ForwardOutput<float>> outs1(bs), outs2(bs);
      std::vector<const Item*> batch_items(bs);
      int n_labeled = 0;
      for (int i = 0; i < bs; ++i) {
        batch_items[i] = &items[order[start + i]];
        auto [v1, v2] = two_views(*batch_items[i]->sample, aug, streams.aug);
        outs1[i] = forward(net_cfg, params, v1);
        outs2[i] = forward(net_cfg, params, v2);
        if (!batch_items[i]->pseudo) ++n_labeled;
      }

      // mean MSE over labeled items + lambda_c * mean output consistency
      double value = 0.0;
      std::vector<float> d_pred1(bs, 0.0f), d_pred2(bs, 0.0f);
      const double lc = cfg.lambda_consistency;
      for (int i = 0; i < bs; ++i) {
        if (!batch_items[i]->pseudo && n_labeled > 0) {
          const double diff = outs1[i].prediction - batch_items[i]->target;
          value += diff * diff / n_labeled;
          d_pred1[i] += static_cast<float>(2.0 * diff / n_labeled);
        }
        const double dc = outs1[i].prediction - outs2[i].prediction;
        value += lc * dc * dc / bs;
        d_pred1[i] += static_cast<float>(lc * 2.0 * dc / bs);
        d_pred2[i] -= static_cast<float>(lc * 2.0 * dc / bs);
      }
      check_batch_finite(value, "pi_model", e, n_batches);

      const VectorX<float> zero_embed = VectorX<float>::Zero(net_cfg.embed_dim());
      ParamStore<float> grads = params.zeros_like();
      for (int i = 0; i < bs; ++i) {
        auto g1 = backward(net_cfg, params, outs1[i].tape, zero_embed, d_pred1[i]);
        for (std::size_t a = 0; a < grads.arrays.size(); ++a)
          grads.arrays[a].values += g1.arrays[a].values;
        if (d_pred2[i] != 0.0f) {
          auto g2 = backward(net_cfg, params, outs2[i].tape, zero_embed, d_pred2[i]);
          for (std::size_t a = 0; a < grads.arrays.size(); ++a)
            grads.arrays[a].values += g2.arrays[a].values;
        }
      }
      adam_step(params, grads, adam);
      loss_sum += value;
      ++n_batches;
    }

    const MetricsReport rep = evaluate(net_cfg, params, validation, "validation", e);
    best.offer(rep, params);
    log.push_back({e, "pi_model", n_batches ? loss_sum / n_batches : 0.0, rep.r_value,
                   rep.rmse, rep.mse, false});
  }

  TrainResult result = best.finish(params);
  result.log = std::move(log);
  return result;
}

TrainResult temporal_ensembling(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                                const std::vector<Sample>& labeled,
                                const std::vector<Sample>& unlabeled,
                                const std::vector<Sample>& validation,
                                const StrategyConfig& cfg, const AugmentConfig& aug,
                                std::uint64_t seed) {
  cfg.validate();
  ParamStore<float> params = pretrained;
  AdamState<float> adam = AdamState<float>::init(params, cfg.lr_finetune, cfg.weight_decay);
  Streams streams(seed);
  const double beta = cfg.te_decay;

  // prediction EMA per unlabeled sample, bias-corrected when read
  std::map<std::string, double> ema;
  std::map<std::string, long> ema_steps;
  auto ema_update = [&]() {
    for (const auto& s : unlabeled) {
      const double z = predict(net_cfg, params, s.image);
      ema[s.id] = beta * ema[s.id] + (1.0 - beta) * z;
      ema_steps[s.id] += 1;
    }
  };
  ema_update();  // seed from the pre-trained model

  BestTracker best;
  std::vector<EpochLog> log;
  bool warned = false;
  for (int e = 0; e < cfg.finetune_epochs; ++e) {
    std::vector<Item> items = labeled_items(labeled);
    for (const auto& s : unlabeled) {
      const double corrected = ema.at(s.id) / (1.0 - std::pow(beta, ema_steps.at(s.id)));
      items.push_back({&s, corrected, true});
    }
    const double train_loss =
        supervised_epoch(net_cfg, items, params, adam, aug, cfg, streams.shuffle, streams.aug,
                         streams.mine, /*use_triplet=*/false, "temporal_ensembling", e, &warned);
    ema_update();
    const MetricsReport rep = evaluate(net_cfg, params, validation, "validation", e);
    best.offer(rep, params);
    log.push_back({e, "temporal_ensembling", train_loss, rep.r_value, rep.rmse, rep.mse, false});
  }

  TrainResult result = best.finish(params);
  result.log = std::move(log);
  return result;
}

TrainResult mean_teacher(const NetConfig& net_cfg, const ParamStore<float>& pretrained,
                         const std::vector<Sample>& labeled,
                         const std::vector<Sample>& unlabeled,
                         const std::vector<Sample>& validation, const StrategyConfig& cfg,
                         const AugmentConfig& aug, std::uint64_t seed) {
  cfg.validate();
  ParamStore<float> student = pretrained;
  ParamStore<float> teacher = pretrained;
  AdamState<float> adam = AdamState<float>::init(student, cfg.lr_finetune, cfg.weight_decay);
  Streams streams(seed);
  const float beta = static_cast<float>(cfg.mt_decay);

  std::vector<Item> items = labeled_items(labeled);
  for (const auto& s : unlabeled) items.push_back({&s, 0.0, true});

  BestTracker best;
  std::vector<EpochLog> log;
  for (int e = 0; e < cfg.finetune_epochs; ++e) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, streams.shuffle);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const int bs = static_cast<int>(end - start);

      std::vector<ForwardOutput<float>> outs(bs);
      std::vector<double> targets(bs);
      for (int i = 0; i < bs; ++i) {
        const Item& it = items[order[start + i]];
        const Image view = augment(it.sample->image, aug, streams.aug);
        outs[i] = forward(net_cfg, student, view);
        targets[i] = it.pseudo ? static_cast<double>(forward(net_cfg, teacher, view).prediction)
                               : it.target;
      }

      double value = 0.0;
      const VectorX<float> zero_embed = VectorX<float>::Zero(net_cfg.embed_dim());
      ParamStore<float> grads = student.zeros_like();
      for (int i = 0; i < bs; ++i) {
        const double diff = outs[i].prediction - targets[i];
        value += diff * diff / bs;
        auto g = backward(net_cfg, student, outs[i].tape, zero_embed,
                          static_cast<float>(2.0 * diff / bs));
        for (std::size_t a = 0; a < grads.arrays.size(); ++a)
          grads.arrays[a].values += g.arrays[a].values;
      }
      check_batch_finite(value, "mean_teacher", e, n_batches);
      adam_step(student, grads, adam);
      for (std::size_t a = 0; a < teacher.arrays.size(); ++a)
        teacher.arrays[a].values =
            beta * teacher.arrays[a].values + (1.0f - beta) * student.arrays[a].values;
      loss_sum += value;
      ++n_batches;
    }

    const MetricsReport rep = evaluate(net_cfg, student, validation, "validation", e);
    best.offer(rep, student);
    log.push_back({e, "mean_teacher", n_batches ? loss_sum / n_batches : 0.0, rep.r_value,
                   rep.rmse, rep.mse, false});
  }

  TrainResult result = best.finish(student);
  result.log = std::move(log);
  return result;
}

}  // namespace ssreg
