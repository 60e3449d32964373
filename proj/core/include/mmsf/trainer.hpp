#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmsf/config.hpp"
#include "mmsf/datagen.hpp"
#include "mmsf/io.hpp"
#include "mmsf/param_store.hpp"

namespace mmsf::train {

// Linear warmup to base over warmup_epochs, then step decay by gamma every
// step_size epochs, floored at min_lr.
inline double lr_at(int epoch, const io::TrainerConfig& cfg) {
  if (epoch < 0) throw ConfigError("lr_at: negative epoch");
  if (epoch < cfg.warmup_epochs)
    return cfg.base_lr * double(epoch + 1) / double(cfg.warmup_epochs);
  int decays = (epoch - cfg.warmup_epochs) / cfg.step_size;
  return std::max(cfg.min_lr, cfg.base_lr * std::pow(cfg.gamma, double(decays)));
}

// Classic Adam with bias correction. Weight decay is the L2-in-gradient form
// (g += wd * theta), not decoupled.
template <class T>
void adam_step(num::ParameterStore<T>& store, double lr, double beta1, double beta2,
               double eps, double weight_decay) {
  store.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(store.step));
  const double bc2 = 1.0 - std::pow(beta2, double(store.step));
  for (auto& e : store.entries()) {
    for (size_t i = 0; i < e.value.size(); ++i) {
      double g = double(e.grad.data[i]) + weight_decay * double(e.value.data[i]);
      double m = beta1 * double(e.m.data[i]) + (1.0 - beta1) * g;
      double v = beta2 * double(e.v.data[i]) + (1.0 - beta2) * g * g;
      e.m.data[i] = T(m);
      e.v.data[i] = T(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      e.value.data[i] = T(double(e.value.data[i]) - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// Deterministic shuffle keyed by seed; first ceil(fraction * n) ids train.
template <class Id>
std::pair<std::vector<Id>, std::vector<Id>> split_dataset(const std::vector<Id>& ids,
                                                          uint64_t seed, double fraction) {
  if (ids.size() < 2) throw DataError("split_dataset: need >= 2 ids");
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("split_dataset: fraction must be in (0,1)");
  std::vector<Id> shuffled = ids;
  Rng rng = Rng(seed).fork(0x5917);
  rng.shuffle(shuffled);
  size_t n_train = size_t(std::ceil(fraction * double(ids.size())));
  if (n_train >= ids.size()) n_train = ids.size() - 1;
  std::vector<Id> train(shuffled.begin(), shuffled.begin() + ptrdiff_t(n_train));
  std::vector<Id> val(shuffled.begin() + ptrdiff_t(n_train), shuffled.end());
  return {train, val};
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainResult {
  io::Checkpoint best;
  std::vector<EpochRecord> history;
  double best_metric = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  std::string metric_name;
};

std::string history_csv(const TrainResult& r);

// Per-bag forward / loss / backward / Adam step; validation accuracy and AUC
// each epoch; early stopping on validation AUC; best-epoch snapshot returned.
TrainResult train_classification(const data::ClassificationData& dataset,
                                 const io::RunConfig& cfg);

// Epoch-accumulated Cox training: all training risks are collected, the
// partial likelihood is applied once per epoch, and gradients flow back via a
// per-patient replay pass; one optimizer step per epoch. Early stopping on
// validation C-index.
TrainResult train_survival(const data::SurvivalData& dataset, const io::RunConfig& cfg);

// Shared eval paths (also used by the CLI).
struct ClassificationEval {
  double acc = 0.0;
  double auc = 0.0;
  std::vector<double> probs;  // 1/2 sigma(bag logit) + 1/2 sigma(max instance logit)
  std::vector<int> labels;
};
ClassificationEval eval_classification(const io::Checkpoint& ck,
                                       const data::ClassificationData& dataset,
                                       const std::vector<size_t>& indices);

struct SurvivalEval {
  double c_index = 0.0;
  std::vector<double> risks;
  std::vector<objectives::SurvivalLabel> labels;
};
SurvivalEval eval_survival(const io::Checkpoint& ck, const data::SurvivalData& dataset,
                           const std::vector<size_t>& indices);

// The 80/20 split of a dataset's index range under the run seed.
std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n,
                                                                  const io::RunConfig& cfg);

}  // namespace mmsf::train
