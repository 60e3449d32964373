#include "mmsf/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "mmsf/metrics.hpp"
#include "mmsf/model.hpp"

namespace mmsf::train {

namespace {

using model::Ctx;
using model::Model;

std::vector<graph::SpatialGraph> build_graphs(const std::vector<graph::PatchBag>& bags,
                                              const io::RunConfig& cfg) {
  std::vector<graph::SpatialGraph> graphs;
  if (!cfg.graph.enabled) return graphs;
  graphs.reserve(bags.size());
  for (const auto& b : bags)
    graphs.push_back(graph::build_graph(b, cfg.graph.tau_spatial, cfg.graph.tau_tissue));
  return graphs;
}

Rng dropout_rng_for(uint64_t seed, int epoch, size_t sample) {
  return Rng(seed).fork(0xD809u + uint64_t(epoch)).fork(sample + 1);
}

// The trained objective scores a bag with the bag-level and max-pooled
// instance predictions at equal weight; classification uses the same score.
double bag_probability(ad::Tape<float>& tape, const model::BagForward<float>& fwd) {
  double bag = double(tape.val(fwd.bag_logit)(0, 0));
  double inst = double(tape.val(fwd.inst_logit_col)(0, 0));
  for (int i = 1; i < tape.val(fwd.inst_logit_col).rows; ++i)
    inst = std::max(inst, double(tape.val(fwd.inst_logit_col)(i, 0)));
  auto sigmoid = [](double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                              : std::exp(z) / (1.0 + std::exp(z)); };
  return 0.5 * sigmoid(bag) + 0.5 * sigmoid(inst);
}

double validation_metric_cls(const std::vector<double>& probs,
                             const std::vector<int>& labels) {
  // AUC is the early-stopping metric; tiny single-class validation splits
  // fall back to accuracy.
  try {
    return metrics::auc_roc(probs, labels);
  } catch (const DataError&) {
    std::vector<int> preds(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) preds[i] = probs[i] > 0.5 ? 1 : 0;
    return metrics::accuracy(preds, labels);
  }
}

}  // namespace

std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n,
                                                                  const io::RunConfig& cfg) {
  std::vector<size_t> ids(n);
  std::iota(ids.begin(), ids.end(), size_t(0));
  return split_dataset(ids, cfg.seed, cfg.trainer.split_fraction);
}

std::string history_csv(const TrainResult& r) {
  std::string out = "epoch,lr,train_loss,val_metric\n";
  for (const auto& e : r.history) {
    out += std::to_string(e.epoch) + "," + io::format_double(e.lr) + "," +
           io::format_double(e.train_loss) + "," + io::format_double(e.val_metric) + "\n";
  }
  return out;
}

TrainResult train_classification(const data::ClassificationData& dataset,
                                 const io::RunConfig& cfg) {
  if (dataset.bags.empty()) throw DataError("train_classification: empty dataset");
  auto [train_idx, val_idx] = split_indices(dataset.bags.size(), cfg);
  if (train_idx.empty()) throw DataError("train_classification: empty training set");

  auto graphs = build_graphs(dataset.bags, cfg);
  int patch_dim = dataset.bags[0].feature_dim();

  num::ParameterStore<float> store;
  clinical::ClinicalSchema schema;  // classification runs without clinical data
  Model<float> net(cfg, patch_dim, schema, store);

  TrainResult result;
  result.metric_name = "auc";
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.trainer.epochs; ++epoch) {
    double lr = lr_at(epoch, cfg.trainer);
    float l2 = float(objectives::l2_at(cfg.loss, epoch, cfg.trainer.epochs));
    std::vector<size_t> order = train_idx;
    Rng(cfg.seed).fork(0xE90Cu + uint64_t(epoch)).shuffle(order);

    double loss_sum = 0.0;
    for (size_t s : order) {
      ad::Tape<float> tape;
      Ctx<float> ctx(tape, store);
      Rng drop = dropout_rng_for(cfg.seed, epoch, s);
      auto fwd = net.forward(ctx, dataset.bags[s], graphs.empty() ? nullptr : &graphs[s],
                             nullptr, &drop);
      ad::Var task = objectives::classification_loss(tape, fwd.bag_logit, fwd.inst_logit_col,
                                                     float(dataset.labels[s]));
      ad::Var total = objectives::total_loss(tape, task, ad::Var{}, net.penalized_vars(ctx),
                                             float(cfg.loss.recon_weight), l2);
      loss_sum += double(tape.val(total)(0, 0));
      tape.backward(total);
      store.zero_grads();
      ctx.accumulate_grads();
      adam_step(store, lr, cfg.trainer.beta1, cfg.trainer.beta2, cfg.trainer.adam_eps,
                cfg.trainer.weight_decay);
    }

    // Validation pass (no dropout).
    std::vector<double> probs;
    std::vector<int> vlabels;
    for (size_t s : val_idx) {
      ad::Tape<float> tape;
      Ctx<float> ctx(tape, store);
      auto fwd = net.forward(ctx, dataset.bags[s], graphs.empty() ? nullptr : &graphs[s],
                             nullptr, nullptr);
      probs.push_back(bag_probability(tape, fwd));
      vlabels.push_back(dataset.labels[s]);
    }
    double metric = validation_metric_cls(probs, vlabels);

    result.history.push_back({epoch, lr, loss_sum / double(order.size()), metric});
    result.epochs_run = epoch + 1;
    bool improved = result.best_epoch < 0 || metric > result.best_metric;
    // ties refresh the snapshot: at equal validation AUC the longer-trained
    // model has the better-calibrated decision threshold
    if (improved || metric == result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best.config = cfg;
      result.best.schema = schema;
      result.best.store = store;
      result.best.best_metric = metric;
      result.best.best_epoch = epoch;
    }
    if (improved) {
      since_best = 0;
    } else if (++since_best >= cfg.trainer.patience) {
      break;
    }
  }
  return result;
}

TrainResult train_survival(const data::SurvivalData& dataset, const io::RunConfig& cfg) {
  if (dataset.bags.empty()) throw DataError("train_survival: empty dataset");
  auto [train_idx, val_idx] = split_indices(dataset.bags.size(), cfg);
  if (train_idx.empty()) throw DataError("train_survival: empty training set");
  {
    size_t events = 0;
    for (size_t s : train_idx) events += size_t(dataset.labels[s].event);
    if (events == 0) throw DataError("train_survival: no events in training split");
  }

  auto graphs = build_graphs(dataset.bags, cfg);
  int patch_dim = dataset.bags[0].feature_dim();

  // Schema fitted on the training split only; records encoded once.
  clinical::ClinicalSchema schema;
  std::vector<clinical::EncodedRecord> records(dataset.bags.size());
  if (cfg.clinical.enabled) {
    std::vector<std::vector<std::string>> train_rows;
    for (size_t s : train_idx) train_rows.push_back(dataset.clinical_rows[s]);
    schema = clinical::fit_schema(train_rows, dataset.fields, cfg.clinical.reserve_unknown);
    for (size_t s = 0; s < dataset.bags.size(); ++s)
      records[s] = clinical::encode_record(schema, dataset.clinical_rows[s]);
  }

  num::ParameterStore<float> store;
  Model<float> net(cfg, patch_dim, schema, store);

  TrainResult result;
  result.metric_name = "c_index";
  int since_best = 0;

  std::vector<objectives::SurvivalLabel> train_labels;
  for (size_t s : train_idx) train_labels.push_back(dataset.labels[s]);

  for (int epoch = 0; epoch < cfg.trainer.epochs; ++epoch) {
    double lr = lr_at(epoch, cfg.trainer);
    float l2 = float(objectives::l2_at(cfg.loss, epoch, cfg.trainer.epochs));

    // Pass 1: collect the epoch's risk vector (and reconstruction losses).
    // Dropout masks are keyed by (epoch, sample) so the replay pass below
    // rebuilds the identical forward.
    std::vector<double> risks;
    double recon_sum = 0.0;
    for (size_t s : train_idx) {
      ad::Tape<float> tape;
      Ctx<float> ctx(tape, store);
      Rng drop = dropout_rng_for(cfg.seed, epoch, s);
      auto fwd = net.forward(ctx, dataset.bags[s], graphs.empty() ? nullptr : &graphs[s],
                             cfg.clinical.enabled ? &records[s] : nullptr, &drop);
      risks.push_back(double(tape.val(fwd.risk)(0, 0)));
      if (fwd.clinical_recon.valid())
        recon_sum += double(tape.val(fwd.clinical_recon)(0, 0));
    }
    auto cox = objectives::cox_value_and_grad(risks, train_labels, cfg.loss.lambda_reg);

    // Pass 2: replay each patient and backpropagate coef_i * r_i plus the
    // weighted reconstruction term; the sum over patients equals the gradient
    // of the epoch loss. The reconstruction term carries the same 1/n
    // normalization as the partial likelihood so modality balance does not
    // depend on cohort size. L2 on the head layers is added analytically.
    const float recon_coef = float(cfg.loss.recon_weight / double(train_idx.size()));
    store.zero_grads();
    double l2_term = 0.0;
    for (size_t k = 0; k < train_idx.size(); ++k) {
      size_t s = train_idx[k];
      ad::Tape<float> tape;
      Ctx<float> ctx(tape, store);
      Rng drop = dropout_rng_for(cfg.seed, epoch, s);
      auto fwd = net.forward(ctx, dataset.bags[s], graphs.empty() ? nullptr : &graphs[s],
                             cfg.clinical.enabled ? &records[s] : nullptr, &drop);
      std::vector<std::pair<ad::Var, float>> terms{{fwd.risk, float(cox.grad[k])}};
      if (fwd.clinical_recon.valid())
        terms.emplace_back(fwd.clinical_recon, recon_coef);
      ad::Var obj = ad::weighted_sum(tape, terms);
      tape.backward(obj);
      ctx.accumulate_grads();
    }
    for (int id : net.penalized_ids()) {
      auto& e = store.at(id);
      double sq = 0.0;
      for (size_t i = 0; i < e.value.size(); ++i) {
        e.grad.data[i] += 2.0f * l2 * e.value.data[i];
        sq += double(e.value.data[i]) * double(e.value.data[i]);
      }
      l2_term += double(l2) * sq;
    }
    adam_step(store, lr, cfg.trainer.beta1, cfg.trainer.beta2, cfg.trainer.adam_eps,
              cfg.trainer.weight_decay);

    double train_loss =
        cox.value + cfg.loss.recon_weight * recon_sum / double(train_idx.size()) + l2_term;

    // Validation C-index.
    std::vector<double> vrisks;
    std::vector<objectives::SurvivalLabel> vlabels;
    for (size_t s : val_idx) {
      ad::Tape<float> tape;
      Ctx<float> ctx(tape, store);
      auto fwd = net.forward(ctx, dataset.bags[s], graphs.empty() ? nullptr : &graphs[s],
                             cfg.clinical.enabled ? &records[s] : nullptr, nullptr);
      vrisks.push_back(double(tape.val(fwd.risk)(0, 0)));
      vlabels.push_back(dataset.labels[s]);
    }
    double metric;
    try {
      metric = metrics::c_index(vrisks, vlabels);
    } catch (const DataError&) {
      metric = 0.5;  // no permissible validation pairs
    }

    result.history.push_back({epoch, lr, train_loss, metric});
    result.epochs_run = epoch + 1;
    bool improved = result.best_epoch < 0 || metric > result.best_metric;
    if (improved || metric == result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best.config = cfg;
      result.best.schema = schema;
      result.best.store = store;
      result.best.best_metric = metric;
      result.best.best_epoch = epoch;
    }
    if (improved) {
      since_best = 0;
    } else if (++since_best >= cfg.trainer.patience) {
      break;
    }
  }
  return result;
}

ClassificationEval eval_classification(const io::Checkpoint& ck,
                                       const data::ClassificationData& dataset,
                                       const std::vector<size_t>& indices) {
  const io::RunConfig& cfg = ck.config;
  auto graphs = build_graphs(dataset.bags, cfg);
  num::ParameterStore<float> store = ck.store;
  Model<float> net(cfg, dataset.bags[0].feature_dim(), ck.schema, store);
  // Model construction re-registers parameters; verify the checkpoint matches.
  if (store.count() != ck.store.count())
    throw DataError("eval: checkpoint parameters do not match model layout");

  ClassificationEval ev;
  for (size_t s : indices) {
    ad::Tape<float> tape;
    Ctx<float> ctx(tape, store);
    auto fwd = net.forward(ctx, dataset.bags[s], graphs.empty() ? nullptr : &graphs[s],
                           nullptr, nullptr);
    ev.probs.push_back(bag_probability(tape, fwd));
    ev.labels.push_back(dataset.labels[s]);
  }
  std::vector<int> preds(ev.probs.size());
  for (size_t i = 0; i < ev.probs.size(); ++i) preds[i] = ev.probs[i] > 0.5 ? 1 : 0;
  ev.acc = metrics::accuracy(preds, ev.labels);
  ev.auc = validation_metric_cls(ev.probs, ev.labels);
  return ev;
}

SurvivalEval eval_survival(const io::Checkpoint& ck, const data::SurvivalData& dataset,
                           const std::vector<size_t>& indices) {
  const io::RunConfig& cfg = ck.config;
  auto graphs = build_graphs(dataset.bags, cfg);
  std::vector<clinical::EncodedRecord> records(dataset.bags.size());
  if (cfg.clinical.enabled)
    for (size_t s = 0; s < dataset.bags.size(); ++s)
      records[s] = clinical::encode_record(ck.schema, dataset.clinical_rows[s]);

  num::ParameterStore<float> store = ck.store;
  Model<float> net(cfg, dataset.bags[0].feature_dim(), ck.schema, store);
  if (store.count() != ck.store.count())
    throw DataError("eval: checkpoint parameters do not match model layout");

  SurvivalEval ev;
  for (size_t s : indices) {
    ad::Tape<float> tape;
    Ctx<float> ctx(tape, store);
    auto fwd = net.forward(ctx, dataset.bags[s], graphs.empty() ? nullptr : &graphs[s],
                           cfg.clinical.enabled ? &records[s] : nullptr, nullptr);
    ev.risks.push_back(double(tape.val(fwd.risk)(0, 0)));
    ev.labels.push_back(dataset.labels[s]);
  }
  ev.c_index = metrics::c_index(ev.risks, ev.labels);
  return ev;
}

}  // namespace mmsf::train
