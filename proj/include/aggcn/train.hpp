// Loss, SGD, metrics, and the training/evaluation loops.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aggcn/data.hpp"
#include "aggcn/model.hpp"
#include "aggcn/rng.hpp"
#include "aggcn/tensor.hpp"

namespace aggcn {

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 0.1;
  bool momentum_enabled = false;
  double momentum = 0.9;
  std::optional<double> grad_clip_norm = 5.0;
  int batch_size = 1;  // gradient accumulation count
  std::uint64_t seed = 0;
  double dropout_p = 0.0;
  int eval_every = 1;

  void validate() const {
    if (epochs < 0) throw contract_error("train: epochs must be >= 0");
    // lr = 0 is allowed: it makes a run a pure forward sweep.
    if (learning_rate < 0.0) {
      throw contract_error("train: learning_rate must be >= 0");
    }
    if (batch_size < 1) throw contract_error("train: batch_size must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
      throw contract_error("train: dropout_p must be in [0, 1)");
    }
    if (eval_every < 1) throw contract_error("train: eval_every must be >= 1");
    if (grad_clip_norm.has_value() && *grad_clip_norm <= 0.0) {
      throw contract_error("train: grad_clip_norm must be > 0");
    }
  }
};

// Negative log-likelihood of the gold class under softmax(logits).
inline Tensor cross_entropy(const Tensor& logits, int gold) {
  return cross_entropy_logits(logits, gold);
}

// Momentum buffers, allocated lazily per parameter.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

// One update: global-norm clip, optional momentum, step, zero grads.
inline void sgd_step(const std::vector<Tensor>& params,
                     const TrainConfig& config, SgdState& state) {
  double clip_factor = 1.0;
  if (config.grad_clip_norm.has_value()) {
    double sq = 0.0;
    for (const Tensor& p : params) {
      for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > *config.grad_clip_norm) {
      clip_factor = *config.grad_clip_norm / norm;
    }
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.assign(params.size(), {});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto& vel = state.velocity[i];
    if (config.momentum_enabled && vel.size() != p.numel()) {
      vel.assign(p.numel(), 0.0);
    }
    for (std::size_t k = 0; k < p.numel(); ++k) {
      double step = p.grad()[k] * clip_factor;
      if (config.momentum_enabled) {
        vel[k] = config.momentum * vel[k] + step;
        step = vel[k];
      }
      p.data()[k] -= config.learning_rate * step;
    }
    p.zero_grad();
  }
}

struct LabelCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  bool operator==(const LabelCounts&) const = default;
};

struct EvalResult {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  long total = 0;
  std::vector<LabelCounts> per_label;
  std::vector<std::vector<long>> confusion;  // confusion[gold][pred]

  bool operator==(const EvalResult&) const = default;
};

inline double f1_of(double precision, double recall) {
  return precision + recall == 0.0
             ? 0.0
             : 2.0 * precision * recall / (precision + recall);
}

// Scores predicted against gold labels. When a negative label is set, it is
// excluded from both the predicted-positive and gold-positive sets for
// micro P/R/F1, and from the macro average. Zero denominators score 0.
inline EvalResult score_predictions(const std::vector<int>& gold,
                                    const std::vector<int>& pred,
                                    int num_labels,
                                    std::optional<int> negative_label) {
  if (gold.size() != pred.size()) {
    throw contract_error("score: gold/pred size mismatch");
  }
  EvalResult r;
  r.total = static_cast<long>(gold.size());
  r.confusion.assign(static_cast<std::size_t>(num_labels),
                     std::vector<long>(static_cast<std::size_t>(num_labels), 0));
  r.per_label.assign(static_cast<std::size_t>(num_labels), {});

  long correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int g = gold[i], p = pred[i];
    if (g < 0 || g >= num_labels || p < 0 || p >= num_labels) {
      throw contract_error("score: label id out of range");
    }
    r.confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)]++;
    if (g == p) ++correct;
  }
  r.accuracy = r.total == 0 ? 0.0
                            : static_cast<double>(correct) /
                                  static_cast<double>(r.total);

  for (int l = 0; l < num_labels; ++l) {
    auto& counts = r.per_label[static_cast<std::size_t>(l)];
    counts.tp = r.confusion[static_cast<std::size_t>(l)][static_cast<std::size_t>(l)];
    for (int o = 0; o < num_labels; ++o) {
      if (o == l) continue;
      counts.fp += r.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(l)];
      counts.fn += r.confusion[static_cast<std::size_t>(l)][static_cast<std::size_t>(o)];
    }
  }

  long tp = 0, fp = 0, fn = 0;
  double macro_sum = 0.0;
  int macro_count = 0;
  for (int l = 0; l < num_labels; ++l) {
    if (negative_label.has_value() && l == *negative_label) continue;
    const auto& c = r.per_label[static_cast<std::size_t>(l)];
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    if (c.tp + c.fp + c.fn == 0) continue;  // absent label, skip in macro
    const double lp = c.tp + c.fp == 0
                          ? 0.0
                          : static_cast<double>(c.tp) /
                                static_cast<double>(c.tp + c.fp);
    const double lr = c.tp + c.fn == 0
                          ? 0.0
                          : static_cast<double>(c.tp) /
                                static_cast<double>(c.tp + c.fn);
    macro_sum += f1_of(lp, lr);
    ++macro_count;
  }
  r.precision = tp + fp == 0
                    ? 0.0
                    : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = tp + fn == 0
                 ? 0.0
                 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.micro_f1 = f1_of(r.precision, r.recall);
  r.macro_f1 = macro_count == 0 ? 0.0 : macro_sum / macro_count;
  return r;
}

// Argmax prediction for one instance.
inline int predict(const AggcnModel& model, const Instance& instance,
                   PruneK pruning) {
  const Tensor logits = classify(model, instance, pruning);
  const auto& z = logits.data();
  std::size_t best = 0;
  for (std::size_t j = 1; j < z.size(); ++j) {
    if (z[j] > z[best]) best = j;
  }
  return static_cast<int>(best);
}

// Evaluates the model over a corpus. Gold labels are resolved by name
// against the model's label list.
inline EvalResult evaluate(const AggcnModel& model, const Corpus& corpus,
                           std::optional<int> negative_label,
                           PruneK pruning) {
  std::vector<int> gold, pred;
  gold.reserve(corpus.instances.size());
  pred.reserve(corpus.instances.size());
  for (const Instance& inst : corpus.instances) {
    const std::string& name =
        corpus.label_vocab.at(static_cast<std::size_t>(inst.label));
    const int model_gold = model.label_id(name);
    if (model_gold < 0) {
      throw contract_error("evaluate: label '" + name +
                           "' unknown to the model (instance " + inst.id + ")");
    }
    gold.push_back(model_gold);
    pred.push_back(predict(model, inst, pruning));
  }
  return score_predictions(gold, pred, model.config.num_labels(),
                           negative_label);
}

inline EvalResult evaluate(const AggcnModel& model, const Corpus& corpus,
                           std::optional<int> negative_label = {}) {
  return evaluate(model, corpus, negative_label, model.config.pruning);
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<EvalResult> dev;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_metric = 0.0;
  // Parameter values at the best dev epoch (final values if no dev set),
  // in named_parameters() order.
  std::vector<std::vector<double>> best_params;
};

inline double selection_metric(const EvalResult& r,
                               std::optional<int> negative_label) {
  return negative_label.has_value() ? r.micro_f1 : r.accuracy;
}

// Deterministic single-threaded training: seeded shuffle per epoch,
// gradient accumulation over batch_size instances per step.
inline TrainResult train(AggcnModel& model, const Corpus& train_corpus,
                         const Corpus* dev_corpus, const TrainConfig& config,
                         PruneK pruning) {
  config.validate();
  if (train_corpus.instances.empty()) {
    throw contract_error("train: empty training corpus");
  }
  // Gold ids resolved against the model's label list up front.
  std::vector<int> gold_ids;
  for (const Instance& inst : train_corpus.instances) {
    const std::string& name =
        train_corpus.label_vocab.at(static_cast<std::size_t>(inst.label));
    const int id = model.label_id(name);
    if (id < 0) {
      throw contract_error("train: label '" + name +
                           "' unknown to the model (instance " + inst.id + ")");
    }
    gold_ids.push_back(id);
  }

  const std::vector<Tensor> params = model.parameters();
  zero_grads(params);
  SgdState sgd;
  Rng shuffle_rng = Rng(config.seed).derive("shuffle");
  Rng dropout_rng = Rng(config.seed).derive("dropout");

  TrainResult result;
  result.best_metric = -1.0;
  std::vector<std::size_t> order(train_corpus.instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    long correct = 0;
    int pending = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Instance& inst = train_corpus.instances[order[k]];
      ForwardExtras extras;
      extras.dropout_p = config.dropout_p;
      extras.dropout_rng = &dropout_rng;
      Tensor logits, loss;
      try {
        logits = classify(model, inst, pruning, extras);
        loss = cross_entropy(logits, gold_ids[order[k]]);
      } catch (const numeric_error& e) {
        throw numeric_error("train: instance " + inst.id + ": " + e.what());
      }
      const double loss_value = loss.value();
      if (!std::isfinite(loss_value)) {
        throw numeric_error("train: non-finite loss at instance " + inst.id);
      }
      loss_sum += loss_value;
      const auto& z = logits.data();
      std::size_t best = 0;
      for (std::size_t j = 1; j < z.size(); ++j) {
        if (z[j] > z[best]) best = j;
      }
      if (static_cast<int>(best) == gold_ids[order[k]]) ++correct;

      loss.backward();
      if (++pending == config.batch_size || k + 1 == order.size()) {
        sgd_step(params, config, sgd);
        pending = 0;
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    record.train_accuracy =
        static_cast<double>(correct) / static_cast<double>(order.size());
    const bool eval_now = epoch % config.eval_every == 0 ||
                          epoch == config.epochs;
    if (dev_corpus != nullptr && !dev_corpus->instances.empty() && eval_now) {
      record.dev = evaluate(model, *dev_corpus,
                            train_corpus.negative_label, pruning);
      const double metric =
          selection_metric(*record.dev, train_corpus.negative_label);
      if (metric > result.best_metric) {
        result.best_metric = metric;
        result.best_epoch = epoch;
        result.best_params.clear();
        for (const Tensor& p : params) result.best_params.push_back(p.data());
      }
    }
    result.history.push_back(std::move(record));
  }

  if (result.best_params.empty()) {
    result.best_epoch = config.epochs;
    for (const Tensor& p : params) result.best_params.push_back(p.data());
  }
  return result;
}

// Overwrites model parameters with a snapshot in named_parameters() order.
inline void load_parameter_values(AggcnModel& model,
                                  const std::vector<std::vector<double>>& values) {
  const std::vector<Tensor> params = model.parameters();
  if (values.size() != params.size()) {
    throw contract_error("load_parameter_values: parameter count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (values[i].size() != p.numel()) {
      throw contract_error("load_parameter_values: size mismatch at " +
                           std::to_string(i));
    }
    p.data() = values[i];
  }
}

}  // namespace aggcn
