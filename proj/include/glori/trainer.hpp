#pragma once

// AdamW training of a head on frozen embeddings, learning-rate grid search
// with validation selection, and the train+val retraining round.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "glori/autodiff.hpp"
#include "glori/checkpoint.hpp"
#include "glori/error.hpp"
#include "glori/head.hpp"
#include "glori/metrics.hpp"
#include "glori/params.hpp"
#include "glori/rng.hpp"
#include "glori/store.hpp"

namespace glori {

inline std::vector<double> default_lr_grid() {
  return {1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3};
}

struct TrainConfig {
  double lr = 5e-3;
  std::vector<double> lr_grid = default_lr_grid();
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  Metric selection_metric = Metric::auroc;
  std::size_t jobs = 1;  // concurrent grid-search runs

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    if (lr_grid.empty()) throw UsageError("learning-rate grid is empty");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw UsageError("AdamW betas must lie in [0,1)");
    }
    if (!(eps > 0.0) || !(weight_decay >= 0.0)) throw UsageError("invalid AdamW eps/weight decay");
  }

  TrainProvenance provenance() const {
    return {lr, beta1, beta2, eps, weight_decay, static_cast<std::uint32_t>(epochs),
            static_cast<std::uint32_t>(batch_size)};
  }
};

struct OptimizerState {
  ParamSet m;
  ParamSet v;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const ParamSet& params) {
    OptimizerState s;
    for (const auto& [name, t] : params) {
      s.m.add(name, Tensor(t.shape()));
      s.v.add(name, Tensor(t.shape()));
    }
    return s;
  }
};

// One AdamW update with decoupled weight decay. Gradients are checked for
// finiteness before anything is modified.
inline void adamw_step(ParamSet& params, const ParamSet& grads, OptimizerState& state,
                       const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adamw_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.entry(i);
    const auto& g = grads.entry(i);
    if (g.name != p.name || g.tensor.shape() != p.tensor.shape() ||
        state.m.entry(i).tensor.shape() != p.tensor.shape()) {
      throw ShapeError("adamw_step: layout mismatch at '" + p.name + "'");
    }
    if (!g.tensor.all_finite()) throw NumericError("adamw_step: non-finite gradient in '" + p.name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params.entry(i).tensor.data();
    const auto g = grads.entry(i).tensor.data();
    auto m = state.m.entry(i).tensor.data();
    auto v = state.v.entry(i).tensor.data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      theta[j] *= decay;
      theta[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------

inline Tensor label_tensor(const std::uint8_t* row, std::size_t m) {
  Tensor y({m});
  for (std::size_t j = 0; j < m; ++j) y[j] = row[j];
  return y;
}

// BCE of one record and, when `grads` is given, its parameter gradients
// added into it.
inline double record_loss(const Model& model, const EmbeddingRecord& rec, const std::uint8_t* labels,
                          ParamSet* grads) {
  Tape tape;
  VarSet p(tape, model.params, grads != nullptr);
  HeadOutput out = forward(tape, p, model.kind, model.config, rec);
  Var loss = bce_with_logits(out.logits, tape.constant(label_tensor(labels, model.config.n_findings)));
  const double value = loss.value().item();
  if (grads) {
    tape.backward(loss);
    const ParamSet g = p.gradients(tape);
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto dst = grads->entry(i).tensor.data();
      const auto src = g.entry(i).tensor.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  return value;
}

inline double mean_loss(const Model& model, const DataView& data) {
  if (data.empty()) throw UsageError("mean_loss: empty split");
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += record_loss(model, data.record(i), data.label_row(i), nullptr);
  return s / static_cast<double>(data.size());
}

// Logits of every record, paired with its labels.
inline ScoreMatrix score_matrix(const Model& model, const DataView& data) {
  ScoreMatrix sm;
  sm.n_findings = model.config.n_findings;
  if (data.n_findings() != sm.n_findings) throw UsageError("label width does not match model");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = predict_logits(model, data.record(i));
    sm.image_ids.push_back(data.record(i).image_id);
    sm.scores.insert(sm.scores.end(), z.begin(), z.end());
    sm.labels.insert(sm.labels.end(), data.label_row(i), data.label_row(i) + sm.n_findings);
  }
  return sm;
}

inline double macro_metric_or_nan(const ScoreMatrix& sm, Metric metric) {
  return mean_defined(per_finding_metric(sm, all_rows(sm.rows()), metric));
}

inline void check_disjoint(const DataView& a, const DataView& b) {
  std::unordered_set<std::uint64_t> ids;
  for (std::size_t i = 0; i < a.size(); ++i) ids.insert(a.record(i).image_id);
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (ids.count(b.record(i).image_id)) {
      throw UsageError("train and validation splits share image_id " +
                       std::to_string(b.record(i).image_id));
    }
  }
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-image BCE seen during the epoch
  double val_metric = kUndefined;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> history;
};

inline std::string format_epoch(const EpochLog& e, Metric metric) {
  char buf[128];
  if (std::isnan(e.val_metric)) {
    std::snprintf(buf, sizeof buf, "epoch %zu train_loss %.6f", e.epoch, e.train_loss);
  } else {
    std::snprintf(buf, sizeof buf, "epoch %zu train_loss %.6f val_%s %.6f", e.epoch, e.train_loss,
                  to_string(metric), e.val_metric);
  }
  return buf;
}

// Minibatch AdamW on the mean BCE of each batch. One shuffle stream per run;
// the last partial batch is kept. Returns the final-epoch parameters.
inline TrainResult train(HeadKind kind, const GLoRIConfig& model_cfg, const DataView& train_set,
                         const DataView* val_set, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  model_cfg.validate(kind);
  if (train_set.empty()) throw UsageError("train: empty training split");
  if (train_set.n_findings() != model_cfg.n_findings) {
    throw UsageError("train: label width " + std::to_string(train_set.n_findings()) +
                     " does not match " + std::to_string(model_cfg.n_findings) + " findings");
  }
  if (val_set) {
    if (val_set->empty()) throw UsageError("train: empty validation split");
    if (val_set->n_findings() != model_cfg.n_findings) throw UsageError("train: validation label width mismatch");
    check_disjoint(train_set, *val_set);
  }

  TrainResult result{init_model(kind, model_cfg), {}};
  Model& model = result.model;
  OptimizerState state = OptimizerState::zeros_like(model.params);
  Engine shuffle_eng = substream(cfg.seed, "shuffle");
  std::vector<std::size_t> order = all_rows(train_set.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), shuffle_eng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      ParamSet grads = OptimizerState::zeros_like(model.params).m;
      for (std::size_t j = start; j < end; ++j) {
        loss_sum += record_loss(model, train_set.record(order[j]), train_set.label_row(order[j]), &grads);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [name, g] : grads) {
        for (double& x : g.data()) x *= inv;
      }
      adamw_step(model.params, grads, state, cfg);
    }
    EpochLog e{epoch, loss_sum / static_cast<double>(order.size()), kUndefined};
    if (val_set) e.val_metric = macro_metric_or_nan(score_matrix(model, *val_set), cfg.selection_metric);
    result.history.push_back(e);
    if (log) *log << format_epoch(e, cfg.selection_metric) << '\n';
  }
  return result;
}

struct GridPoint {
  double lr = 0.0;
  double val_metric = kUndefined;
};

struct GridResult {
  double best_lr = 0.0;
  std::vector<GridPoint> points;  // grid order
};

// Best final-epoch validation metric over the grid; ties go to the smaller
// lr and undefined metrics rank last.
inline GridResult lr_grid_search(HeadKind kind, const GLoRIConfig& model_cfg,
                                 const DataView& train_set, const DataView& val_set,
                                 const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  GridResult res;
  res.points.resize(cfg.lr_grid.size());
  parallel_for(cfg.lr_grid.size(), cfg.jobs, [&](std::size_t i) {
    TrainConfig run = cfg;
    run.lr = cfg.lr_grid[i];
    const TrainResult r = train(kind, model_cfg, train_set, &val_set, run, nullptr);
    res.points[i] = {run.lr, r.history.back().val_metric};
  });
  bool have = false;
  double best_metric = 0.0;
  for (const GridPoint& g : res.points) {
    if (log) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "grid lr %g val_%s %.6f", g.lr, to_string(cfg.selection_metric),
                    g.val_metric);
      *log << buf << '\n';
    }
    const bool better = !std::isnan(g.val_metric) &&
                        (!have || g.val_metric > best_metric ||
                         (g.val_metric == best_metric && g.lr < res.best_lr));
    if (!have && std::isnan(g.val_metric) && (res.best_lr == 0.0 || g.lr < res.best_lr)) {
      res.best_lr = g.lr;  // fallback when every run is undefined
    }
    if (better) {
      have = true;
      best_metric = g.val_metric;
      res.best_lr = g.lr;
    }
  }
  if (log) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "selected lr %g", res.best_lr);
    *log << buf << '\n';
  }
  return res;
}

// Fresh initialization trained on the union of both splits at best_lr.
inline TrainResult retrain_on_train_plus_val(HeadKind kind, const GLoRIConfig& model_cfg,
                                             const DataView& train_set, const DataView& val_set,
                                             double best_lr, const TrainConfig& cfg,
                                             std::ostream* log = nullptr) {
  if (std::find(cfg.lr_grid.begin(), cfg.lr_grid.end(), best_lr) == cfg.lr_grid.end()) {
    throw UsageError("retrain: learning rate is not a grid point");
  }
  check_disjoint(train_set, val_set);
  DataView all = train_set;
  all.append(val_set);
  TrainConfig run = cfg;
  run.lr = best_lr;
  return train(kind, model_cfg, all, nullptr, run, log);
}

}  // namespace glori
