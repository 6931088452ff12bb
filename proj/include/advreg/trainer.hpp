// Co-training loop: the base model and the adversary share the question
// encoder and are driven by two separate Adamax optimizers. Each step runs two
// backward passes — l_vqa through the main branch, then lambda_adv * l_adv
// through the reversal layer — and sums the theta_q gradient maps, which makes
// the per-branch gradient norms directly measurable.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "advreg/analysis.hpp"
#include "advreg/autodiff.hpp"
#include "advreg/dataset.hpp"
#include "advreg/model.hpp"
#include "advreg/objective.hpp"
#include "advreg/schedule.hpp"

namespace advreg {

struct TrainConfig {
  double lambda_adv = 0.0;
  ScheduleParams schedule = static_schedule(0.0);
  std::int64_t batch_size = 512;
  double learning_rate = 0.001;  // constant; there is no decay path
  std::int64_t max_iterations = 2000;
  std::int64_t eval_every = 100;
  std::int64_t patience = 10;
  std::uint64_t seed = 0;
  // When false the adversary branch is absent entirely: no forward pass, no
  // second backward pass, no adversary optimizer.
  bool adversary_enabled = true;
  bool eval_train_split = true;
};

inline void validate(const TrainConfig& c) {
  if (c.lambda_adv < 0.0) throw ConfigError("train config: lambda_adv must be >= 0");
  validate(c.schedule);
  if (c.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (c.max_iterations < 1) {
    throw ConfigError("train config: max_iterations must be >= 1");
  }
  if (c.eval_every < 1) throw ConfigError("train config: eval_every must be >= 1");
  if (c.patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (!(c.learning_rate > 0.0)) {
    throw ConfigError("train config: learning_rate must be > 0");
  }
}

// ----------------------------------------------------------------------------
// Adamax
// ----------------------------------------------------------------------------

struct AdamaxSlot {
  Tensor m;  // first moment
  Tensor u;  // infinity norm accumulator
};

// m <- b1*m + (1-b1)*g; u <- max(b2*u, |g|);
// param <- param - (lr/(1-b1^t)) * m/(u+eps)
inline void adamax_update(Tensor& param, const Tensor& grad, AdamaxSlot& slot,
                          double lr, std::int64_t t, double beta1 = 0.9,
                          double beta2 = 0.999, double eps = 1e-8) {
  if (!param.same_shape(grad)) throw DimensionError("adamax_update: shape mismatch");
  if (!grad.all_finite()) {
    throw DivergenceError(t, "adamax_update: non-finite gradient at iteration " +
                                 std::to_string(t));
  }
  if (slot.m.values.empty()) {
    slot.m = Tensor::zeros(param.shape);
    slot.u = Tensor::zeros(param.shape);
  }
  const double step = lr / (1.0 - std::pow(beta1, static_cast<double>(t)));
  for (std::size_t i = 0; i < param.values.size(); ++i) {
    const double g = grad.values[i];
    slot.m.values[i] = beta1 * slot.m.values[i] + (1.0 - beta1) * g;
    slot.u.values[i] = std::max(beta2 * slot.u.values[i], std::abs(g));
    param.values[i] -= step * slot.m.values[i] / (slot.u.values[i] + eps);
  }
}

// One optimizer instance owns the moment state for a fixed set of parameter
// tensors. The learning rate is immutable for the lifetime of the optimizer.
class Adamax {
 public:
  explicit Adamax(double lr) : lr_(lr) {}

  double learning_rate() const { return lr_; }
  std::int64_t steps() const { return t_; }

  void step(const std::vector<Tensor*>& params,
            const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) {
      throw ContractError("adamax: params/grads count mismatch");
    }
    slots_.resize(params.size());
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      adamax_update(*params[i], grads[i], slots_[i], lr_, t_);
    }
  }

 private:
  const double lr_;
  std::int64_t t_ = 0;
  std::vector<AdamaxSlot> slots_;
};

// ----------------------------------------------------------------------------
// Early stopping
//
// Improvement is measured against the all-time best validation score; the
// non-improvement streak counts only evaluations past the schedule delay, so
// with delay mu the earliest possible stop is mu + patience * eval_every.
// ----------------------------------------------------------------------------

class EarlyStopper {
 public:
  EarlyStopper(std::int64_t mu, std::int64_t patience)
      : mu_(mu), patience_(patience) {}

  // Feed one evaluation; returns true when training should stop after it.
  bool observe(std::int64_t t, double val_score) {
    const bool improved = !has_best_ || val_score > best_;
    if (improved) {
      has_best_ = true;
      best_ = val_score;
      best_iter_ = t;
      streak_ = 0;
      return false;
    }
    if (t <= mu_) return false;
    ++streak_;
    return streak_ >= patience_;
  }

  bool has_best() const { return has_best_; }
  double best_score() const { return best_; }
  std::int64_t best_iter() const { return best_iter_; }

 private:
  std::int64_t mu_;
  std::int64_t patience_;
  std::int64_t streak_ = 0;
  bool has_best_ = false;
  double best_ = 0.0;
  std::int64_t best_iter_ = -1;
};

// ----------------------------------------------------------------------------
// Run log
// ----------------------------------------------------------------------------

struct StepRow {
  std::int64_t t = 0;
  double l_vqa = 0.0, l_adv = 0.0, l_total = 0.0, lambda_grl = 0.0;
  double gn_q_vqa = 0.0, gn_q_adv = 0.0, gn_adv = 0.0;
};

struct EvalRow {
  std::int64_t t = 0;
  std::string split;
  double overall = 0.0, yesno = 0.0, number = 0.0, other = 0.0;
};

struct RunLog {
  std::vector<StepRow> steps;
  std::vector<EvalRow> evals;
  bool diverged = false;
  std::int64_t diverged_at = -1;

  std::string steps_csv() const {
    std::string out = "t,l_vqa,l_adv,l_total,lambda_grl,gn_q_vqa,gn_q_adv,gn_adv\n";
    for (const auto& r : steps) {
      out += std::to_string(r.t) + "," + fmt_double(r.l_vqa) + "," +
             fmt_double(r.l_adv) + "," + fmt_double(r.l_total) + "," +
             fmt_double(r.lambda_grl) + "," + fmt_double(r.gn_q_vqa) + "," +
             fmt_double(r.gn_q_adv) + "," + fmt_double(r.gn_adv) + "\n";
    }
    return out;
  }

  std::string evals_csv() const {
    std::string out = "t,split,overall,yesno,number,other\n";
    for (const auto& r : evals) {
      out += std::to_string(r.t) + "," + r.split + "," + fmt_double(r.overall) +
             "," + fmt_double(r.yesno) + "," + fmt_double(r.number) + "," +
             fmt_double(r.other) + "\n";
    }
    return out;
  }
};

struct StepStats {
  LossBreakdown loss;
  double lambda_grl = 0.0;
  double gn_q_vqa = 0.0, gn_q_adv = 0.0, gn_adv = 0.0;
};

// ----------------------------------------------------------------------------
// Training
// ----------------------------------------------------------------------------

namespace detail {

struct Batch {
  Tensor features;  // B x image_dim
  std::vector<std::vector<std::int32_t>> tokens;
  std::vector<SoftTarget> targets;
};

inline Batch assemble_batch(const std::vector<Example>& examples,
                            const std::vector<std::size_t>& order,
                            std::size_t start, std::size_t end) {
  Batch b;
  const auto dim =
      static_cast<std::int64_t>(examples[order[start]].image_features.size());
  b.features = Tensor::zeros({static_cast<std::int64_t>(end - start), dim});
  b.tokens.reserve(end - start);
  b.targets.reserve(end - start);
  for (std::size_t i = start; i < end; ++i) {
    const Example& ex = examples[order[i]];
    std::copy(ex.image_features.begin(), ex.image_features.end(),
              b.features.values.begin() +
                  static_cast<std::ptrdiff_t>((i - start) *
                                              static_cast<std::size_t>(dim)));
    b.tokens.push_back(ex.question_tokens);
    b.targets.push_back(ex.soft_target);
  }
  return b;
}

inline std::vector<Tensor> collect_grads(const Tape& tape,
                                         const std::vector<NodeId>& ids) {
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (NodeId id : ids) out.push_back(tape.grad(id));
  return out;
}

}  // namespace detail

// One optimization step over a batch. Gradients are computed for both heads
// before either optimizer applies its update.
inline StepStats train_step(const detail::Batch& batch, ModelParams& params,
                            Adamax& main_opt, Adamax& adv_opt, std::int64_t t,
                            const TrainConfig& config) {
  if (batch.tokens.empty()) throw DataError("train_step: empty batch");
  StepStats stats;
  stats.lambda_grl = lambda_grl_at(t, config.schedule);

  Tape tape;
  BoundParams bp;
  NodeId l_vqa = kNoNode, l_adv = kNoNode, l_total = kNoNode;
  try {
    bp = bind(tape, params);
    NodeId q = encode_questions(tape, bp, batch.tokens);
    NodeId v = encode_images(tape, bp, batch.features);
    NodeId z = fuse(tape, bp, v, q);
    l_vqa = soft_cross_entropy(tape, predict_vqa(tape, bp, z), batch.targets);
    if (config.adversary_enabled) {
      NodeId lp_adv = predict_adv(tape, bp, q, stats.lambda_grl);
      l_adv = soft_cross_entropy(tape, lp_adv, batch.targets);
      l_total = total_loss(tape, l_vqa, l_adv, config.lambda_adv);
    }
  } catch (const NonFiniteError& e) {
    throw DivergenceError(t, std::string(e.what()) + " at iteration " +
                                 std::to_string(t));
  }

  stats.loss.l_vqa = tape.value(l_vqa).values[0];
  stats.loss.lambda_adv = config.adversary_enabled ? config.lambda_adv : 0.0;
  if (config.adversary_enabled) {
    stats.loss.l_adv = tape.value(l_adv).values[0];
    stats.loss.l_total = tape.value(l_total).values[0];
  } else {
    stats.loss.l_total = stats.loss.l_vqa;
  }

  // Pass 1: the VQA loss through the main branch.
  tape.zero_grad();
  tape.backward(l_vqa);
  stats.gn_q_vqa = grad_norm(tape, bp.q);
  std::vector<Tensor> g_v = detail::collect_grads(tape, bp.v);
  std::vector<Tensor> g_q = detail::collect_grads(tape, bp.q);
  std::vector<Tensor> g_z = detail::collect_grads(tape, bp.z);
  std::vector<Tensor> g_vqa = detail::collect_grads(tape, bp.vqa);

  std::vector<Tensor> g_adv;
  if (config.adversary_enabled) {
    // Pass 2: lambda_adv * l_adv through the reversal layer. theta_adv
    // descends the adversary loss; theta_q receives the reversed gradients.
    tape.zero_grad();
    tape.backward(tape.scale(l_adv, config.lambda_adv));
    stats.gn_q_adv = grad_norm(tape, bp.q);
    stats.gn_adv = grad_norm(tape, bp.adv);
    g_adv = detail::collect_grads(tape, bp.adv);
    for (std::size_t i = 0; i < g_q.size(); ++i) {
      const Tensor* g2 = tape.grad_view(bp.q[i]);
      if (!g2) continue;
      for (std::size_t k = 0; k < g_q[i].values.size(); ++k) {
        g_q[i].values[k] += g2->values[k];
      }
    }
  }

  std::vector<Tensor*> main_params;
  std::vector<Tensor> main_grads;
  auto append = [&](ParamGroup& g, std::vector<Tensor>& grads) {
    for (std::size_t i = 0; i < g.tensors.size(); ++i) {
      main_params.push_back(&g.tensors[i].value);
      main_grads.push_back(std::move(grads[i]));
    }
  };
  append(params.theta_v, g_v);
  append(params.theta_q, g_q);
  append(params.theta_z, g_z);
  append(params.theta_vqa, g_vqa);
  main_opt.step(main_params, main_grads);

  if (config.adversary_enabled) {
    std::vector<Tensor*> adv_params;
    for (auto& p : params.theta_adv.tensors) adv_params.push_back(&p.value);
    adv_opt.step(adv_params, g_adv);
  }
  return stats;
}

struct TrainResult {
  ModelParams params;  // best-val checkpoint (final params if never evaluated)
  RunLog log;
  bool diverged = false;
  std::int64_t diverged_at = -1;
  std::int64_t best_iter = -1;
  double best_val = 0.0;
  std::int64_t stopped_at = 0;  // last executed iteration
};

// Iterates shuffled batches (reshuffled each epoch), evaluates the validation
// split every eval_every iterations, and returns the best-val checkpoint.
// Divergence is reported in the result, never thrown.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& config,
                         const DatasetBundle& bundle) {
  validate(config);
  if (bundle.train.empty() || bundle.val.empty() || bundle.test.empty()) {
    throw DataError("train: bundle has an empty split");
  }

  TrainResult result;
  ModelParams params = init_params(model_cfg);
  Adamax main_opt(config.learning_rate);
  Adamax adv_opt(config.learning_rate);
  EarlyStopper stopper(config.schedule.mu, config.patience);

  ModelParams best = params;
  Rng shuffle_rng(config.seed, "shuffle");
  std::vector<std::size_t> order(bundle.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force a shuffle on first use

  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  bool stop = false;
  for (std::int64_t t = 1; t <= config.max_iterations && !stop; ++t) {
    if (cursor >= order.size()) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t end = std::min(order.size(), cursor + batch_size);
    auto batch = detail::assemble_batch(bundle.train, order, cursor, end);
    cursor = end;

    StepStats stats;
    try {
      stats = train_step(batch, params, main_opt, adv_opt, t, config);
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.diverged_at = e.iteration;
      result.log.diverged = true;
      result.log.diverged_at = e.iteration;
      result.stopped_at = t;
      break;
    }
    result.log.steps.push_back(StepRow{t, stats.loss.l_vqa, stats.loss.l_adv,
                                       stats.loss.l_total, stats.lambda_grl,
                                       stats.gn_q_vqa, stats.gn_q_adv,
                                       stats.gn_adv});
    result.stopped_at = t;

    if (t % config.eval_every == 0) {
      auto record = [&](const char* split, std::span<const Example> ex) {
        SplitScores s = score_by_type(model_cfg, params, bundle.spec, ex,
                                      config.batch_size);
        result.log.evals.push_back(
            EvalRow{t, split, s.overall, s.yesno, s.number, s.other});
        return s;
      };
      if (config.eval_train_split) record("train", bundle.train);
      SplitScores val = record("val", bundle.val);
      record("test", bundle.test);
      const bool was_best_before = stopper.has_best();
      const double prev_best = stopper.best_score();
      stop = stopper.observe(t, val.overall);
      if (!was_best_before || val.overall > prev_best) best = params;
    }
  }

  result.best_iter = stopper.has_best() ? stopper.best_iter() : result.stopped_at;
  result.best_val = stopper.has_best() ? stopper.best_score() : 0.0;
  result.params = stopper.has_best() ? std::move(best) : std::move(params);
  return result;
}

}  // namespace advreg
