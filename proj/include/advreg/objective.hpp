// Soft-target cross entropy, the composed min-max loss, and the 10-annotator
// scoring rule. The per-answer weighting min(count/3, 1) is used both as the
// cross-entropy target and as the score of a prediction.
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "advreg/autodiff.hpp"
#include "advreg/common.hpp"
#include "advreg/tensor.hpp"

namespace advreg {

struct SoftTarget {
  std::vector<double> weights;  // one entry per answer in the vocab, in [0,1]
};

inline void validate(const SoftTarget& t) {
  for (double w : t.weights) {
    if (!(w >= 0.0 && w <= 1.0)) {
      throw DataError("soft target weight outside [0,1]");
    }
  }
}

struct LossBreakdown {
  double l_vqa = 0.0;
  double l_adv = 0.0;
  double l_total = 0.0;
  double lambda_adv = 0.0;
};

// weight(answer) = min(count(answer)/3, 1) over exactly 10 annotator answers.
inline SoftTarget annotator_soft_targets(
    const std::vector<std::int32_t>& annotator_answers,
    std::int64_t vocab_size) {
  if (annotator_answers.size() != 10) {
    throw DataError("annotator_soft_targets: expected exactly 10 answers, got " +
                    std::to_string(annotator_answers.size()));
  }
  SoftTarget t;
  t.weights.assign(static_cast<std::size_t>(vocab_size), 0.0);
  for (auto a : annotator_answers) {
    if (a < 0 || a >= vocab_size) {
      throw DataError("annotator answer id outside vocab");
    }
    t.weights[static_cast<std::size_t>(a)] += 1.0 / 3.0;
  }
  for (double& w : t.weights) w = std::min(w, 1.0);
  return t;
}

// Score of predicting `predicted` against the 10 annotator answers.
inline double vqa_score(std::int32_t predicted,
                        const std::vector<std::int32_t>& annotator_answers) {
  int count = 0;
  for (auto a : annotator_answers) {
    if (a == predicted) ++count;
  }
  return std::min(static_cast<double>(count) / 3.0, 1.0);
}

// Mean over the batch of -sum_i a_i * log_probs[i]. Nonnegative whenever
// log_probs come from log_softmax.
inline NodeId soft_cross_entropy(Tape& tape, NodeId log_probs,
                                 std::span<const SoftTarget> targets) {
  const Tensor& lp = tape.value(log_probs);
  if (lp.rank() != 2) throw DimensionError("soft_cross_entropy: expected [BxC]");
  const std::int64_t batch = lp.rows(), classes = lp.cols();
  if (static_cast<std::int64_t>(targets.size()) != batch) {
    throw DataError("soft_cross_entropy: batch size mismatch");
  }
  Tensor weights = Tensor::zeros({batch, classes});
  for (std::int64_t i = 0; i < batch; ++i) {
    const SoftTarget& t = targets[static_cast<std::size_t>(i)];
    if (static_cast<std::int64_t>(t.weights.size()) != classes) {
      throw DataError("soft_cross_entropy: target width mismatch");
    }
    validate(t);
    for (std::int64_t c = 0; c < classes; ++c) {
      weights.at(i, c) = t.weights[static_cast<std::size_t>(c)];
    }
  }
  NodeId weighted = tape.mul_const(log_probs, std::move(weights));
  return tape.scale(tape.sum(weighted), -1.0 / static_cast<double>(batch));
}

// l_vqa - lambda_adv * l_adv as a tape node, so one backward pass drives both
// branches when needed. The trainer's per-branch passes are built on the same
// operands.
inline NodeId total_loss(Tape& tape, NodeId l_vqa, NodeId l_adv,
                         double lambda_adv) {
  if (lambda_adv < 0.0) throw ParameterError("total_loss: lambda_adv must be >= 0");
  if (!tape.value(l_vqa).is_scalar() || !tape.value(l_adv).is_scalar()) {
    throw ContractError("total_loss: losses must be scalars");
  }
  return tape.axpby(1.0, l_vqa, -lambda_adv, l_adv);
}

}  // namespace advreg
