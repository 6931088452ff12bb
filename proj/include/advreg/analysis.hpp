// Scoring by question type, the count-weighted difference metric, the exact
// blind-predictor oracle, and cross-run correlation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advreg/dataset.hpp"
#include "advreg/model.hpp"
#include "advreg/objective.hpp"

namespace advreg {

struct TypeScore {
  std::int32_t question_type_id = 0;
  std::string name;
  AnswerType answer_type = AnswerType::kOther;
  std::int64_t n = 0;
  double score = 0.0;
};

struct SplitScores {
  double overall = 0.0;
  double yesno = 0.0;
  double number = 0.0;
  double other = 0.0;
  std::int64_t n_total = 0;
  std::vector<TypeScore> per_type;

  double by_answer_type(AnswerType t) const {
    switch (t) {
      case AnswerType::kYesNo: return yesno;
      case AnswerType::kNumber: return number;
      case AnswerType::kOther: return other;
    }
    return other;
  }
};

// Argmax over one row of log-probabilities; ties break to the lowest id.
inline std::int32_t argmax_row(const Tensor& log_probs, std::int64_t row) {
  std::int32_t best = 0;
  double best_v = log_probs.at(row, 0);
  for (std::int64_t c = 1; c < log_probs.cols(); ++c) {
    const double v = log_probs.at(row, c);
    if (v > best_v) {
      best_v = v;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

// Full-model predictions for a slice of examples; one throwaway tape per batch.
inline std::vector<std::int32_t> predict_answers(const ModelParams& params,
                                                 std::span<const Example> split,
                                                 std::int64_t batch_size = 512) {
  std::vector<std::int32_t> preds;
  preds.reserve(split.size());
  for (std::size_t start = 0; start < split.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(split.size(), start + static_cast<std::size_t>(batch_size));
    const std::int64_t b = static_cast<std::int64_t>(end - start);
    const auto dim =
        static_cast<std::int64_t>(split[start].image_features.size());
    Tensor feats = Tensor::zeros({b, dim});
    std::vector<std::vector<std::int32_t>> tokens;
    tokens.reserve(static_cast<std::size_t>(b));
    for (std::size_t i = start; i < end; ++i) {
      const Example& ex = split[i];
      std::copy(ex.image_features.begin(), ex.image_features.end(),
                feats.values.begin() +
                    static_cast<std::ptrdiff_t>((i - start) *
                                                static_cast<std::size_t>(dim)));
      tokens.push_back(ex.question_tokens);
    }
    Tape tape;
    BoundParams bp = bind(tape, params);
    NodeId q = encode_questions(tape, bp, std::move(tokens));
    NodeId v = encode_images(tape, bp, feats);
    NodeId lp = predict_vqa(tape, bp, fuse(tape, bp, v, q));
    const Tensor& out = tape.value(lp);
    for (std::int64_t i = 0; i < b; ++i) preds.push_back(argmax_row(out, i));
  }
  return preds;
}

// Aggregates per-example scores into per-type, per-answer-type, and overall
// means. Overall equals the example-weighted mean of the per-type scores.
inline SplitScores aggregate_scores(const ChangingPriorsSpec& spec,
                                    std::span<const Example> split,
                                    std::span<const double> scores) {
  SplitScores out;
  std::map<std::int32_t, std::pair<std::int64_t, double>> by_type;
  std::map<int, std::pair<std::int64_t, double>> by_answer;
  double total = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const Example& ex = split[i];
    auto& t = by_type[ex.question_type_id];
    t.first += 1;
    t.second += scores[i];
    auto& a = by_answer[static_cast<int>(ex.answer_type)];
    a.first += 1;
    a.second += scores[i];
    total += scores[i];
  }
  out.n_total = static_cast<std::int64_t>(split.size());
  out.overall = split.empty() ? 0.0 : total / static_cast<double>(split.size());
  auto mean_of = [&](AnswerType at) {
    auto it = by_answer.find(static_cast<int>(at));
    if (it == by_answer.end() || it->second.first == 0) return 0.0;
    return it->second.second / static_cast<double>(it->second.first);
  };
  out.yesno = mean_of(AnswerType::kYesNo);
  out.number = mean_of(AnswerType::kNumber);
  out.other = mean_of(AnswerType::kOther);
  for (const auto& [type_id, agg] : by_type) {
    TypeScore ts;
    ts.question_type_id = type_id;
    const auto& qt = spec.question_types[static_cast<std::size_t>(type_id)];
    ts.name = qt.name;
    ts.answer_type = qt.answer_type;
    ts.n = agg.first;
    ts.score = agg.second / static_cast<double>(agg.first);
    out.per_type.push_back(std::move(ts));
  }
  return out;
}

// Mean score grouped by question type and answer type for a model checkpoint.
inline SplitScores score_by_type(const ModelConfig& cfg,
                                 const ModelParams& params,
                                 const ChangingPriorsSpec& spec,
                                 std::span<const Example> split,
                                 std::int64_t batch_size = 512) {
  if (split.empty()) throw DataError("score_by_type: empty split");
  (void)cfg;
  const auto preds = predict_answers(params, split, batch_size);
  std::vector<double> scores(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    scores[i] = vqa_score(preds[i], split[i].annotator_answers);
  }
  return aggregate_scores(spec, split, scores);
}

// Count-weighted per-type difference; positive when the regularized model is
// better.
inline double delta_metric(std::int64_t n, double score_base, double score_reg) {
  return (static_cast<double>(n) / 100.0) * (score_reg - score_base);
}

// ----------------------------------------------------------------------------
// Blind-predictor oracle: the exact expected score of the per-type
// prior-argmax predictor under the generator's distribution, via the binomial
// law over annotator agreement counts.
// ----------------------------------------------------------------------------

enum class Split { kTrain, kTest };

namespace detail {

inline double binomial_pmf(int n, int k, double p) {
  // n is always 10 here; direct product form is exact enough.
  double coeff = 1.0;
  for (int i = 0; i < k; ++i) {
    coeff *= static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  return coeff * std::pow(p, k) * std::pow(1.0 - p, n - k);
}

// E[min(matches/3, 1)] when each of 10 annotators matches independently with
// probability p.
inline double expected_capped_agreement(double p) {
  double acc = 0.0;
  for (int k = 0; k <= 10; ++k) {
    acc += binomial_pmf(10, k, p) *
           std::min(static_cast<double>(k) / 3.0, 1.0);
  }
  return acc;
}

}  // namespace detail

// Expected score of predicting a fixed candidate c against examples whose
// ground answer is g, given the annotator deviation model.
inline double expected_score_given_ground(const ChangingPriorsSpec& spec,
                                          const QuestionType& qt,
                                          std::int32_t predicted,
                                          std::int32_t ground) {
  const auto k = qt.candidates.size();
  double p_match = 0.0;
  if (predicted == ground) {
    p_match = k > 1 ? 1.0 - spec.annotator_noise : 1.0;
  } else {
    const bool in_candidates =
        std::find(qt.candidates.begin(), qt.candidates.end(), predicted) !=
        qt.candidates.end();
    if (in_candidates && k > 1) {
      p_match = spec.annotator_noise / static_cast<double>(k - 1);
    }
  }
  return detail::expected_capped_agreement(p_match);
}

inline std::int32_t prior_argmax(const QuestionType& qt,
                                 const std::vector<double>& prior) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < prior.size(); ++i) {
    if (prior[i] > prior[best]) best = i;
  }
  return qt.candidates[best];
}

// Exact expected score, per type, of the predictor that always answers the
// argmax of `argmax_prior` while ground answers are drawn from `draw_prior`.
inline double blind_type_score(const ChangingPriorsSpec& spec,
                               const QuestionType& qt,
                               const std::vector<double>& argmax_prior,
                               const std::vector<double>& draw_prior) {
  const std::int32_t c = prior_argmax(qt, argmax_prior);
  double acc = 0.0;
  for (std::size_t g = 0; g < qt.candidates.size(); ++g) {
    acc += draw_prior[g] *
           expected_score_given_ground(spec, qt, c, qt.candidates[g]);
  }
  return acc;
}

// Expected overall score on a split of the blind predictor that answers the
// train-prior argmax of each type (what a question-only model learns), while
// ground answers draw from the split's own prior. Question types are drawn
// uniformly, so the overall is the plain mean.
inline double blind_oracle_score(const ChangingPriorsSpec& spec, Split split) {
  double acc = 0.0;
  for (const auto& qt : spec.question_types) {
    const auto& draw = split == Split::kTrain ? qt.train_prior : qt.test_prior;
    acc += blind_type_score(spec, qt, qt.train_prior, draw);
  }
  return acc / static_cast<double>(spec.question_types.size());
}

// Empirical score of the prior-argmax predictor on concrete examples. The
// prediction prior may differ from the split the examples were drawn from
// (e.g. the train-prior predictor evaluated on inverted test data).
inline double blind_empirical_score(const ChangingPriorsSpec& spec,
                                    Split argmax_prior,
                                    std::span<const Example> examples) {
  if (examples.empty()) throw DataError("blind_empirical_score: empty split");
  std::vector<std::int32_t> pred_by_type;
  for (const auto& qt : spec.question_types) {
    pred_by_type.push_back(prior_argmax(
        qt, argmax_prior == Split::kTrain ? qt.train_prior : qt.test_prior));
  }
  double acc = 0.0;
  for (const auto& ex : examples) {
    acc += vqa_score(pred_by_type[static_cast<std::size_t>(ex.question_type_id)],
                     ex.annotator_answers);
  }
  return acc / static_cast<double>(examples.size());
}

// ----------------------------------------------------------------------------
// Correlation with a permutation p-value.
// ----------------------------------------------------------------------------

struct Correlation {
  double r = 0.0;
  double p = 1.0;
};

inline Correlation correlate(const std::vector<double>& xs,
                             const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw DataError("correlate: length mismatch");
  const std::size_t n = xs.size();
  if (n < 3) throw DataError("correlate: need at least 3 paired observations");

  auto pearson = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
      throw UndefinedError("correlate: zero variance");
    }
    return sab / std::sqrt(saa * sbb);
  };

  Correlation out;
  out.r = pearson(xs, ys);

  // Two-sided permutation test, 10,000 seeded shuffles.
  const int kShuffles = 10000;
  Rng rng(0x9a7ce11ed, "correlate");
  std::vector<double> perm = ys;
  int at_least = 0;
  const double target = std::abs(out.r);
  for (int s = 0; s < kShuffles; ++s) {
    rng.shuffle(perm);
    if (std::abs(pearson(xs, perm)) >= target) ++at_least;
  }
  out.p = static_cast<double>(1 + at_least) / static_cast<double>(1 + kShuffles);
  return out;
}

}  // namespace advreg
