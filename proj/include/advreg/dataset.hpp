// Synthetic changing-priors data: per-question-type answer distributions that
// are rank-reversed between train and test. Image features carry the answer
// signature with probability signal_strength; selected question types carry a
// noisy answer-correlated content token. Everything is a pure function of the
// spec, including its seed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advreg/common.hpp"
#include "advreg/objective.hpp"

namespace advreg {

enum class AnswerType { kYesNo, kNumber, kOther };

inline const char* to_string(AnswerType t) {
  switch (t) {
    case AnswerType::kYesNo: return "YesNo";
    case AnswerType::kNumber: return "Number";
    case AnswerType::kOther: return "Other";
  }
  return "Other";
}

inline AnswerType answer_type_from_string(const std::string& s) {
  if (s == "YesNo") return AnswerType::kYesNo;
  if (s == "Number") return AnswerType::kNumber;
  if (s == "Other") return AnswerType::kOther;
  throw DataError("unknown answer type: " + s);
}

struct QuestionType {
  std::string name;
  AnswerType answer_type = AnswerType::kOther;
  std::vector<std::int32_t> prefix_tokens;  // identify this type in a question
  std::vector<std::int32_t> candidates;     // global answer ids
  std::vector<double> train_prior;          // over candidates
  std::vector<double> test_prior;
  // When set, one content token indicates the ground answer with probability
  // correlated_token_reliability; a useful linguistic cue the adversary can
  // also exploit.
  bool has_correlated_token = false;
};

struct ChangingPriorsSpec {
  std::vector<QuestionType> question_types;
  std::vector<std::string> answer_names;
  std::int64_t content_vocab_size = 64;  // indicator tokens + fillers
  std::int64_t image_feature_dim = 64;
  double annotator_noise = 0.02;      // chance an annotator deviates
  std::int64_t examples_per_split = 10000;
  double signal_strength = 0.7;       // chance features encode the answer
  double correlated_token_reliability = 0.8;
  double signature_scale = 1.5;       // magnitude of answer feature signatures
  // Binary answers carry visually subtler evidence than object or count
  // answers; their signatures are scaled down by this ratio.
  double yesno_signature_ratio = 0.35;
  // Images also carry evidence of the question type itself (a court hints a
  // sport question), present whether or not the answer signal is.
  double type_signature_scale = 1.0;
  std::int64_t filler_tokens_per_question = 2;
  std::uint64_t seed = 0;

  std::int64_t answer_vocab_size() const {
    return static_cast<std::int64_t>(answer_names.size());
  }
  std::int64_t prefix_token_count() const {
    std::int64_t n = 0;
    for (const auto& t : question_types) {
      for (auto tok : t.prefix_tokens) n = std::max<std::int64_t>(n, tok + 1);
    }
    return n;
  }
  std::int64_t question_vocab_size() const {
    return prefix_token_count() + content_vocab_size;
  }
  // Content token indicating a specific global answer.
  std::int32_t indicator_token(std::int32_t answer) const {
    return static_cast<std::int32_t>(prefix_token_count()) + answer;
  }
  std::int32_t first_filler_token() const {
    return static_cast<std::int32_t>(prefix_token_count() + answer_vocab_size());
  }
  std::int64_t filler_count() const {
    return content_vocab_size - answer_vocab_size();
  }
};

inline void validate(const ChangingPriorsSpec& spec) {
  if (spec.question_types.empty()) {
    throw ConfigError("dataset spec: no question types");
  }
  if (spec.answer_names.empty()) {
    throw ConfigError("dataset spec: no answers");
  }
  if (spec.filler_count() < 1) {
    throw ConfigError("dataset spec: content_vocab_size must exceed answer count");
  }
  if (spec.image_feature_dim < 1 || spec.examples_per_split < 1 ||
      spec.filler_tokens_per_question < 0) {
    throw ConfigError("dataset spec: invalid sizes");
  }
  auto in01 = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string("dataset spec: ") + what +
                        " must be in [0,1]");
    }
  };
  in01(spec.annotator_noise, "annotator_noise");
  in01(spec.signal_strength, "signal_strength");
  in01(spec.correlated_token_reliability, "correlated_token_reliability");
  bool any_changed = false;
  for (const auto& t : spec.question_types) {
    if (t.candidates.empty()) {
      throw ConfigError("dataset spec: type '" + t.name + "' has no candidates");
    }
    if (t.prefix_tokens.empty()) {
      throw ConfigError("dataset spec: type '" + t.name + "' has no prefix tokens");
    }
    for (auto a : t.candidates) {
      if (a < 0 || a >= spec.answer_vocab_size()) {
        throw ConfigError("dataset spec: candidate answer id out of range");
      }
    }
    auto check_prior = [&](const std::vector<double>& p, const char* which) {
      if (p.size() != t.candidates.size()) {
        throw ConfigError("dataset spec: " + t.name + " " + which +
                          " length mismatch");
      }
      double s = 0.0;
      for (double v : p) {
        if (v < 0.0) throw ConfigError("dataset spec: negative prior entry");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) {
        throw ConfigError("dataset spec: " + t.name + " " + which +
                          " does not sum to 1");
      }
    };
    check_prior(t.train_prior, "train_prior");
    check_prior(t.test_prior, "test_prior");
    if (t.train_prior != t.test_prior) any_changed = true;
  }
  if (!any_changed) {
    throw ConfigError(
        "dataset spec: test priors equal train priors for every type; "
        "changing-priors property violated");
  }
}

struct Example {
  std::vector<double> image_features;
  std::vector<std::int32_t> question_tokens;
  std::int32_t question_type_id = 0;
  AnswerType answer_type = AnswerType::kOther;
  std::vector<std::int32_t> annotator_answers;  // exactly 10
  SoftTarget soft_target;
  std::int32_t ground_answer = 0;
};

struct DatasetBundle {
  std::vector<Example> train, val, test;
  ChangingPriorsSpec spec;
};

// Rank reversal: the most likely candidate receives the least likely
// probability mass and so on. Exactly involutive for distinct entries.
inline std::vector<double> invert_priors(const std::vector<double>& p) {
  const std::size_t n = p.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = p[order[i]];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[order[i]] = sorted[n - 1 - i];
  return out;
}

// Per-answer feature signature means, deterministic in the spec seed. Answers
// that appear in any YesNo type's candidate set get the reduced magnitude.
inline std::vector<std::vector<double>> answer_signatures(
    const ChangingPriorsSpec& spec) {
  std::vector<bool> is_binary(static_cast<std::size_t>(spec.answer_vocab_size()),
                              false);
  for (const auto& qt : spec.question_types) {
    if (qt.answer_type != AnswerType::kYesNo) continue;
    for (auto a : qt.candidates) is_binary[static_cast<std::size_t>(a)] = true;
  }
  Rng rng(spec.seed, "signatures");
  std::vector<std::vector<double>> sig(
      static_cast<std::size_t>(spec.answer_vocab_size()));
  for (std::size_t a = 0; a < sig.size(); ++a) {
    const double scale =
        spec.signature_scale * (is_binary[a] ? spec.yesno_signature_ratio : 1.0);
    sig[a].resize(static_cast<std::size_t>(spec.image_feature_dim));
    for (double& v : sig[a]) v = scale * rng.normal();
  }
  return sig;
}

// Per-question-type feature means, always present in an example's features.
inline std::vector<std::vector<double>> type_signatures(
    const ChangingPriorsSpec& spec) {
  Rng rng(spec.seed, "type_signatures");
  std::vector<std::vector<double>> sig(spec.question_types.size());
  for (auto& s : sig) {
    s.resize(static_cast<std::size_t>(spec.image_feature_dim));
    for (double& v : s) v = spec.type_signature_scale * rng.normal();
  }
  return sig;
}

namespace detail {

inline Example draw_example(const ChangingPriorsSpec& spec,
                            const std::vector<std::vector<double>>& signatures,
                            const std::vector<std::vector<double>>& type_sigs,
                            bool use_test_prior, Rng& rng) {
  Example ex;
  const auto n_types = spec.question_types.size();
  ex.question_type_id = static_cast<std::int32_t>(rng.index(n_types));
  const QuestionType& qt =
      spec.question_types[static_cast<std::size_t>(ex.question_type_id)];
  ex.answer_type = qt.answer_type;
  const auto& prior = use_test_prior ? qt.test_prior : qt.train_prior;
  const std::size_t local = rng.categorical(prior);
  ex.ground_answer = qt.candidates[local];

  // Image features: answer signature + unit noise, or pure background noise.
  const bool has_signal = rng.uniform01() < spec.signal_strength;
  ex.image_features.resize(static_cast<std::size_t>(spec.image_feature_dim));
  const auto& mean = signatures[static_cast<std::size_t>(ex.ground_answer)];
  const auto& tmean = type_sigs[static_cast<std::size_t>(ex.question_type_id)];
  for (std::size_t d = 0; d < ex.image_features.size(); ++d) {
    ex.image_features[d] = tmean[d] + (has_signal ? mean[d] : 0.0) + rng.normal();
  }

  // Question tokens: type prefix, one content slot, then filler tokens.
  ex.question_tokens = qt.prefix_tokens;
  const auto filler = [&]() {
    return static_cast<std::int32_t>(spec.first_filler_token() +
                                     static_cast<std::int32_t>(rng.index(
                                         static_cast<std::size_t>(spec.filler_count()))));
  };
  if (qt.has_correlated_token) {
    if (rng.uniform01() < spec.correlated_token_reliability) {
      ex.question_tokens.push_back(spec.indicator_token(ex.ground_answer));
    } else {
      ex.question_tokens.push_back(filler());
    }
  } else {
    ex.question_tokens.push_back(filler());
  }
  for (std::int64_t i = 0; i < spec.filler_tokens_per_question; ++i) {
    ex.question_tokens.push_back(filler());
  }

  // Annotators: ground answer, except each independently deviates to another
  // candidate of the type.
  ex.annotator_answers.reserve(10);
  for (int i = 0; i < 10; ++i) {
    std::int32_t a = ex.ground_answer;
    if (qt.candidates.size() > 1 && rng.uniform01() < spec.annotator_noise) {
      std::size_t pick = rng.index(qt.candidates.size() - 1);
      // Skip over the ground answer's slot.
      if (qt.candidates[pick] == ex.ground_answer) pick = qt.candidates.size() - 1;
      a = qt.candidates[pick];
    }
    ex.annotator_answers.push_back(a);
  }
  ex.soft_target =
      annotator_soft_targets(ex.annotator_answers, spec.answer_vocab_size());
  return ex;
}

}  // namespace detail

// Generates train/val/test. The val split is 10% of the train pool, sampled
// without replacement; the test split draws from the inverted priors.
inline DatasetBundle generate(const ChangingPriorsSpec& spec) {
  validate(spec);
  const auto signatures = answer_signatures(spec);
  const auto type_sigs = type_signatures(spec);

  DatasetBundle bundle;
  bundle.spec = spec;

  std::vector<Example> pool;
  pool.reserve(static_cast<std::size_t>(spec.examples_per_split));
  {
    Rng rng(spec.seed, "train");
    for (std::int64_t i = 0; i < spec.examples_per_split; ++i) {
      pool.push_back(detail::draw_example(spec, signatures, type_sigs, false, rng));
    }
  }
  {
    Rng rng(spec.seed, "test");
    bundle.test.reserve(static_cast<std::size_t>(spec.examples_per_split));
    for (std::int64_t i = 0; i < spec.examples_per_split; ++i) {
      bundle.test.push_back(
          detail::draw_example(spec, signatures, type_sigs, true, rng));
    }
  }

  const auto n_pool = pool.size();
  const auto n_val = static_cast<std::size_t>(
      std::llround(0.1 * static_cast<double>(n_pool)));
  std::vector<std::size_t> idx(n_pool);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(spec.seed, "valsplit");
  rng.shuffle(idx);
  std::vector<bool> is_val(n_pool, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[idx[i]] = true;
  bundle.train.reserve(n_pool - n_val);
  bundle.val.reserve(n_val);
  for (std::size_t i = 0; i < n_pool; ++i) {
    (is_val[i] ? bundle.val : bundle.train).push_back(std::move(pool[i]));
  }
  return bundle;
}

// ----------------------------------------------------------------------------
// Built-in specs. Version 1 emulates the strongly skewed binary priors
// ("no" for roughly 90% of some question forms); version 2 keeps the same
// structure with milder skew. Test priors are the rank reversal of train.
// ----------------------------------------------------------------------------

inline ChangingPriorsSpec default_spec(int version) {
  if (version != 1 && version != 2) {
    throw ConfigError("default_spec: version must be 1 or 2");
  }
  ChangingPriorsSpec spec;
  spec.answer_names = {
      "no",     "yes",                                            // 0-1
      "0",      "1",    "2",      "3",     "4",        "5",       // 2-7
      "red",    "blue", "green",  "white", "black",               // 8-12
      "dog",    "cat",  "horse",  "sheep",                        // 13-16
      "tennis", "skiing", "surfing", "soccer", "baseball", "golf" // 17-22
  };
  const std::vector<std::int32_t> yesno = {0, 1};
  const std::vector<std::int32_t> numbers = {2, 3, 4, 5, 6, 7};
  const std::vector<std::int32_t> colors = {8, 9, 10, 11, 12};
  const std::vector<std::int32_t> animals = {13, 14, 15, 16};
  const std::vector<std::int32_t> sports = {17, 18, 19, 20, 21, 22};

  struct Proto {
    const char* name;
    AnswerType at;
    std::vector<std::int32_t> cands;
    std::vector<double> v1_prior;
    std::vector<double> v2_prior;
    bool correlated;
  };
  // YesNo majorities alternate so the aggregate yes/no balance is even; a
  // type-blind predictor gains nothing while a type-reading one gains a lot.
  const std::vector<Proto> protos = {
      {"is_there_a", AnswerType::kYesNo, yesno, {0.9, 0.1}, {0.65, 0.35}, false},
      {"does_it_have", AnswerType::kYesNo, yesno, {0.1, 0.9}, {0.35, 0.65}, false},
      {"is_this", AnswerType::kYesNo, yesno, {0.88, 0.12}, {0.62, 0.38}, false},
      {"is_the_person", AnswerType::kYesNo, yesno, {0.12, 0.88}, {0.38, 0.62}, false},
      {"are_there_any", AnswerType::kYesNo, yesno, {0.9, 0.1}, {0.65, 0.35}, false},
      {"are_they", AnswerType::kYesNo, yesno, {0.1, 0.9}, {0.35, 0.65}, false},
      {"is_it", AnswerType::kYesNo, yesno, {0.88, 0.12}, {0.62, 0.38}, false},
      {"do_you_see", AnswerType::kYesNo, yesno, {0.12, 0.88}, {0.38, 0.62}, false},
      {"how_many", AnswerType::kNumber, numbers,
       {0.08, 0.42, 0.28, 0.12, 0.06, 0.04},
       {0.12, 0.3, 0.22, 0.16, 0.12, 0.08}, false},
      {"what_color", AnswerType::kOther, colors,
       {0.5, 0.25, 0.12, 0.08, 0.05}, {0.35, 0.25, 0.2, 0.12, 0.08}, true},
      {"what_animal", AnswerType::kOther, animals,
       {0.55, 0.25, 0.12, 0.08}, {0.4, 0.3, 0.18, 0.12}, true},
      {"what_sport", AnswerType::kOther, sports,
       {0.4, 0.25, 0.15, 0.1, 0.06, 0.04},
       {0.3, 0.25, 0.18, 0.12, 0.09, 0.06}, true},
  };

  std::int32_t next_prefix = 0;
  for (const auto& proto : protos) {
    QuestionType qt;
    qt.name = proto.name;
    qt.answer_type = proto.at;
    qt.prefix_tokens = {next_prefix, next_prefix + 1};
    next_prefix += 2;
    qt.candidates = proto.cands;
    qt.train_prior = version == 1 ? proto.v1_prior : proto.v2_prior;
    qt.test_prior = invert_priors(qt.train_prior);
    qt.has_correlated_token = proto.correlated;
    spec.question_types.push_back(std::move(qt));
  }
  validate(spec);
  return spec;
}

// ----------------------------------------------------------------------------
// Serialization: spec.json plus JSON-lines, one example per line with fields
// image_features, question_tokens, question_type_id, answer_type,
// annotator_answers.
// ----------------------------------------------------------------------------

inline nlohmann::json to_json(const ChangingPriorsSpec& spec) {
  nlohmann::json types = nlohmann::json::array();
  for (const auto& t : spec.question_types) {
    types.push_back({{"name", t.name},
                     {"answer_type", to_string(t.answer_type)},
                     {"prefix_tokens", t.prefix_tokens},
                     {"candidates", t.candidates},
                     {"train_prior", t.train_prior},
                     {"test_prior", t.test_prior},
                     {"has_correlated_token", t.has_correlated_token}});
  }
  return nlohmann::json{
      {"question_types", std::move(types)},
      {"answer_names", spec.answer_names},
      {"content_vocab_size", spec.content_vocab_size},
      {"image_feature_dim", spec.image_feature_dim},
      {"annotator_noise", spec.annotator_noise},
      {"examples_per_split", spec.examples_per_split},
      {"signal_strength", spec.signal_strength},
      {"correlated_token_reliability", spec.correlated_token_reliability},
      {"signature_scale", spec.signature_scale},
      {"yesno_signature_ratio", spec.yesno_signature_ratio},
      {"type_signature_scale", spec.type_signature_scale},
      {"filler_tokens_per_question", spec.filler_tokens_per_question},
      {"seed", spec.seed}};
}

inline ChangingPriorsSpec spec_from_json(const nlohmann::json& j) {
  ChangingPriorsSpec spec;
  spec.answer_names = j.at("answer_names").get<std::vector<std::string>>();
  spec.content_vocab_size = j.at("content_vocab_size").get<std::int64_t>();
  spec.image_feature_dim = j.at("image_feature_dim").get<std::int64_t>();
  spec.annotator_noise = j.at("annotator_noise").get<double>();
  spec.examples_per_split = j.at("examples_per_split").get<std::int64_t>();
  spec.signal_strength = j.at("signal_strength").get<double>();
  spec.correlated_token_reliability =
      j.at("correlated_token_reliability").get<double>();
  spec.signature_scale = j.at("signature_scale").get<double>();
  spec.yesno_signature_ratio = j.at("yesno_signature_ratio").get<double>();
  spec.type_signature_scale = j.at("type_signature_scale").get<double>();
  spec.filler_tokens_per_question =
      j.at("filler_tokens_per_question").get<std::int64_t>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jt : j.at("question_types")) {
    QuestionType t;
    t.name = jt.at("name").get<std::string>();
    t.answer_type = answer_type_from_string(jt.at("answer_type").get<std::string>());
    t.prefix_tokens = jt.at("prefix_tokens").get<std::vector<std::int32_t>>();
    t.candidates = jt.at("candidates").get<std::vector<std::int32_t>>();
    t.train_prior = jt.at("train_prior").get<std::vector<double>>();
    t.test_prior = jt.at("test_prior").get<std::vector<double>>();
    t.has_correlated_token = jt.at("has_correlated_token").get<bool>();
    spec.question_types.push_back(std::move(t));
  }
  validate(spec);
  return spec;
}

inline std::string to_jsonl(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::json j{{"image_features", ex.image_features},
                     {"question_tokens", ex.question_tokens},
                     {"question_type_id", ex.question_type_id},
                     {"answer_type", to_string(ex.answer_type)},
                     {"annotator_answers", ex.annotator_answers}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Example> examples_from_jsonl(const std::string& text,
                                                const ChangingPriorsSpec& spec) {
  std::vector<Example> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text.substr(pos, end - pos));
      } catch (const nlohmann::json::exception& e) {
        throw DataError("jsonl parse error: " + std::string(e.what()));
      }
      Example ex;
      ex.image_features = j.at("image_features").get<std::vector<double>>();
      ex.question_tokens =
          j.at("question_tokens").get<std::vector<std::int32_t>>();
      ex.question_type_id = j.at("question_type_id").get<std::int32_t>();
      ex.answer_type =
          answer_type_from_string(j.at("answer_type").get<std::string>());
      ex.annotator_answers =
          j.at("annotator_answers").get<std::vector<std::int32_t>>();
      ex.soft_target =
          annotator_soft_targets(ex.annotator_answers, spec.answer_vocab_size());
      // Ground answer is not serialized; reconstruct the modal annotator
      // answer (ties to the lowest id) for downstream convenience.
      std::int32_t best = -1;
      int best_count = -1;
      for (auto a : ex.annotator_answers) {
        int count = 0;
        for (auto b : ex.annotator_answers) count += (a == b);
        if (count > best_count || (count == best_count && a < best)) {
          best = a;
          best_count = count;
        }
      }
      ex.ground_answer = best;
      out.push_back(std::move(ex));
    }
    pos = end + 1;
  }
  return out;
}

inline void save_bundle(const std::filesystem::path& dir,
                        const DatasetBundle& bundle) {
  write_file_atomic(dir / "spec.json", to_json(bundle.spec).dump(2) + "\n");
  write_file_atomic(dir / "train.jsonl", to_jsonl(bundle.train));
  write_file_atomic(dir / "val.jsonl", to_jsonl(bundle.val));
  write_file_atomic(dir / "test.jsonl", to_jsonl(bundle.test));
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
  DatasetBundle bundle;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "spec.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("spec.json parse error: " + std::string(e.what()));
  }
  bundle.spec = spec_from_json(j);
  bundle.train = examples_from_jsonl(read_file(dir / "train.jsonl"), bundle.spec);
  bundle.val = examples_from_jsonl(read_file(dir / "val.jsonl"), bundle.spec);
  bundle.test = examples_from_jsonl(read_file(dir / "test.jsonl"), bundle.spec);
  return bundle;
}

}  // namespace advreg
