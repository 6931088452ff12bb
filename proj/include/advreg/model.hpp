// The modular two-input classifier: image encoder f_v, question encoder f_q,
// multimodal fusion f_z, answer head g_vqa, and the adversary head g_adv that
// reads only the question encoding through a gradient reversal layer.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advreg/autodiff.hpp"
#include "advreg/common.hpp"
#include "advreg/tensor.hpp"

namespace advreg {

struct ModelConfig {
  std::int64_t question_vocab_size = 0;  // embedding rows; set from the dataset
  std::int64_t embed_dim = 32;
  std::int64_t question_hidden_dim = 32;
  std::int64_t image_input_dim = 16;
  std::int64_t fused_dim = 48;
  std::int64_t answer_vocab_size = 0;
  std::int64_t adversary_hidden_layers = 2;   // N, grid {1,2,3}
  std::int64_t adversary_hidden_units = 512;  // h, grid {256,512,1024,2048}
  std::uint64_t seed = 0;
};

inline void validate(const ModelConfig& c) {
  auto positive = [](std::int64_t v, const char* what) {
    if (v < 1) throw ConfigError(std::string("model config: ") + what +
                                 " must be >= 1");
  };
  positive(c.question_vocab_size, "question_vocab_size");
  positive(c.embed_dim, "embed_dim");
  positive(c.question_hidden_dim, "question_hidden_dim");
  positive(c.image_input_dim, "image_input_dim");
  positive(c.fused_dim, "fused_dim");
  positive(c.answer_vocab_size, "answer_vocab_size");
  positive(c.adversary_hidden_layers, "adversary_hidden_layers");
  positive(c.adversary_hidden_units, "adversary_hidden_units");
}

struct Parameter {
  std::string name;
  Tensor value;
};

struct ParamGroup {
  std::string name;
  std::vector<Parameter> tensors;

  std::int64_t numel() const {
    std::int64_t n = 0;
    for (const auto& p : tensors) n += p.value.numel();
    return n;
  }
};

// The five disjoint parameter groups. theta_q is the only group reachable
// from both loss branches.
struct ModelParams {
  ParamGroup theta_v, theta_q, theta_z, theta_vqa, theta_adv;

  std::vector<ParamGroup*> groups() {
    return {&theta_v, &theta_q, &theta_z, &theta_vqa, &theta_adv};
  }
  std::vector<const ParamGroup*> groups() const {
    return {&theta_v, &theta_q, &theta_z, &theta_vqa, &theta_adv};
  }
};

// Fixed tensor order within each group; forward code indexes by position.
// theta_q: {embedding[VxE], w[ExH], b[H]}
// theta_v: {w[DxF], b[F]}
// theta_z: {v_w[FxF], v_b[F], q_w[HxF], q_b[F]}
// theta_vqa: {w[FxA], b[A]}
// theta_adv: {w0, b0, ..., w_out, b_out}
inline ModelParams init_params(const ModelConfig& cfg) {
  validate(cfg);
  auto glorot = [&](const std::string& group, const std::string& name,
                    std::int64_t fan_in, std::int64_t fan_out,
                    std::vector<std::int64_t> shape) {
    Rng rng(cfg.seed, group + "/" + name);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values) v = rng.uniform(-a, a);
    return Parameter{name, std::move(t)};
  };
  auto zeros = [](const std::string& name, std::int64_t n) {
    return Parameter{name, Tensor::zeros({n})};
  };

  ModelParams p;
  p.theta_q.name = "theta_q";
  p.theta_q.tensors.push_back(glorot("theta_q", "embedding",
                                     cfg.question_vocab_size, cfg.embed_dim,
                                     {cfg.question_vocab_size, cfg.embed_dim}));
  p.theta_q.tensors.push_back(glorot("theta_q", "w", cfg.embed_dim,
                                     cfg.question_hidden_dim,
                                     {cfg.embed_dim, cfg.question_hidden_dim}));
  p.theta_q.tensors.push_back(zeros("b", cfg.question_hidden_dim));

  p.theta_v.name = "theta_v";
  p.theta_v.tensors.push_back(glorot("theta_v", "w", cfg.image_input_dim,
                                     cfg.fused_dim,
                                     {cfg.image_input_dim, cfg.fused_dim}));
  p.theta_v.tensors.push_back(zeros("b", cfg.fused_dim));

  p.theta_z.name = "theta_z";
  p.theta_z.tensors.push_back(glorot("theta_z", "v_w", cfg.fused_dim,
                                     cfg.fused_dim, {cfg.fused_dim, cfg.fused_dim}));
  p.theta_z.tensors.push_back(zeros("v_b", cfg.fused_dim));
  p.theta_z.tensors.push_back(glorot("theta_z", "q_w", cfg.question_hidden_dim,
                                     cfg.fused_dim,
                                     {cfg.question_hidden_dim, cfg.fused_dim}));
  p.theta_z.tensors.push_back(zeros("q_b", cfg.fused_dim));

  p.theta_vqa.name = "theta_vqa";
  p.theta_vqa.tensors.push_back(glorot("theta_vqa", "w", cfg.fused_dim,
                                       cfg.answer_vocab_size,
                                       {cfg.fused_dim, cfg.answer_vocab_size}));
  p.theta_vqa.tensors.push_back(zeros("b", cfg.answer_vocab_size));

  p.theta_adv.name = "theta_adv";
  std::int64_t in = cfg.question_hidden_dim;
  for (std::int64_t layer = 0; layer < cfg.adversary_hidden_layers; ++layer) {
    const std::string wn = "w" + std::to_string(layer);
    const std::string bn = "b" + std::to_string(layer);
    p.theta_adv.tensors.push_back(glorot("theta_adv", wn, in,
                                         cfg.adversary_hidden_units,
                                         {in, cfg.adversary_hidden_units}));
    p.theta_adv.tensors.push_back(zeros(bn, cfg.adversary_hidden_units));
    in = cfg.adversary_hidden_units;
  }
  p.theta_adv.tensors.push_back(glorot("theta_adv", "w_out", in,
                                       cfg.answer_vocab_size,
                                       {in, cfg.answer_vocab_size}));
  p.theta_adv.tensors.push_back(zeros("b_out", cfg.answer_vocab_size));
  return p;
}

// Leaf node ids for every parameter tensor, in group order, on one tape.
struct BoundParams {
  std::vector<NodeId> v, q, z, vqa, adv;
};

inline BoundParams bind(Tape& tape, const ModelParams& params) {
  BoundParams b;
  auto bind_group = [&tape](const ParamGroup& g, std::vector<NodeId>& ids) {
    ids.reserve(g.tensors.size());
    for (const auto& p : g.tensors) ids.push_back(tape.leaf(p.value));
  };
  bind_group(params.theta_v, b.v);
  bind_group(params.theta_q, b.q);
  bind_group(params.theta_z, b.z);
  bind_group(params.theta_vqa, b.vqa);
  bind_group(params.theta_adv, b.adv);
  return b;
}

// f_q: embedding lookup, mean-pool over positions, then linear + relu.
// Mean pooling makes the encoding order-invariant by construction.
inline NodeId encode_questions(Tape& tape, const BoundParams& bp,
                               std::vector<std::vector<std::int32_t>> tokens) {
  NodeId pooled = tape.embed_mean(bp.q[0], std::move(tokens));
  return tape.relu(tape.linear(pooled, bp.q[1], bp.q[2]));
}

inline NodeId encode_question(Tape& tape, const BoundParams& bp,
                              const std::vector<std::int32_t>& tokens) {
  return encode_questions(tape, bp, {tokens});
}

// f_v: linear + relu projection of the raw feature vector(s).
inline NodeId encode_images(Tape& tape, const BoundParams& bp,
                            const Tensor& features) {
  if (features.rank() != 2 ||
      features.cols() != tape.value(bp.v[0]).rows()) {
    throw DataError("encode_images: feature length mismatch");
  }
  return tape.relu(tape.linear(tape.leaf(features), bp.v[0], bp.v[1]));
}

inline NodeId encode_image(Tape& tape, const BoundParams& bp,
                           const std::vector<double>& features) {
  Tensor t({1, static_cast<std::int64_t>(features.size())}, features);
  return encode_images(tape, bp, t);
}

// f_z: elementwise product of the projected branches.
inline NodeId fuse(Tape& tape, const BoundParams& bp, NodeId v, NodeId q) {
  NodeId pv = tape.relu(tape.linear(v, bp.z[0], bp.z[1]));
  NodeId pq = tape.relu(tape.linear(q, bp.z[2], bp.z[3]));
  return tape.mul(pv, pq);
}

// g_vqa: answer log-probabilities from the fused representation.
inline NodeId predict_vqa(Tape& tape, const BoundParams& bp, NodeId z) {
  return tape.log_softmax(tape.linear(z, bp.vqa[0], bp.vqa[1]));
}

// The adversary stack without the reversal layer: N hidden relu layers, then
// linear + log_softmax. Exposed separately so callers can build the
// identity-connected oracle path or a plain question-only classifier.
inline NodeId adv_head(Tape& tape, const BoundParams& bp, NodeId x) {
  NodeId h = x;
  const std::size_t n = bp.adv.size();
  for (std::size_t i = 0; i + 2 < n; i += 2) {
    h = tape.relu(tape.linear(h, bp.adv[i], bp.adv[i + 1]));
  }
  return tape.log_softmax(tape.linear(h, bp.adv[n - 2], bp.adv[n - 1]));
}

// g_adv: answer log-probabilities from the question encoding alone, with
// reversed (and lambda-scaled) gradients flowing back into theta_q.
inline NodeId predict_adv(Tape& tape, const BoundParams& bp, NodeId q,
                          double lambda_grl) {
  return adv_head(tape, bp, tape.grl(q, lambda_grl));
}

// ----------------------------------------------------------------------------
// Checkpoints: versioned JSON, groups mapped by name to shape + row-major
// values.
// ----------------------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "advreg-ckpt-v1";

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"question_vocab_size", c.question_vocab_size},
                        {"embed_dim", c.embed_dim},
                        {"question_hidden_dim", c.question_hidden_dim},
                        {"image_input_dim", c.image_input_dim},
                        {"fused_dim", c.fused_dim},
                        {"answer_vocab_size", c.answer_vocab_size},
                        {"adversary_hidden_layers", c.adversary_hidden_layers},
                        {"adversary_hidden_units", c.adversary_hidden_units},
                        {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.question_vocab_size = j.at("question_vocab_size").get<std::int64_t>();
  c.embed_dim = j.at("embed_dim").get<std::int64_t>();
  c.question_hidden_dim = j.at("question_hidden_dim").get<std::int64_t>();
  c.image_input_dim = j.at("image_input_dim").get<std::int64_t>();
  c.fused_dim = j.at("fused_dim").get<std::int64_t>();
  c.answer_vocab_size = j.at("answer_vocab_size").get<std::int64_t>();
  c.adversary_hidden_layers = j.at("adversary_hidden_layers").get<std::int64_t>();
  c.adversary_hidden_units = j.at("adversary_hidden_units").get<std::int64_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const ModelConfig& cfg, const ModelParams& params) {
  nlohmann::json groups = nlohmann::json::object();
  for (const ParamGroup* g : params.groups()) {
    nlohmann::json jg = nlohmann::json::object();
    for (const Parameter& p : g->tensors) {
      jg[p.name] = {{"shape", p.value.shape}, {"values", p.value.values}};
    }
    groups[g->name] = std::move(jg);
  }
  nlohmann::json j{{"format", kCheckpointFormat},
                   {"config", to_json(cfg)},
                   {"groups", std::move(groups)}};
  write_file_atomic(path, j.dump());
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint parse error: " + std::string(e.what()));
  }
  if (!j.contains("format") || j["format"] != kCheckpointFormat) {
    throw DataError("checkpoint: missing or unsupported format header");
  }
  Checkpoint ckpt;
  ckpt.config = model_config_from_json(j.at("config"));
  // Rebuild with the recorded layout, then overwrite the values.
  ckpt.params = init_params(ckpt.config);
  const auto& groups = j.at("groups");
  for (ParamGroup* g : ckpt.params.groups()) {
    const auto& jg = groups.at(g->name);
    for (Parameter& p : g->tensors) {
      const auto& jp = jg.at(p.name);
      auto shape = jp.at("shape").get<std::vector<std::int64_t>>();
      auto values = jp.at("values").get<std::vector<double>>();
      if (shape != p.value.shape) {
        throw DataError("checkpoint: shape mismatch for " + g->name + "/" +
                        p.name);
      }
      p.value = Tensor(std::move(shape), std::move(values));
    }
  }
  return ckpt;
}

}  // namespace advreg
