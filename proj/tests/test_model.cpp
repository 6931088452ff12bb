#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "advreg/model.hpp"
#include "advreg/objective.hpp"
#include "testutil.hpp"

using namespace advreg;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.question_vocab_size = 12;
  cfg.embed_dim = 5;
  cfg.question_hidden_dim = 6;
  cfg.image_input_dim = 4;
  cfg.fused_dim = 7;
  cfg.answer_vocab_size = 3;
  cfg.adversary_hidden_layers = 2;
  cfg.adversary_hidden_units = 8;
  cfg.seed = 123;
  return cfg;
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  auto ga = a.groups();
  auto gb = b.groups();
  for (std::size_t g = 0; g < ga.size(); ++g) {
    if (ga[g]->tensors.size() != gb[g]->tensors.size()) return false;
    for (std::size_t i = 0; i < ga[g]->tensors.size(); ++i) {
      const auto& ta = ga[g]->tensors[i].value.values;
      const auto& tb = gb[g]->tensors[i].value.values;
      if (ta.size() != tb.size()) return false;
      if (std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(double)) != 0) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("init is deterministic with zero biases and bounded weights") {
  const ModelConfig cfg = small_config();
  ModelParams a = init_params(cfg);
  ModelParams b = init_params(cfg);
  CHECK(bitwise_equal(a, b));

  ModelConfig other = cfg;
  other.seed = 124;
  CHECK_FALSE(bitwise_equal(a, init_params(other)));

  for (const ParamGroup* g : a.groups()) {
    for (const Parameter& p : g->tensors) {
      if (p.value.rank() == 1) {
        for (double v : p.value.values) CHECK(v == 0.0);
      } else {
        const double bound = std::sqrt(
            6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
        for (double v : p.value.values) CHECK(std::abs(v) <= bound);
      }
    }
  }
}

TEST_CASE("config validation rejects non-positive dimensions") {
  ModelConfig cfg = small_config();
  cfg.fused_dim = 0;
  CHECK_THROWS_AS(init_params(cfg), ConfigError);
}

TEST_CASE("question encoding pools token embeddings order-invariantly") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_params(cfg);

  // Single token: pooled vector is that token's embedding through the MLP.
  {
    Tape tape;
    BoundParams bp = bind(tape, params);
    NodeId q = encode_question(tape, bp, {7});
    const Tensor& emb = params.theta_q.tensors[0].value;
    const Tensor& w = params.theta_q.tensors[1].value;
    const Tensor& b = params.theta_q.tensors[2].value;
    for (std::int64_t j = 0; j < cfg.question_hidden_dim; ++j) {
      double acc = b[j];
      for (std::int64_t e = 0; e < cfg.embed_dim; ++e) {
        acc += emb.at(7, e) * w.at(e, j);
      }
      acc = acc > 0 ? acc : 0;
      CHECK(tape.value(q).at(0, j) == Catch::Approx(acc).epsilon(1e-14));
    }
  }

  // Permutation gives a bitwise identical encoding.
  {
    Tape t1, t2;
    BoundParams b1 = bind(t1, params), b2 = bind(t2, params);
    const Tensor q1 = t1.value(encode_question(t1, b1, {3, 9, 1, 5}));
    const Tensor q2 = t2.value(encode_question(t2, b2, {5, 1, 9, 3}));
    CHECK(std::memcmp(q1.values.data(), q2.values.data(),
                      q1.values.size() * sizeof(double)) == 0);
  }

  // Duplicating every token leaves the mean unchanged.
  {
    Tape t1, t2;
    BoundParams b1 = bind(t1, params), b2 = bind(t2, params);
    const Tensor q1 = t1.value(encode_question(t1, b1, {3, 9}));
    const Tensor q2 = t2.value(encode_question(t2, b2, {3, 9, 3, 9}));
    for (std::size_t i = 0; i < q1.values.size(); ++i) {
      CHECK(q1.values[i] == Catch::Approx(q2.values[i]).margin(1e-12));
    }
  }

  {
    Tape tape;
    BoundParams bp = bind(tape, params);
    CHECK_THROWS_AS(encode_question(tape, bp, {}), DataError);
    CHECK_THROWS_AS(encode_question(tape, bp, {99}), DataError);
  }
}

TEST_CASE("image encoding validates length and is zero at init on zeros") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_params(cfg);
  Tape tape;
  BoundParams bp = bind(tape, params);
  NodeId v = encode_image(tape, bp, {0, 0, 0, 0});
  for (double x : tape.value(v).values) CHECK(x == 0.0);  // relu(zero bias)
  CHECK_THROWS_AS(encode_image(tape, bp, {0, 0}), DataError);
}

TEST_CASE("fusion is multiplicative with identity element") {
  const ModelConfig cfg = small_config();
  ModelParams params = init_params(cfg);
  Rng rng(5);

  // Zeroed question projection collapses z to zero.
  {
    ModelParams p2 = params;
    for (double& v : p2.theta_z.tensors[2].value.values) v = 0.0;  // q_w
    for (double& v : p2.theta_z.tensors[3].value.values) v = 0.0;  // q_b
    Tape tape;
    BoundParams bp = bind(tape, p2);
    NodeId q = encode_question(tape, bp, {1, 2});
    NodeId v = encode_image(tape, bp, {1, -1, 2, 0.5});
    const Tensor& z = tape.value(fuse(tape, bp, v, q));
    for (double x : z.values) CHECK(x == 0.0);
  }

  // All-ones image branch after projection+relu leaves the question branch.
  {
    ModelParams p2 = params;
    for (double& v : p2.theta_z.tensors[0].value.values) v = 0.0;  // v_w
    for (double& v : p2.theta_z.tensors[1].value.values) v = 1.0;  // v_b
    Tape tape;
    BoundParams bp = bind(tape, p2);
    NodeId q = encode_question(tape, bp, {1, 2});
    NodeId v = encode_image(tape, bp, {1, -1, 2, 0.5});
    NodeId z = fuse(tape, bp, v, q);
    // Rebuild just the question branch.
    NodeId pq = tape.relu(tape.linear(q, bp.z[2], bp.z[3]));
    const Tensor& zt = tape.value(z);
    const Tensor& qt = tape.value(pq);
    for (std::size_t i = 0; i < zt.values.size(); ++i) {
      CHECK(zt.values[i] == qt.values[i]);
    }
  }

  // z depends on both inputs for generic parameters.
  {
    auto z_of = [&](std::vector<double> img, std::vector<std::int32_t> toks) {
      Tape tape;
      BoundParams bp = bind(tape, params);
      NodeId q = encode_questions(tape, bp, {std::move(toks)});
      NodeId v = encode_image(tape, bp, img);
      return tape.value(fuse(tape, bp, v, q)).values;
    };
    const auto base = z_of({1, -1, 2, 0.5}, {1, 2});
    const auto img_bump = z_of({1 + 1e-3, -1, 2, 0.5}, {1, 2});
    const auto tok_change = z_of({1, -1, 2, 0.5}, {1, 3});
    double d_img = 0.0, d_tok = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      d_img += std::abs(img_bump[i] - base[i]);
      d_tok += std::abs(tok_change[i] - base[i]);
    }
    CHECK(d_img > 0.0);
    CHECK(d_tok > 0.0);
  }
}

TEST_CASE("vqa head emits a normalized deterministic distribution") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_params(cfg);
  Tape tape;
  BoundParams bp = bind(tape, params);
  NodeId q = encode_question(tape, bp, {1, 2, 3});
  NodeId v = encode_image(tape, bp, {1, -1, 2, 0.5});
  NodeId z = fuse(tape, bp, v, q);
  const Tensor lp1 = tape.value(predict_vqa(tape, bp, z));
  double s = 0.0;
  for (double x : lp1.values) s += std::exp(x);
  CHECK(std::abs(s - 1.0) <= 1e-12);

  const Tensor lp2 = tape.value(predict_vqa(tape, bp, z));
  CHECK(std::memcmp(lp1.values.data(), lp2.values.data(),
                    lp1.values.size() * sizeof(double)) == 0);

  // Two answers, zero logits: uniform.
  ModelConfig two = cfg;
  two.answer_vocab_size = 2;
  ModelParams params2 = init_params(two);
  for (double& x : params2.theta_vqa.tensors[0].value.values) x = 0.0;
  Tape t2;
  BoundParams bp2 = bind(t2, params2);
  NodeId q2 = encode_question(t2, bp2, {1});
  NodeId v2 = encode_image(t2, bp2, {1, 0, 0, 0});
  const Tensor& u = t2.value(predict_vqa(t2, bp2, fuse(t2, bp2, v2, q2)));
  CHECK(u.values[0] == Catch::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(u.values[1] == Catch::Approx(std::log(0.5)).epsilon(1e-14));
}

TEST_CASE("adversary forward ignores lambda; backward obeys the reversal") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_params(cfg);

  auto adv_log_probs = [&](double lambda) {
    Tape tape;
    BoundParams bp = bind(tape, params);
    NodeId q = encode_question(tape, bp, {1, 2});
    return tape.value(predict_adv(tape, bp, q, lambda)).values;
  };
  const auto a0 = adv_log_probs(0.0);
  const auto a5 = adv_log_probs(5.0);
  CHECK(std::memcmp(a0.data(), a5.data(), a0.size() * sizeof(double)) == 0);

  const std::vector<SoftTarget> targets = {SoftTarget{{1.0, 0.0, 0.0}}};
  auto q_grads = [&](double lambda, bool with_grl) {
    Tape tape;
    BoundParams bp = bind(tape, params);
    NodeId q = encode_question(tape, bp, {1, 2});
    NodeId lp = with_grl ? predict_adv(tape, bp, q, lambda)
                         : adv_head(tape, bp, q);
    tape.backward(soft_cross_entropy(tape, lp, targets));
    std::vector<Tensor> out;
    for (NodeId id : bp.q) out.push_back(tape.grad(id));
    return out;
  };

  // lambda = 0: theta_q receives nothing from the adversary loss.
  for (const Tensor& g : q_grads(0.0, true)) {
    for (double v : g.values) CHECK(v == 0.0);
  }

  // lambda = 0.1 equals -0.1 times the identity-connected oracle gradients.
  const auto with = q_grads(0.1, true);
  const auto oracle = q_grads(0.0, false);
  for (std::size_t i = 0; i < with.size(); ++i) {
    for (std::size_t k = 0; k < with[i].values.size(); ++k) {
      const double expected = -0.1 * oracle[i].values[k];
      CHECK(with[i].values[k] == Catch::Approx(expected).margin(1e-15));
    }
  }
}

TEST_CASE("parameter groups are isolated across the two loss branches") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_params(cfg);
  const std::vector<SoftTarget> targets = {SoftTarget{{0.2, 0.8, 0.0}}};

  Tape tape;
  BoundParams bp = bind(tape, params);
  NodeId q = encode_questions(tape, bp, {{1, 2}});
  NodeId v = encode_image(tape, bp, {1, -1, 2, 0.5});
  NodeId z = fuse(tape, bp, v, q);
  NodeId l_vqa = soft_cross_entropy(tape, predict_vqa(tape, bp, z), targets);
  NodeId l_adv =
      soft_cross_entropy(tape, predict_adv(tape, bp, q, 1.0), targets);

  tape.zero_grad();
  tape.backward(l_vqa);
  CHECK(grad_norm(tape, bp.adv) == 0.0);
  CHECK(grad_norm(tape, bp.v) > 0.0);
  CHECK(grad_norm(tape, bp.q) > 0.0);

  tape.zero_grad();
  tape.backward(l_adv);
  CHECK(grad_norm(tape, bp.v) == 0.0);
  CHECK(grad_norm(tape, bp.z) == 0.0);
  CHECK(grad_norm(tape, bp.vqa) == 0.0);
  CHECK(grad_norm(tape, bp.adv) > 0.0);
  CHECK(grad_norm(tape, bp.q) > 0.0);
}

TEST_CASE("the adversary depth/width grid is constructible") {
  for (std::int64_t layers : {1, 2, 3}) {
    for (std::int64_t units : {256, 512, 1024, 2048}) {
      ModelConfig cfg = small_config();
      cfg.adversary_hidden_layers = layers;
      cfg.adversary_hidden_units = units;
      ModelParams params = init_params(cfg);
      CHECK(params.theta_adv.tensors.size() ==
            static_cast<std::size_t>(2 * layers + 2));
      Tape tape;
      BoundParams bp = bind(tape, params);
      NodeId q = encode_question(tape, bp, {1, 2});
      const Tensor& lp = tape.value(predict_adv(tape, bp, q, 0.5));
      CHECK(lp.cols() == cfg.answer_vocab_size);
    }
  }
}

TEST_CASE("checkpoints round-trip bitwise through the versioned format") {
  testutil::TempDir dir("ckpt");
  const ModelConfig cfg = small_config();
  ModelParams params = init_params(cfg);
  const auto path = dir.path() / "model.ckpt.json";
  save_checkpoint(path, cfg, params);

  Checkpoint loaded = load_checkpoint(path);
  CHECK(bitwise_equal(params, loaded.params));
  CHECK(loaded.config.fused_dim == cfg.fused_dim);
  CHECK(loaded.config.seed == cfg.seed);

  write_file_atomic(dir.path() / "bad.json", "{\"format\":\"something-else\"}");
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "bad.json"), DataError);
}
