// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every forward op in topological order. backward(root) runs a
// pass with its own adjoint buffers and then adds the pass results into the
// persistent per-node gradient accumulators, so repeated backward calls
// re-accumulate until zero_grad() is called. The gradient reversal pseudo-op
// (grl) is the one deliberate exception to calculus: identity forward,
// -lambda * upstream on the way back.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "advreg/common.hpp"
#include "advreg/tensor.hpp"

namespace advreg {

// Forward op produced a NaN/Inf. The trainer maps this to a divergence report.
struct NonFiniteError : Error {
  using Error::Error;
};

enum class OpKind {
  kLeaf,
  kLinear,
  kRelu,
  kLogSoftmax,
  kGrl,
  kMul,
  kMulConst,
  kScale,
  kAxpby,
  kSum,
  kEmbedMean,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(NodeId id) const { return node(id).value; }

  NodeId leaf(Tensor t) {
    return push(OpKind::kLeaf, std::move(t), kNoNode, kNoNode, kNoNode, "leaf");
  }

  // out[i,j] = sum_k x[i,k] * W[k,j] + b[j]
  NodeId linear(NodeId x_id, NodeId w_id, NodeId b_id) {
    const Tensor& x = value(x_id);
    const Tensor& w = value(w_id);
    const Tensor& b = value(b_id);
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
      throw DimensionError("linear: expected x[BxI], W[IxO], b[O]");
    }
    const std::int64_t batch = x.rows(), in = x.cols(), out = w.cols();
    if (w.rows() != in || b.rows() != out) {
      throw DimensionError("linear: inner dimensions disagree: x" +
                           x.shape_str() + " W" + w.shape_str() + " b" +
                           b.shape_str());
    }
    Tensor y = Tensor::zeros({batch, out});
    for (std::int64_t i = 0; i < batch; ++i) {
      double* yrow = &y.values[static_cast<std::size_t>(i * out)];
      for (std::int64_t k = 0; k < in; ++k) {
        const double xv = x.at(i, k);
        const double* wrow = &w.values[static_cast<std::size_t>(k * out)];
        for (std::int64_t j = 0; j < out; ++j) yrow[j] += xv * wrow[j];
      }
      for (std::int64_t j = 0; j < out; ++j) yrow[j] += b[j];
    }
    return push(OpKind::kLinear, std::move(y), x_id, w_id, b_id, "linear");
  }

  NodeId relu(NodeId x_id) {
    Tensor y = value(x_id);
    y.node_id = kNoNode;
    for (double& v : y.values) v = v > 0.0 ? v : 0.0;
    return push(OpKind::kRelu, std::move(y), x_id, kNoNode, kNoNode, "relu");
  }

  // Row-wise log softmax with max-subtraction.
  NodeId log_softmax(NodeId x_id) {
    const Tensor& x = value(x_id);
    if (x.rank() != 2) throw DimensionError("log_softmax: expected [BxC]");
    const std::int64_t batch = x.rows(), classes = x.cols();
    Tensor y = Tensor::zeros({batch, classes});
    for (std::int64_t i = 0; i < batch; ++i) {
      double mx = x.at(i, 0);
      for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, x.at(i, c));
      double z = 0.0;
      for (std::int64_t c = 0; c < classes; ++c) z += std::exp(x.at(i, c) - mx);
      const double lz = std::log(z);
      for (std::int64_t c = 0; c < classes; ++c) {
        y.at(i, c) = x.at(i, c) - mx - lz;
      }
    }
    return push(OpKind::kLogSoftmax, std::move(y), x_id, kNoNode, kNoNode,
                "log_softmax");
  }

  // Identity forward; gradient to x is -lambda * upstream.
  NodeId grl(NodeId x_id, double lambda) {
    if (lambda < 0.0) throw ParameterError("grl: lambda must be >= 0");
    Tensor y = value(x_id);
    y.node_id = kNoNode;
    NodeId id = push(OpKind::kGrl, std::move(y), x_id, kNoNode, kNoNode, "grl");
    node(id).alpha = lambda;
    return id;
  }

  // Elementwise product.
  NodeId mul(NodeId a_id, NodeId b_id) {
    const Tensor& a = value(a_id);
    const Tensor& b = value(b_id);
    if (!a.same_shape(b)) throw DimensionError("mul: shape mismatch");
    Tensor y = a;
    y.node_id = kNoNode;
    for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] *= b.values[i];
    return push(OpKind::kMul, std::move(y), a_id, b_id, kNoNode, "mul");
  }

  // Elementwise product with a constant (non-differentiated) tensor.
  NodeId mul_const(NodeId x_id, Tensor constant) {
    const Tensor& x = value(x_id);
    if (!x.same_shape(constant)) throw DimensionError("mul_const: shape mismatch");
    Tensor y = x;
    y.node_id = kNoNode;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
      y.values[i] *= constant.values[i];
    }
    NodeId id =
        push(OpKind::kMulConst, std::move(y), x_id, kNoNode, kNoNode, "mul_const");
    node(id).constant = std::move(constant);
    return id;
  }

  NodeId scale(NodeId x_id, double s) {
    Tensor y = value(x_id);
    y.node_id = kNoNode;
    for (double& v : y.values) v *= s;
    NodeId id = push(OpKind::kScale, std::move(y), x_id, kNoNode, kNoNode, "scale");
    node(id).alpha = s;
    return id;
  }

  // out = a*x + b*y, elementwise over same-shaped tensors.
  NodeId axpby(double a, NodeId x_id, double b, NodeId y_id) {
    const Tensor& x = value(x_id);
    const Tensor& y = value(y_id);
    if (!x.same_shape(y)) throw DimensionError("axpby: shape mismatch");
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] = a * x.values[i] + b * y.values[i];
    }
    NodeId id = push(OpKind::kAxpby, std::move(out), x_id, y_id, kNoNode, "axpby");
    node(id).alpha = a;
    node(id).beta = b;
    return id;
  }

  NodeId sum(NodeId x_id) {
    const Tensor& x = value(x_id);
    double acc = 0.0;
    for (double v : x.values) acc += v;
    return push(OpKind::kSum, Tensor::scalar(acc), x_id, kNoNode, kNoNode, "sum");
  }

  // Embedding lookup + mean pool per sequence. Tokens are pooled in sorted
  // order, which makes the result exactly invariant to token permutation.
  NodeId embed_mean(NodeId table_id,
                    std::vector<std::vector<std::int32_t>> sequences) {
    const Tensor& table = value(table_id);
    if (table.rank() != 2) throw DimensionError("embed_mean: table must be [VxE]");
    const std::int64_t vocab = table.rows(), dim = table.cols();
    const auto batch = static_cast<std::int64_t>(sequences.size());
    if (batch == 0) throw DataError("embed_mean: empty batch");
    Tensor y = Tensor::zeros({batch, dim});
    for (auto& seq : sequences) {
      if (seq.empty()) throw DataError("embed_mean: empty token sequence");
      std::sort(seq.begin(), seq.end());
      for (auto t : seq) {
        if (t < 0 || t >= vocab) {
          throw DataError("embed_mean: token id " + std::to_string(t) +
                          " outside vocab of " + std::to_string(vocab));
        }
      }
    }
    for (std::int64_t i = 0; i < batch; ++i) {
      const auto& seq = sequences[static_cast<std::size_t>(i)];
      double* yrow = &y.values[static_cast<std::size_t>(i * dim)];
      for (auto t : seq) {
        const double* row = &table.values[static_cast<std::size_t>(t) *
                                          static_cast<std::size_t>(dim)];
        for (std::int64_t e = 0; e < dim; ++e) yrow[e] += row[e];
      }
      const double inv = 1.0 / static_cast<double>(seq.size());
      for (std::int64_t e = 0; e < dim; ++e) yrow[e] *= inv;
    }
    NodeId id = push(OpKind::kEmbedMean, std::move(y), table_id, kNoNode, kNoNode,
                     "embed_mean");
    node(id).sequences = std::move(sequences);
    return id;
  }

  // Runs one reverse pass from a scalar root and adds the resulting adjoints
  // into the persistent gradient accumulators.
  void backward(NodeId root) {
    const Tensor& r = value(root);
    if (!r.is_scalar()) {
      throw ContractError("backward: root must be scalar, got " + r.shape_str());
    }
    grads_.resize(nodes_.size());
    std::vector<Tensor> adj(static_cast<std::size_t>(root) + 1);
    adj[static_cast<std::size_t>(root)] = Tensor::full(r.shape, 1.0);

    for (NodeId id = root; id >= 0; --id) {
      Tensor& g = adj[static_cast<std::size_t>(id)];
      if (g.values.empty()) continue;
      propagate(id, g, adj);
    }
    for (NodeId id = root; id >= 0; --id) {
      Tensor& g = adj[static_cast<std::size_t>(id)];
      if (g.values.empty()) continue;
      Tensor& acc = grads_[static_cast<std::size_t>(id)];
      if (acc.values.empty()) {
        acc = std::move(g);
      } else {
        for (std::size_t i = 0; i < acc.values.size(); ++i) {
          acc.values[i] += g.values[i];
        }
      }
    }
  }

  void zero_grad() {
    grads_.clear();
    grads_.resize(nodes_.size());
  }

  // Accumulated gradient for a node; zeros if the node was never reached.
  Tensor grad(NodeId id) const {
    const Tensor* g = grad_view(id);
    if (g) {
      Tensor out = *g;
      out.node_id = kNoNode;
      return out;
    }
    return Tensor::zeros(value(id).shape);
  }

  // Null when no gradient has been accumulated for the node.
  const Tensor* grad_view(NodeId id) const {
    check_id(id);
    if (static_cast<std::size_t>(id) >= grads_.size()) return nullptr;
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    return g.values.empty() ? nullptr : &g;
  }

 private:
  struct Node {
    OpKind op;
    NodeId in0 = kNoNode, in1 = kNoNode, in2 = kNoNode;
    Tensor value;
    double alpha = 0.0, beta = 0.0;  // grl lambda / scale factor / axpby coeffs
    Tensor constant;
    std::vector<std::vector<std::int32_t>> sequences;
  };

  void check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw ContractError("node id not on this tape");
    }
  }

  Node& node(NodeId id) {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(NodeId id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)];
  }

  NodeId push(OpKind op, Tensor value, NodeId a, NodeId b, NodeId c,
              const char* name) {
    if (!value.all_finite()) {
      throw NonFiniteError(std::string("non-finite value out of ") + name);
    }
    NodeId id = static_cast<NodeId>(nodes_.size());
    value.node_id = id;
    nodes_.push_back(Node{op, a, b, c, std::move(value), 0.0, 0.0, {}, {}});
    return id;
  }

  Tensor& adj_of(std::vector<Tensor>& adj, NodeId id) {
    Tensor& t = adj[static_cast<std::size_t>(id)];
    if (t.values.empty()) t = Tensor::zeros(value(id).shape);
    return t;
  }

  void propagate(NodeId id, const Tensor& g, std::vector<Tensor>& adj) {
    const Node& n = node(id);
    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kLinear: {
        const Tensor& x = value(n.in0);
        const Tensor& w = value(n.in1);
        const std::int64_t batch = x.rows(), in = x.cols(), out = w.cols();
        Tensor& gx = adj_of(adj, n.in0);
        Tensor& gw = adj_of(adj, n.in1);
        Tensor& gb = adj_of(adj, n.in2);
        for (std::int64_t i = 0; i < batch; ++i) {
          const double* grow = &g.values[static_cast<std::size_t>(i * out)];
          for (std::int64_t k = 0; k < in; ++k) {
            const double* wrow = &w.values[static_cast<std::size_t>(k * out)];
            double acc = 0.0;
            for (std::int64_t j = 0; j < out; ++j) acc += grow[j] * wrow[j];
            gx.at(i, k) += acc;
          }
          for (std::int64_t k = 0; k < in; ++k) {
            const double xv = x.at(i, k);
            double* gwrow = &gw.values[static_cast<std::size_t>(k * out)];
            for (std::int64_t j = 0; j < out; ++j) gwrow[j] += xv * grow[j];
          }
          for (std::int64_t j = 0; j < out; ++j) gb[j] += grow[j];
        }
        break;
      }
      case OpKind::kRelu: {
        const Tensor& x = value(n.in0);
        Tensor& gx = adj_of(adj, n.in0);
        for (std::size_t i = 0; i < gx.values.size(); ++i) {
          if (x.values[i] > 0.0) gx.values[i] += g.values[i];
        }
        break;
      }
      case OpKind::kLogSoftmax: {
        const Tensor& y = n.value;
        const std::int64_t batch = y.rows(), classes = y.cols();
        Tensor& gx = adj_of(adj, n.in0);
        for (std::int64_t i = 0; i < batch; ++i) {
          double gsum = 0.0;
          for (std::int64_t c = 0; c < classes; ++c) gsum += g.at(i, c);
          for (std::int64_t c = 0; c < classes; ++c) {
            gx.at(i, c) += g.at(i, c) - std::exp(y.at(i, c)) * gsum;
          }
        }
        break;
      }
      case OpKind::kGrl: {
        Tensor& gx = adj_of(adj, n.in0);
        const double neg_lambda = -n.alpha;
        for (std::size_t i = 0; i < gx.values.size(); ++i) {
          gx.values[i] += neg_lambda * g.values[i];
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = value(n.in0);
        const Tensor& b = value(n.in1);
        Tensor& ga = adj_of(adj, n.in0);
        Tensor& gb = adj_of(adj, n.in1);
        for (std::size_t i = 0; i < g.values.size(); ++i) {
          ga.values[i] += g.values[i] * b.values[i];
          gb.values[i] += g.values[i] * a.values[i];
        }
        break;
      }
      case OpKind::kMulConst: {
        Tensor& gx = adj_of(adj, n.in0);
        for (std::size_t i = 0; i < g.values.size(); ++i) {
          gx.values[i] += g.values[i] * n.constant.values[i];
        }
        break;
      }
      case OpKind::kScale: {
        Tensor& gx = adj_of(adj, n.in0);
        for (std::size_t i = 0; i < g.values.size(); ++i) {
          gx.values[i] += n.alpha * g.values[i];
        }
        break;
      }
      case OpKind::kAxpby: {
        Tensor& gx = adj_of(adj, n.in0);
        Tensor& gy = adj_of(adj, n.in1);
        for (std::size_t i = 0; i < g.values.size(); ++i) {
          gx.values[i] += n.alpha * g.values[i];
          gy.values[i] += n.beta * g.values[i];
        }
        break;
      }
      case OpKind::kSum: {
        Tensor& gx = adj_of(adj, n.in0);
        const double gv = g.values[0];
        for (double& v : gx.values) v += gv;
        break;
      }
      case OpKind::kEmbedMean: {
        const Tensor& table = value(n.in0);
        const std::int64_t dim = table.cols();
        Tensor& gt = adj_of(adj, n.in0);
        for (std::size_t i = 0; i < n.sequences.size(); ++i) {
          const auto& seq = n.sequences[i];
          const double inv = 1.0 / static_cast<double>(seq.size());
          const double* grow = &g.values[i * static_cast<std::size_t>(dim)];
          for (auto t : seq) {
            double* trow = &gt.values[static_cast<std::size_t>(t) *
                                      static_cast<std::size_t>(dim)];
            for (std::int64_t e = 0; e < dim; ++e) trow[e] += inv * grow[e];
          }
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Euclidean norm of the concatenated gradients of a parameter group.
inline double grad_norm(const Tape& tape, const std::vector<NodeId>& params) {
  double acc = 0.0;
  for (NodeId id : params) {
    const Tensor* g = tape.grad_view(id);
    if (!g) continue;
    for (double v : g->values) acc += v * v;
  }
  return std::sqrt(acc);
}

}  // namespace advreg
