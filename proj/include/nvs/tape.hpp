#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nvs/tensor.hpp"

namespace nvs {

// Handle to a node on a Tape; only meaningful for the tape that created it.
struct TapeVar {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append nodes in execution order, so node creation
// order is a topological order and backward() walks it once in reverse.
// A tape is built, differentiated, and discarded by a single owner;
// parallelism lives inside individual ops and is bit-deterministic because
// every output element is reduced in a fixed serial order.
template <typename S>
class Tape {
 public:
  using Var = TapeVar;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. param() binds an external tensor: after backward(), the node's
  // adjoint is accumulated into p.grad. input() references an external
  // tensor read-only (no gradient tracking, no copy); the tensor must
  // outlive the tape.
  Var constant(Tensor<S> v);
  Var param(Tensor<S>& p);
  Var input(const Tensor<S>& t);

  // Structure.
  Var reshape(Var a, Shape s);
  Var slice_rows(Var a, std::size_t r0, std::size_t r1);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  // y.flat[i] = a.flat[index[i]]; backward scatter-adds.
  Var gather(Var a, std::vector<std::size_t> index, Shape out_shape);

  // Arithmetic (same-shape where binary).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, S c);
  Var scale_by(Var a, Var scalar);  // scalar: single-element tensor
  Var matmul(Var a, Var b);         // [M,K] x [K,N]
  Var matmul_nt(Var a, Var b);      // [M,K] x [N,K]^T
  Var mean_all(Var a);
  Var gelu(Var a);     // tanh approximation
  Var sigmoid(Var a);
  Var abs(Var a);
  // Softmax over the last axis of a matrix, one row at a time. Masked-out
  // logits are treated as -inf; a row with no allowed entry raises MaskError.
  Var softmax_rows(Var a, const BoolMatrix* mask = nullptr);
  // Per-row layer norm without bias: y = gain * (x - mean) / sqrt(var + eps).
  Var layer_norm_rows(Var x, Var gain, S eps = S(1e-5));
  Var l2_normalize_rows(Var a);

  // Seeds d(root)/d(root) = seed and accumulates parameter gradients.
  void backward(Var root, S seed = S(1));

  const Tensor<S>& value(Var v) const { return val(v.id); }
  // Adjoint of any node after backward (empty if unreachable from the root).
  const std::vector<S>& adjoint(Var v) const { return nodes_[v.id].grad; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> owned;
    const Tensor<S>* external = nullptr;  // value source for leaf views
    Tensor<S>* grad_sink = nullptr;       // set by param(): receives adjoints
    std::vector<S> grad;
    std::function<void(Tape&, int)> back;
    bool needs = false;  // true if any parameter is an ancestor
  };

  const Tensor<S>& val(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  std::vector<S>& gbuf(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() != val(id).size()) n.grad.assign(val(id).size(), S(0));
    return n.grad;
  }

  template <typename Parents>
  Var make(Tensor<S> value, const Parents& parents, std::function<void(Tape&, int)> back) {
    Node n;
    n.owned = std::move(value);
    n.back = std::move(back);
    for (int p : parents) n.needs = n.needs || nodes_[p].needs;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make(Tensor<S> value, std::initializer_list<int> parents,
           std::function<void(Tape&, int)> back) {
    return make<std::initializer_list<int>>(std::move(value), parents, std::move(back));
  }

  void check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw StateError("tape: variable does not belong to this tape");
  }

  template <typename T>
  friend TapeVar qknorm_attention(Tape<T>& tape, TapeVar q, TapeVar k, TapeVar v,
                                  const BoolMatrix* mask, TapeVar gains);

  std::vector<Node> nodes_;
};

// QK-Norm multi-head attention built from tape primitives. q, k, v have
// shape [L, heads, head_dim]; gains holds one learnable scalar per head.
// Per head: logits = gain * (q_hat . k_hat) with L2-normalized rows, so
// |logit| <= |gain|; masked logits become -inf before the softmax.
template <typename S>
TapeVar qknorm_attention(Tape<S>& tape, TapeVar q, TapeVar k, TapeVar v,
                         const BoolMatrix* mask, TapeVar gains);

// Euclidean norm over the concatenation of all parameter gradients.
// Every tensor must have populated gradients (StateError otherwise).
template <typename S>
double global_grad_norm(std::span<Tensor<S>* const> params);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace nvs
