#pragma once

#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "freetrain/ledger.hpp"
#include "freetrain/ops.hpp"

namespace freetrain {

using NodeId = std::size_t;

/// Recorded computation graph for one forward pass. Nodes are appended in
/// topological order; forward values (and per-op aux data) are saved eagerly.
/// A tape is confined to one logical thread from forward through backward.
class Tape {
 public:
  struct Node {
    bool is_leaf = true;
    OpKind kind = OpKind::Relu;   // meaningful only when !is_leaf
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    OpResult saved;               // value + aux
  };

  NodeId add_input(Tensor value);   // flagged model input
  NodeId add_param(Tensor value);   // flagged parameter
  NodeId add_constant(Tensor value);

  /// Evaluates the primitive and appends a node.
  NodeId apply(OpKind kind, std::vector<NodeId> inputs, OpAttrs attrs = {});

  const Tensor& value(NodeId id) const { return nodes_.at(id).saved.value; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Loss must be scalar (shape [] or [1]).
  void mark_loss(NodeId id);
  std::optional<NodeId> loss_id() const { return loss_id_; }
  const std::vector<NodeId>& input_ids() const { return input_ids_; }
  const std::vector<NodeId>& param_ids() const { return param_ids_; }

 private:
  NodeId add_leaf(Tensor value);
  std::vector<Node> nodes_;
  std::vector<NodeId> input_ids_;
  std::vector<NodeId> param_ids_;
  std::optional<NodeId> loss_id_;
};

/// Gradients of the loss with respect to parameters and flagged inputs,
/// produced together by one reverse traversal.
struct GradPair {
  std::unordered_map<NodeId, Tensor> param_grads;  // id -> same-shape gradient
  std::unordered_map<NodeId, Tensor> input_grads;
};

/// Single reverse traversal over the tape; increments the ledger's backward
/// counter by exactly 1.
GradPair backward_dual(const Tape& tape, CostLedger& ledger);

/// Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / (2h).
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, float h);

}  // namespace freetrain
