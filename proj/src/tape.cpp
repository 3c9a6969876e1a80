#include "freetrain/tape.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace freetrain {

NodeId Tape::add_leaf(Tensor value) {
  Node node;
  node.is_leaf = true;
  node.saved.value = std::move(value);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Tape::add_input(Tensor value) {
  const NodeId id = add_leaf(std::move(value));
  input_ids_.push_back(id);
  return id;
}

NodeId Tape::add_param(Tensor value) {
  const NodeId id = add_leaf(std::move(value));
  param_ids_.push_back(id);
  return id;
}

NodeId Tape::add_constant(Tensor value) { return add_leaf(std::move(value)); }

NodeId Tape::apply(OpKind kind, std::vector<NodeId> inputs, OpAttrs attrs) {
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  for (NodeId id : inputs) {
    if (id >= nodes_.size()) {
      std::ostringstream out;
      out << op_name(kind) << ": input node " << id << " not on this tape";
      throw TensorError(out.str());
    }
    values.push_back(&nodes_[id].saved.value);
  }
  Node node;
  node.is_leaf = false;
  node.kind = kind;
  node.attrs = std::move(attrs);
  node.saved = eval_primitive(kind, values, node.attrs);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::mark_loss(NodeId id) {
  if (id >= nodes_.size()) throw TensorError("mark_loss: node not on this tape");
  const Tensor& v = nodes_[id].saved.value;
  if (v.numel() != 1) {
    std::ostringstream out;
    out << "mark_loss: expected a scalar loss, got shape " << shape_str(v.shape);
    throw TensorError(out.str());
  }
  loss_id_ = id;
}

GradPair backward_dual(const Tape& tape, CostLedger& ledger) {
  if (!tape.loss_id())
    throw TensorError("backward_dual: no loss marked on this tape");
  const NodeId loss = *tape.loss_id();
  const std::size_t n = tape.size();

  // A node carries a gradient iff it can reach a parameter or flagged input
  // (walking forward) and the loss can reach it (walking backward).
  std::vector<char> needs(n, 0), reach(n, 0);
  for (NodeId id : tape.input_ids()) needs[id] = 1;
  for (NodeId id : tape.param_ids()) needs[id] = 1;
  for (NodeId id = 0; id < n; ++id) {
    const Tape::Node& node = tape.node(id);
    if (node.is_leaf) continue;
    for (NodeId in : node.inputs)
      if (needs[in]) needs[id] = 1;
  }
  reach[loss] = 1;
  for (NodeId id = loss + 1; id-- > 0;) {
    if (!reach[id]) continue;
    for (NodeId in : tape.node(id).inputs) reach[in] = 1;
  }

  std::vector<Tensor> grads(n);
  std::vector<char> has_grad(n, 0);
  grads[loss] = Tensor::full(tape.value(loss).shape, 1.0f);
  has_grad[loss] = 1;

  for (NodeId id = loss + 1; id-- > 0;) {
    const Tape::Node& node = tape.node(id);
    if (node.is_leaf || !has_grad[id]) continue;
    std::vector<const Tensor*> values;
    std::vector<Tensor*> grads_in;
    values.reserve(node.inputs.size());
    grads_in.reserve(node.inputs.size());
    for (NodeId in : node.inputs) {
      values.push_back(&tape.value(in));
      if (needs[in] && reach[in]) {
        if (!has_grad[in]) {
          grads[in] = Tensor::zeros(tape.value(in).shape);
          has_grad[in] = 1;
        }
        grads_in.push_back(&grads[in]);
      } else {
        grads_in.push_back(nullptr);
      }
    }
    backward_primitive(node.kind, values, node.attrs, node.saved, grads[id],
                       grads_in);
  }

  ledger.record(CostLedger::Event::Backward);

  GradPair out;
  for (NodeId id : tape.param_ids())
    out.param_grads.emplace(id, has_grad[id] ? std::move(grads[id])
                                             : Tensor::zeros(tape.value(id).shape));
  for (NodeId id : tape.input_ids())
    out.input_grads.emplace(id, has_grad[id] ? std::move(grads[id])
                                             : Tensor::zeros(tape.value(id).shape));
  return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, float h) {
  if (!(h > 0.0f)) throw TensorError("finite_diff_grad: step must be positive");
  Tensor grad = Tensor::zeros(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float xi = x.data[i];
    probe.data[i] = xi + h;
    const double up = f(probe);
    probe.data[i] = xi - h;
    const double down = f(probe);
    probe.data[i] = xi;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      std::ostringstream out;
      out << "finite_diff_grad: non-finite loss probing element " << i;
      throw TensorError(out.str());
    }
    const double denom = static_cast<double>(xi + h) - static_cast<double>(xi - h);
    grad.data[i] = static_cast<float>((up - down) / denom);
  }
  return grad;
}

}  // namespace freetrain
