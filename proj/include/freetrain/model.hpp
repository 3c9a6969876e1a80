#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "freetrain/ledger.hpp"
#include "freetrain/tape.hpp"

namespace freetrain {

enum class ModelKind : std::uint8_t { Mlp, Convnet };
enum class LossKind : std::uint8_t { CrossEntropy, CwMargin };

/// Architecture description. Per-example input shape excludes the batch axis:
/// {D} for an MLP, {C, H, W} for a convnet.
struct ModelSpec {
  ModelKind kind = ModelKind::Mlp;
  std::vector<std::size_t> input_shape;
  std::size_t classes = 10;
  std::vector<std::size_t> hidden;         // dense widths before the class head
  std::vector<std::size_t> conv_channels;  // one conv+relu+pool block per entry
  int kernel = 3;
  int padding = 1;
  int pool_window = 2;
  float input_scale = 1.0f;  // model-side normalization; inputs stay in raw units

  void validate() const;  // throws TensorError on a nonconforming spec
};

/// Named parameters plus same-shaped momentum buffers. Order is fixed at
/// initialization and defines both the update order and the checkpoint layout.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> values;
  std::vector<Tensor> momentum;

  const Tensor& at(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;  // throws if absent
};

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// One recorded forward pass: the tape plus the node ids needed downstream.
struct ModelForward {
  Tape tape;
  NodeId input = 0;
  NodeId logits = 0;
  NodeId loss = 0;
  std::vector<std::pair<std::string, NodeId>> params;  // name -> leaf node
};

class Model {
 public:
  explicit Model(ModelSpec spec);
  const ModelSpec& spec() const { return spec_; }

  /// Records x (flagged input) through the network to a scalar loss;
  /// increments the ledger's forward counter by 1.
  ModelForward forward(const ParamSet& params, const Tensor& x,
                       const std::vector<int>& labels, CostLedger& ledger,
                       LossKind loss = LossKind::CrossEntropy) const;

  /// Forward to logits only (no labels); still one forward on the ledger.
  Tensor logits(const ParamSet& params, const Tensor& x,
                CostLedger& ledger) const;

  /// Argmax of logits per example; ties resolve to the lowest class index.
  std::vector<int> predict(const ParamSet& params, const Tensor& x,
                           CostLedger& ledger) const;

 private:
  ModelSpec spec_;
};

/// Gradients from a backward pass, keyed back to parameter names.
std::vector<std::pair<std::string, Tensor>> named_param_grads(
    const ModelForward& fwd, const GradPair& grads);

/// v <- mu*v + g + wd*theta; theta <- theta - lr*v. One sgd-update on the
/// ledger. Throws on a missing gradient entry or a non-finite update.
void sgd_step(ParamSet& params,
              const std::vector<std::pair<std::string, Tensor>>& grads, float lr,
              float momentum, float weight_decay, CostLedger& ledger);

/// Flat binary container, bit-exact round trip. Momentum is not stored;
/// loading yields zeroed momentum buffers.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace freetrain
