#pragma once

#include <cstdint>
#include <vector>

#include "freetrain/tensor.hpp"

namespace freetrain {

enum class OpKind : std::uint8_t {
  MatMul,
  Add,        // equal shapes, or bias broadcast over the leading batch axis
  Relu,
  Conv2d,     // inputs: x[B,Ci,H,W], w[Co,Ci,kh,kw], optional bias[Co]
  MaxPool2d,
  Flatten,
  SoftmaxCrossEntropy,  // logits[B,C] + labels attr -> per-example loss [B]
  CwMargin,             // logits[B,C] + labels attr -> max_{i!=y} z_i - z_y, [B]
  BatchMean,            // mean over all elements -> scalar
  ScalarMul,
};

const char* op_name(OpKind kind);

struct OpAttrs {
  int stride = 1;
  int padding = 0;
  int window = 2;              // maxpool window (square)
  float scalar = 1.0f;         // ScalarMul factor
  std::vector<int> labels;     // SoftmaxCrossEntropy / CwMargin
};

/// Forward value plus whatever the backward rule needs beyond the inputs.
struct OpResult {
  Tensor value;
  Tensor aux;                       // SoftmaxCrossEntropy: probs [B,C]
  std::vector<std::int32_t> aux_idx;  // MaxPool2d: argmax; CwMargin: runner-up index
};

/// Shape-checked forward evaluation of one primitive. Throws TensorError on
/// shape mismatches (naming expected vs actual) and on non-finite outputs.
OpResult eval_primitive(OpKind kind, const std::vector<const Tensor*>& inputs,
                        const OpAttrs& attrs);

/// Convenience wrapper for un-recorded evaluation.
Tensor apply_primitive(OpKind kind, const std::vector<Tensor>& inputs,
                       const OpAttrs& attrs = {});

/// Accumulate input gradients for one primitive: grads_in[i] += d(out)/d(in_i) * grad_out.
/// Null entries in grads_in are skipped.
void backward_primitive(OpKind kind, const std::vector<const Tensor*>& inputs,
                        const OpAttrs& attrs, const OpResult& saved,
                        const Tensor& grad_out, std::vector<Tensor*>& grads_in);

/// C[m,n] = A[m,k] * B[k,n], row-major, fixed sequential reduction order.
void matmul_accumulate(const float* a, const float* b, float* c, std::size_t m,
                       std::size_t k, std::size_t n, bool accumulate);

}  // namespace freetrain
