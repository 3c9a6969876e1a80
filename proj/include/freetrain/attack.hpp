#pragma once

#include <cstdint>
#include <vector>

#include "freetrain/model.hpp"

namespace freetrain {

/// l-inf attack parameters. eps and the value range are in the raw pixel
/// units of the dataset; any normalization lives inside the model.
struct AttackConfig {
  float eps = 0.0f;
  float eps_step = 0.0f;  // per-iteration step size
  int steps = 0;          // K; 0 disables the iteration loop
  bool random_init = false;
  int restarts = 1;
  LossKind loss_kind = LossKind::CrossEntropy;
  float range_lo = 0.0f;
  float range_hi = 255.0f;

  void validate() const;  // throws TensorError
};

/// Mean over the batch of max_{i!=y} Z_i - Z_y (margin form, kappa = 0).
Tensor cw_loss(const Tensor& logits, const std::vector<int>& labels);

/// Clips delta to [-eps, eps], clamps x+delta into [lo, hi], and re-derives
/// delta from the clamped point (clipped once more so the stored budget is
/// exact). Returns the in-range perturbed batch.
Tensor project_delta(const Tensor& x, Tensor& delta, float eps, float lo,
                     float hi);

/// delta += step * sign(grad) (sign(0) = 0), then project_delta.
Tensor signed_ascent_step(const Tensor& x, Tensor& delta, const Tensor& grad,
                          float step, float eps, float lo, float hi);

/// x + eps*sign(grad-x of the loss), clamped to the value range.
/// Exactly one forward and one backward on the ledger.
Tensor fgsm(const Model& model, const ParamSet& params, const Tensor& x,
            const std::vector<int>& y, const AttackConfig& cfg,
            CostLedger& ledger);

/// PGD-K: optional uniform random start, K signed-gradient steps.
/// Exactly K forwards and K backwards on the ledger.
Tensor pgd_attack(const Model& model, const ParamSet& params, const Tensor& x,
                  const std::vector<int>& y, const AttackConfig& cfg,
                  std::uint64_t seed, CostLedger& ledger);

struct AttackResult {
  Tensor x_adv;                       // per example: first misclassifying
                                      // restart's point, else the last restart's
  std::vector<std::uint8_t> success;  // misclassified under any restart
};

/// Restart r runs pgd_attack with seed mix_seed(seed, r); success flags are
/// the union across restarts, so adding restarts never clears a flag.
AttackResult attack_with_restarts(const Model& model, const ParamSet& params,
                                  const Tensor& x, const std::vector<int>& y,
                                  const AttackConfig& cfg, std::uint64_t seed,
                                  CostLedger& ledger);

}  // namespace freetrain
