#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "freetrain/data.hpp"
#include "freetrain/model.hpp"

namespace freetrain {

enum class Regime : std::uint8_t { Natural, Kpgd, Free };

/// One knob set for all three regimes. eps / eps_step / the value range are in
/// raw pixel units. `epochs` counts effective passes over the data; the free
/// regime runs floor(epochs / replay_m) outer epochs so the total number of
/// SGD updates matches the other regimes.
struct TrainConfig {
  Regime regime = Regime::Natural;
  std::size_t replay_m = 1;  // free: inner repetitions per minibatch
  int attack_steps = 7;      // kpgd: K
  float eps = 0.0f;
  float eps_step = 0.0f;  // kpgd inner step; free always steps by eps itself
  bool attack_random_init = true;  // kpgd inner attack start
  float range_lo = 0.0f;
  float range_hi = 255.0f;
  std::size_t epochs = 1;  // N_ep
  std::size_t batch_size = 32;
  float lr = 0.01f;
  bool lr_decay = false;  // step decay: x0.1 past 50%, x0.01 past 75%
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::uint64_t seed = 0;

  void validate() const;  // throws TensorError
};

/// Test/instrumentation taps. Both see the global minibatch counter and the
/// live perturbation slice for that batch (empty tensor outside the free
/// regime). on_batch_start fires before the entry projection, so its delta is
/// exactly the warm-started carry-over from the previous batch.
struct TrainHooks {
  std::function<void(std::size_t, const Tensor&)> on_batch_start;
  std::function<void(std::size_t, const Tensor&)> on_batch_end;
};

struct TrainResult {
  ParamSet params;
  std::size_t total_updates = 0;
  std::size_t outer_epochs = 0;    // epoch loops actually run
  std::size_t dropped_epochs = 0;  // free: epochs mod replay_m remainder
  double final_loss = 0.0;         // loss at the last SGD update
};

/// Each id repeated m times consecutively, order preserved. Throws on m < 1.
std::vector<std::size_t> replay_schedule(const std::vector<std::size_t>& batch_ids,
                                         std::size_t m);

/// Step-decay schedule over the update counter; `decay` off returns base.
float lr_at(float base, std::size_t update_index, std::size_t total_updates,
            bool decay);

/// Runs the configured regime from a fresh init_params(spec, cfg.seed).
/// Epoch e shuffles with mix_seed(cfg.seed, e) in every regime, so regimes
/// with the same seed see identical batch streams. Errors inside the loop are
/// rethrown with the failing update index prefixed.
TrainResult train(const Model& model, const Dataset& data,
                  const TrainConfig& cfg, CostLedger& ledger,
                  const TrainHooks& hooks = {});

}  // namespace freetrain
