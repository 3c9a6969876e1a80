#include "freetrain/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "freetrain/attack.hpp"
#include "freetrain/rng.hpp"

namespace freetrain {

namespace {

template <class... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream out;
  (out << ... << parts);
  return out.str();
}

void expect(bool ok, const std::string& msg) {
  if (!ok) throw TensorError(msg);
}

// Domain separator so per-update attack seeds never collide with the
// per-epoch shuffle seeds derived from the same run seed.
constexpr std::uint64_t kAttackSeedDomain = 0xA77AC4;

Tensor head_rows(const Tensor& t, std::size_t rows) {
  std::vector<std::size_t> shape = t.shape;
  shape[0] = rows;
  Tensor out = Tensor::zeros(shape);
  std::copy(t.data.begin(),
            t.data.begin() + static_cast<std::ptrdiff_t>(out.numel()),
            out.data.begin());
  return out;
}

void store_head_rows(Tensor& t, const Tensor& head) {
  std::copy(head.data.begin(), head.data.end(), t.data.begin());
}

}  // namespace

void TrainConfig::validate() const {
  expect(replay_m >= 1, "train config: replay count expected >= 1");
  expect(epochs >= 1, "train config: epochs expected >= 1");
  expect(batch_size >= 1, "train config: batch size expected >= 1");
  expect(std::isfinite(lr) && lr > 0.0f,
         cat("train config: learning rate expected > 0, got ", lr));
  expect(momentum >= 0.0f && momentum < 1.0f,
         cat("train config: momentum expected in [0, 1), got ", momentum));
  expect(weight_decay >= 0.0f,
         cat("train config: weight decay expected >= 0, got ", weight_decay));
  expect(eps >= 0.0f, cat("train config: eps expected >= 0, got ", eps));
  expect(range_lo < range_hi, cat("train config: value range [", range_lo,
                                  ", ", range_hi, "] is empty"));
  if (regime == Regime::Kpgd) {
    expect(attack_steps >= 1,
           cat("train config: kpgd needs K >= 1, got ", attack_steps));
    expect(eps_step > 0.0f,
           cat("train config: kpgd needs eps_step > 0, got ", eps_step));
  }
  if (regime == Regime::Free)
    expect(epochs >= replay_m,
           cat("train config: ", epochs, " epochs cannot cover one outer "
               "epoch at replay count ", replay_m));
}

std::vector<std::size_t> replay_schedule(
    const std::vector<std::size_t>& batch_ids, std::size_t m) {
  expect(m >= 1, "replay_schedule: replay count expected >= 1");
  std::vector<std::size_t> out;
  out.reserve(batch_ids.size() * m);
  for (std::size_t id : batch_ids)
    for (std::size_t rep = 0; rep < m; ++rep) out.push_back(id);
  return out;
}

float lr_at(float base, std::size_t update_index, std::size_t total_updates,
            bool decay) {
  if (!decay || total_updates == 0) return base;
  if (update_index * 4 >= total_updates * 3) return base * 0.01f;
  if (update_index * 2 >= total_updates) return base * 0.1f;
  return base;
}

TrainResult train(const Model& model, const Dataset& data,
                  const TrainConfig& cfg, CostLedger& ledger,
                  const TrainHooks& hooks) {
  cfg.validate();
  data.validate();
  expect(data.size() >= 1, "train: empty dataset");

  const std::size_t m = cfg.regime == Regime::Free ? cfg.replay_m : 1;
  TrainResult result;
  result.outer_epochs = cfg.regime == Regime::Free ? cfg.epochs / m : cfg.epochs;
  result.dropped_epochs = cfg.epochs - result.outer_epochs * m;
  result.params = init_params(model.spec(), cfg.seed);

  const std::size_t batches_per_epoch =
      (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_updates = result.outer_epochs * batches_per_epoch * m;

  AttackConfig attack;
  attack.eps = cfg.eps;
  attack.eps_step = cfg.eps_step;
  attack.steps = cfg.attack_steps;
  attack.random_init = cfg.attack_random_init;
  attack.range_lo = cfg.range_lo;
  attack.range_hi = cfg.range_hi;

  // Free regime: one persistent perturbation buffer for the whole run,
  // zeroed here and never again (warm start across batches and epochs).
  std::vector<std::size_t> delta_shape = {cfg.batch_size};
  for (std::size_t d : model.spec().input_shape) delta_shape.push_back(d);
  Tensor delta = Tensor::zeros(delta_shape);
  const Tensor no_delta;

  std::size_t update = 0;
  std::size_t batch_counter = 0;
  for (std::size_t epoch = 0; epoch < result.outer_epochs; ++epoch) {
    std::vector<Batch> epoch_batches =
        batches(data, cfg.batch_size, mix_seed(cfg.seed, epoch), true);
    for (Batch& batch : epoch_batches) {
      try {
        const Tensor x = reshape_rows(batch.x, model.spec().input_shape);
        const std::size_t b = x.shape[0];

        if (cfg.regime == Regime::Natural || cfg.regime == Regime::Kpgd) {
          if (hooks.on_batch_start) hooks.on_batch_start(batch_counter, no_delta);
          Tensor x_train = x;
          if (cfg.regime == Regime::Kpgd)
            x_train = pgd_attack(
                model, result.params, x, batch.y, attack,
                mix_seed(mix_seed(cfg.seed, kAttackSeedDomain), update), ledger);
          ModelForward fwd = model.forward(result.params, x_train, batch.y, ledger);
          GradPair grads = backward_dual(fwd.tape, ledger);
          result.final_loss = fwd.tape.value(fwd.loss)[0];
          sgd_step(result.params, named_param_grads(fwd, grads),
                   lr_at(cfg.lr, update, total_updates, cfg.lr_decay),
                   cfg.momentum, cfg.weight_decay, ledger);
          ++update;
          if (hooks.on_batch_end) hooks.on_batch_end(batch_counter, no_delta);
        } else {
          // Alg. 1 body. A short final batch borrows the leading rows of the
          // buffer; the trailing rows stay put for the next epoch's warm start.
          Tensor d = head_rows(delta, b);
          if (hooks.on_batch_start) hooks.on_batch_start(batch_counter, d);
          Tensor xa = project_delta(x, d, cfg.eps, cfg.range_lo, cfg.range_hi);
          for (std::size_t rep = 0; rep < m; ++rep) {
            ModelForward fwd = model.forward(result.params, xa, batch.y, ledger);
            GradPair grads = backward_dual(fwd.tape, ledger);
            result.final_loss = fwd.tape.value(fwd.loss)[0];
            // Theta steps first, on gradients from the same tape as the
            // delta step that follows.
            sgd_step(result.params, named_param_grads(fwd, grads),
                     lr_at(cfg.lr, update, total_updates, cfg.lr_decay),
                     cfg.momentum, cfg.weight_decay, ledger);
            const Tensor& g_adv = grads.input_grads.at(fwd.input);
            xa = signed_ascent_step(x, d, g_adv, cfg.eps, cfg.eps,
                                    cfg.range_lo, cfg.range_hi);
            ledger.record(CostLedger::Event::DeltaUpdate);
            ++update;
          }
          store_head_rows(delta, d);
          if (hooks.on_batch_end) hooks.on_batch_end(batch_counter, d);
        }
      } catch (const TensorError& e) {
        throw TensorError(cat("update ", update, ": ", e.what()));
      }
      ++batch_counter;
    }
  }
  result.total_updates = update;
  expect(update == total_updates,
         cat("train: update count ", update, " != plan ", total_updates));
  return result;
}

}  // namespace freetrain
