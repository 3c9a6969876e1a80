#include "freetrain/attack.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

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

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

}  // namespace

void AttackConfig::validate() const {
  expect(eps >= 0.0f, cat("attack config: eps expected >= 0, got ", eps));
  expect(steps >= 0, cat("attack config: steps expected >= 0, got ", steps));
  if (steps >= 1 && eps > 0.0f)  // eps = 0 is the legal identity attack
    expect(eps_step > 0.0f,
           cat("attack config: eps_step expected > 0 when steps >= 1, got ",
               eps_step));
  expect(restarts >= 1,
         cat("attack config: restarts expected >= 1, got ", restarts));
  if (restarts > 1)
    expect(random_init, "attack config: restarts > 1 require random_init");
  expect(range_lo < range_hi, cat("attack config: value range [", range_lo,
                                  ", ", range_hi, "] is empty"));
}

Tensor cw_loss(const Tensor& logits, const std::vector<int>& labels) {
  OpAttrs attrs;
  attrs.labels = labels;
  Tensor margin = apply_primitive(OpKind::CwMargin, {logits}, attrs);
  return apply_primitive(OpKind::BatchMean, {margin});
}

Tensor project_delta(const Tensor& x, Tensor& delta, float eps, float lo,
                     float hi) {
  expect(delta.same_shape(x),
         cat("project_delta: delta expected shape ", shape_str(x.shape),
             ", got ", shape_str(delta.shape)));
  Tensor xa = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float d = std::clamp(delta.data[i], -eps, eps);
    const float v = std::clamp(x.data[i] + d, lo, hi);
    xa.data[i] = v;
    delta.data[i] = std::clamp(v - x.data[i], -eps, eps);
  }
  return xa;
}

Tensor signed_ascent_step(const Tensor& x, Tensor& delta, const Tensor& grad,
                          float step, float eps, float lo, float hi) {
  expect(grad.same_shape(x),
         cat("signed_ascent_step: gradient expected shape ", shape_str(x.shape),
             ", got ", shape_str(grad.shape)));
  for (std::size_t i = 0; i < delta.numel(); ++i)
    delta.data[i] += step * sign_of(grad.data[i]);
  return project_delta(x, delta, eps, lo, hi);
}

Tensor fgsm(const Model& model, const ParamSet& params, const Tensor& x,
            const std::vector<int>& y, const AttackConfig& cfg,
            CostLedger& ledger) {
  cfg.validate();
  ModelForward fwd = model.forward(params, x, y, ledger, cfg.loss_kind);
  GradPair g = backward_dual(fwd.tape, ledger);
  const Tensor& gx = g.input_grads.at(fwd.input);
  Tensor xa = x;
  for (std::size_t i = 0; i < x.numel(); ++i)
    xa.data[i] = std::clamp(x.data[i] + cfg.eps * sign_of(gx.data[i]),
                            cfg.range_lo, cfg.range_hi);
  return xa;
}

Tensor pgd_attack(const Model& model, const ParamSet& params, const Tensor& x,
                  const std::vector<int>& y, const AttackConfig& cfg,
                  std::uint64_t seed, CostLedger& ledger) {
  cfg.validate();
  Tensor delta = Tensor::zeros(x.shape);
  Tensor xa = x;
  if (cfg.random_init) {
    Rng rng(seed);
    for (auto& v : delta.data) v = rng.uniform(-cfg.eps, cfg.eps);
    xa = project_delta(x, delta, cfg.eps, cfg.range_lo, cfg.range_hi);
  }
  for (int k = 0; k < cfg.steps; ++k) {
    ModelForward fwd = model.forward(params, xa, y, ledger, cfg.loss_kind);
    GradPair g = backward_dual(fwd.tape, ledger);
    xa = signed_ascent_step(x, delta, g.input_grads.at(fwd.input), cfg.eps_step,
                            cfg.eps, cfg.range_lo, cfg.range_hi);
  }
  return xa;
}

AttackResult attack_with_restarts(const Model& model, const ParamSet& params,
                                  const Tensor& x, const std::vector<int>& y,
                                  const AttackConfig& cfg, std::uint64_t seed,
                                  CostLedger& ledger) {
  cfg.validate();
  expect(x.rank() >= 1 && x.shape[0] >= 1, "attack: empty batch");
  const std::size_t batch = x.shape[0];
  expect(y.size() == batch,
         cat("attack: expected ", batch, " labels, got ", y.size()));
  const std::size_t row = x.numel() / batch;

  AttackResult res;
  res.x_adv = x;
  res.success.assign(batch, 0);
  for (int r = 0; r < cfg.restarts; ++r) {
    Tensor xa = pgd_attack(model, params, x, y, cfg, mix_seed(seed, r), ledger);
    const std::vector<int> pred = model.predict(params, xa, ledger);
    for (std::size_t b = 0; b < batch; ++b) {
      if (res.success[b]) continue;  // keep the first misclassifying point
      std::copy(xa.data.begin() + b * row, xa.data.begin() + (b + 1) * row,
                res.x_adv.data.begin() + b * row);
      if (pred[b] != y[b]) res.success[b] = 1;
    }
  }
  return res;
}

}  // namespace freetrain
