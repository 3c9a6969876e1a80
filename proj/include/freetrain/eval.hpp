#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freetrain/attack.hpp"
#include "freetrain/data.hpp"
#include "freetrain/model.hpp"
#include "freetrain/train.hpp"

namespace freetrain {

/// An attack row request: the label names the row in the report.
struct NamedAttack {
  std::string name;
  AttackConfig config;
};

struct EvalRow {
  std::string attack;  // "natural" or the requested attack name
  int k = 0;
  float eps = 0.0f;
  float eps_step = 0.0f;
  int restarts = 0;
  double accuracy = 0.0;
  std::size_t n = 0;
  double seconds = 0.0;  // wall clock; the only nondeterministic field
};

struct EvalReport {
  double natural_accuracy = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;  // row 0 is always "natural"
};

/// Clean accuracy plus one row per requested attack, restart-aware: an
/// example counts as robust only if every restart fails to flip it.
/// Deterministic under (params, dataset, configs, seed) apart from `seconds`.
EvalReport evaluate(const Model& model, const ParamSet& params,
                    const Dataset& data, const std::vector<NamedAttack>& attacks,
                    std::uint64_t seed, CostLedger& ledger,
                    std::size_t batch_size = 200);

/// Fixed column order so runs diff cleanly:
/// attack,k,eps,eps_step,restarts,accuracy,n,seconds
void write_report_csv(const EvalReport& report, const std::string& path);
std::string report_csv(const EvalReport& report);

enum class DirectionKind : std::uint8_t { Adversarial, Rademacher };

/// Seeded uniform +-1 per pixel.
Tensor rademacher_direction(const std::vector<std::size_t>& shape,
                            std::uint64_t seed);

/// sign of the input gradient of the loss at x (sign(0) = 0, as in fgsm).
Tensor adversarial_direction(const Model& model, const ParamSet& params,
                             const Tensor& x, const std::vector<int>& y);

/// Loss values on a (grid_n x grid_n) plane through one example:
/// value(i, j) = loss(clamp(x + a_i * dir_a + b_j * dir_b), y) with a, b
/// uniformly spaced over [-extent, extent]. grid_n must be odd so the center
/// cell is the unperturbed loss exactly.
struct SurfaceGrid {
  DirectionKind dir_a = DirectionKind::Adversarial;
  DirectionKind dir_b = DirectionKind::Rademacher;
  float extent = 0.0f;
  std::vector<float> coords;  // grid_n offsets shared by both axes
  Tensor values;              // [grid_n, grid_n]
};

SurfaceGrid loss_surface(const Model& model, const ParamSet& params,
                         const Tensor& x, int y, DirectionKind dir_a,
                         DirectionKind dir_b, float extent, std::size_t grid_n,
                         float range_lo, float range_hi, std::uint64_t seed);

/// Matrix CSV: one comment line naming the directions, then coordinate
/// headers (columns = dir_b offsets, rows labeled by dir_a offsets).
void write_surface_csv(const SurfaceGrid& grid, const std::string& path);
std::string surface_csv(const SurfaceGrid& grid);

/// Exact cost identities per regime: natural and free need backward_count ==
/// n_updates, kpgd needs (K+1) * n_updates. k_or_m is K for kpgd, m for free
/// (unused in the identity, echoed in the message).
struct LedgerCheck {
  bool ok = false;
  std::uint64_t expected_backwards = 0;
  std::uint64_t actual_backwards = 0;
  std::string message;  // "pass: ..." or "mismatch: expected ..., got ..."
};

LedgerCheck ledger_assert(const CostLedger& ledger, Regime regime,
                          std::size_t n_updates, std::size_t k_or_m);

/// Same identities from recorded counters (for checking a written manifest).
LedgerCheck ledger_assert_counts(std::uint64_t backward_count,
                                 std::uint64_t sgd_update_count, Regime regime,
                                 std::size_t n_updates, std::size_t k_or_m);

}  // namespace freetrain
