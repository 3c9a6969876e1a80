#include "freetrain/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
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

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

const char* direction_name(DirectionKind kind) {
  return kind == DirectionKind::Adversarial ? "adversarial" : "rademacher";
}

const char* regime_name(Regime regime) {
  switch (regime) {
    case Regime::Natural: return "natural";
    case Regime::Kpgd: return "kpgd";
    case Regime::Free: return "free";
  }
  return "?";
}

void write_text_file(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  expect(out.good(), cat("cannot open ", path, " for writing"));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  expect(out.good(), cat("write failed for ", path));
}

}  // namespace

EvalReport evaluate(const Model& model, const ParamSet& params,
                    const Dataset& data, const std::vector<NamedAttack>& attacks,
                    std::uint64_t seed, CostLedger& ledger,
                    std::size_t batch_size) {
  data.validate();
  expect(data.size() >= 1, "evaluate: empty dataset");
  expect(batch_size >= 1, "evaluate: batch size expected >= 1");
  for (const NamedAttack& a : attacks) a.config.validate();

  std::vector<Batch> parts = batches(data, batch_size, 0, false);
  for (Batch& b : parts) b.x = reshape_rows(b.x, model.spec().input_shape);

  EvalReport report;
  report.n = data.size();
  report.seed = seed;

  const auto clean_start = std::chrono::steady_clock::now();
  std::size_t clean_hits = 0;
  for (const Batch& b : parts) {
    std::vector<int> pred = model.predict(params, b.x, ledger);
    for (std::size_t i = 0; i < pred.size(); ++i)
      clean_hits += pred[i] == b.y[i];
  }
  report.natural_accuracy = double(clean_hits) / double(report.n);
  EvalRow natural;
  natural.attack = "natural";
  natural.accuracy = report.natural_accuracy;
  natural.n = report.n;
  natural.seconds = seconds_since(clean_start);
  report.rows.push_back(natural);

  for (const NamedAttack& a : attacks) {
    const auto start = std::chrono::steady_clock::now();
    std::size_t robust = 0;
    for (std::size_t bi = 0; bi < parts.size(); ++bi) {
      // Per-batch seeds shared by every attack row: a row with more restarts
      // replays the smaller row's restarts first, so flips are supersets.
      AttackResult res =
          attack_with_restarts(model, params, parts[bi].x, parts[bi].y,
                               a.config, mix_seed(seed, bi), ledger);
      for (std::uint8_t flipped : res.success) robust += flipped == 0;
    }
    EvalRow row;
    row.attack = a.name;
    row.k = a.config.steps;
    row.eps = a.config.eps;
    row.eps_step = a.config.eps_step;
    row.restarts = a.config.restarts;
    row.accuracy = double(robust) / double(report.n);
    row.n = report.n;
    row.seconds = seconds_since(start);
    report.rows.push_back(row);
  }
  return report;
}

std::string report_csv(const EvalReport& report) {
  std::string out = "attack,k,eps,eps_step,restarts,accuracy,n,seconds\n";
  char line[256];
  for (const EvalRow& row : report.rows) {
    std::snprintf(line, sizeof line, "%s,%d,%g,%g,%d,%.6f,%zu,%.3f\n",
                  row.attack.c_str(), row.k, double(row.eps),
                  double(row.eps_step), row.restarts, row.accuracy, row.n,
                  row.seconds);
    out += line;
  }
  return out;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  write_text_file(report_csv(report), path);
}

Tensor rademacher_direction(const std::vector<std::size_t>& shape,
                            std::uint64_t seed) {
  Tensor out = Tensor::zeros(shape);
  Rng rng(seed);
  for (float& v : out.data) v = rng.below(2) ? 1.0f : -1.0f;
  return out;
}

Tensor adversarial_direction(const Model& model, const ParamSet& params,
                             const Tensor& x, const std::vector<int>& y) {
  CostLedger scratch;
  ModelForward fwd = model.forward(params, x, y, scratch);
  GradPair grads = backward_dual(fwd.tape, scratch);
  const Tensor& gx = grads.input_grads.at(fwd.input);
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < gx.numel(); ++i)
    out.data[i] = gx.data[i] > 0.0f ? 1.0f : (gx.data[i] < 0.0f ? -1.0f : 0.0f);
  return out;
}

SurfaceGrid loss_surface(const Model& model, const ParamSet& params,
                         const Tensor& x, int y, DirectionKind dir_a,
                         DirectionKind dir_b, float extent, std::size_t grid_n,
                         float range_lo, float range_hi, std::uint64_t seed) {
  expect(grid_n >= 3 && grid_n % 2 == 1,
         cat("loss_surface: grid_n expected odd and >= 3, got ", grid_n));
  expect(extent > 0.0f,
         cat("loss_surface: extent expected > 0, got ", extent));
  expect(x.rank() >= 2 && x.shape[0] == 1,
         cat("loss_surface: expected one example [1, ...], got ",
             shape_str(x.shape)));

  auto direction = [&](DirectionKind kind, std::uint64_t axis) {
    return kind == DirectionKind::Adversarial
               ? adversarial_direction(model, params, x, {y})
               : rademacher_direction(x.shape, mix_seed(seed, axis));
  };
  const Tensor da = direction(dir_a, 0);
  const Tensor db = direction(dir_b, 1);

  SurfaceGrid grid;
  grid.dir_a = dir_a;
  grid.dir_b = dir_b;
  grid.extent = extent;
  for (std::size_t i = 0; i < grid_n; ++i)
    grid.coords.push_back(
        extent * (2.0f * float(i) / float(grid_n - 1) - 1.0f));

  grid.values = Tensor::zeros({grid_n, grid_n});
  Tensor probe = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < grid_n; ++i)
    for (std::size_t j = 0; j < grid_n; ++j) {
      for (std::size_t p = 0; p < probe.numel(); ++p)
        probe.data[p] = std::clamp(x.data[p] + grid.coords[i] * da.data[p] +
                                       grid.coords[j] * db.data[p],
                                   range_lo, range_hi);
      CostLedger scratch;
      ModelForward fwd = model.forward(params, probe, {y}, scratch);
      grid.values[i * grid_n + j] = fwd.tape.value(fwd.loss)[0];
    }
  return grid;
}

std::string surface_csv(const SurfaceGrid& grid) {
  const std::size_t n = grid.coords.size();
  char buf[128];
  std::snprintf(buf, sizeof buf,
                "# dir_a=%s dir_b=%s extent=%g grid_n=%zu; plain "
                "sign/Rademacher directions (not filter-normalized)\n",
                direction_name(grid.dir_a), direction_name(grid.dir_b),
                double(grid.extent), n);
  std::string out = buf;
  out += "a\\b";
  for (float c : grid.coords) {
    std::snprintf(buf, sizeof buf, ",%g", double(c));
    out += buf;
  }
  out += "\n";
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%g", double(grid.coords[i]));
    out += buf;
    for (std::size_t j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof buf, ",%.6f", double(grid.values[i * n + j]));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

void write_surface_csv(const SurfaceGrid& grid, const std::string& path) {
  write_text_file(surface_csv(grid), path);
}

LedgerCheck ledger_assert_counts(std::uint64_t backward_count,
                                 std::uint64_t sgd_update_count, Regime regime,
                                 std::size_t n_updates, std::size_t k_or_m) {
  LedgerCheck check;
  check.actual_backwards = backward_count;
  check.expected_backwards =
      regime == Regime::Kpgd ? (k_or_m + 1) * n_updates : n_updates;
  const bool backwards_ok = backward_count == check.expected_backwards;
  const bool updates_ok = sgd_update_count == n_updates;
  check.ok = backwards_ok && updates_ok;
  if (check.ok) {
    check.message = cat("pass: ", regime_name(regime), " backward_count ",
                        backward_count, " == ", check.expected_backwards,
                        ", sgd updates ", sgd_update_count, " == ", n_updates);
  } else {
    check.message =
        cat("mismatch: ", regime_name(regime), " expected backward_count ",
            check.expected_backwards,
            regime == Regime::Kpgd ? cat(" = (", k_or_m, "+1) x ", n_updates)
                                   : std::string(),
            ", got ", backward_count, "; expected sgd updates ", n_updates,
            ", got ", sgd_update_count);
  }
  return check;
}

LedgerCheck ledger_assert(const CostLedger& ledger, Regime regime,
                          std::size_t n_updates, std::size_t k_or_m) {
  return ledger_assert_counts(ledger.backward_count(),
                              ledger.sgd_update_count(), regime, n_updates,
                              k_or_m);
}

}  // namespace freetrain
