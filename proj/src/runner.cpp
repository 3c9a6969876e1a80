#include "freetrain/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "freetrain/rng.hpp"
#include "freetrain/version.hpp"
#include "json.hpp"

namespace freetrain {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

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

Dataset take_rows(const Dataset& ds, std::size_t n) {
  n = std::min(n, ds.size());
  std::vector<std::size_t> shape = ds.images.shape;
  shape[0] = n;
  const std::size_t row = ds.images.numel() / ds.images.shape[0];
  Tensor images = Tensor::zeros(shape);
  std::copy(ds.images.data.begin(), ds.images.data.begin() + n * row,
            images.data.begin());
  Dataset out = ds;
  out.images = std::move(images);
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  return out;
}

const char* regime_str(Regime r) {
  switch (r) {
    case Regime::Natural: return "natural";
    case Regime::Kpgd: return "kpgd";
    case Regime::Free: return "free";
  }
  return "natural";
}

const char* direction_str(DirectionKind d) {
  return d == DirectionKind::Adversarial ? "adversarial" : "rademacher";
}

json attack_json(const NamedAttack& a) {
  json j;
  j["name"] = a.name;
  j["k"] = a.config.steps;
  j["eps"] = a.config.eps;
  j["eps_step"] = a.config.eps_step;
  j["restarts"] = a.config.restarts;
  j["random_init"] = a.config.random_init;
  return j;
}

/// The config as run (after dataset units were stamped). The output section
/// is deliberately absent so a run's manifest does not depend on where it was
/// written.
json config_json(const ExperimentConfig& cfg) {
  json model;
  model["kind"] = cfg.model.kind == ModelKind::Mlp ? "mlp" : "convnet";
  model["input"] = cfg.model.input_shape;
  model["classes"] = cfg.model.classes;
  model["hidden"] = cfg.model.hidden;
  model["conv_channels"] = cfg.model.conv_channels;
  model["kernel"] = cfg.model.kernel;
  model["padding"] = cfg.model.padding;
  model["pool_window"] = cfg.model.pool_window;
  model["input_scale"] = cfg.model.input_scale;

  json data;
  data["source"] = cfg.data.source;
  data["data_seed"] = cfg.data.data_seed;
  if (cfg.data.source == "synth_digits" || cfg.data.source == "synth_blobs") {
    data["train_per_class"] = cfg.data.train_per_class;
    data["eval_per_class"] = cfg.data.eval_per_class;
  }
  if (cfg.data.source == "synth_digits") {
    data["noise_sigma"] = cfg.data.digit_noise_sigma;
    data["brightness_lo"] = cfg.data.digit_brightness_lo;
    data["max_shift"] = cfg.data.digit_max_shift;
  }
  if (cfg.data.source == "synth_blobs") {
    data["blob_classes"] = cfg.data.blob_classes;
    data["blob_dims"] = cfg.data.blob_dims;
    data["blob_separation"] = cfg.data.blob_separation;
  }
  if (cfg.data.source == "idx") {
    data["train_images"] = cfg.data.train_images;
    data["train_labels"] = cfg.data.train_labels;
    data["eval_images"] = cfg.data.eval_images;
    data["eval_labels"] = cfg.data.eval_labels;
  }
  if (cfg.data.source == "cifar") {
    data["train_files"] = cfg.data.train_files;
    data["eval_files"] = cfg.data.eval_files;
  }

  json train;
  train["regime"] = regime_str(cfg.train.regime);
  if (cfg.train.regime == Regime::Free) train["m"] = cfg.train.replay_m;
  if (cfg.train.regime == Regime::Kpgd) {
    train["k"] = cfg.train.attack_steps;
    train["random_init"] = cfg.train.attack_random_init;
    train["eps_step"] = cfg.train.eps_step;
  }
  train["eps"] = cfg.train.eps;
  train["range_lo"] = cfg.train.range_lo;
  train["range_hi"] = cfg.train.range_hi;
  train["epochs"] = cfg.train.epochs;
  train["batch_size"] = cfg.train.batch_size;
  train["lr"] = cfg.train.lr;
  train["lr_decay"] = cfg.train.lr_decay;
  train["momentum"] = cfg.train.momentum;
  train["weight_decay"] = cfg.train.weight_decay;
  train["seed"] = cfg.train.seed;

  json eval;
  eval["attacks"] = json::array();
  for (const NamedAttack& a : cfg.eval.attacks)
    eval["attacks"].push_back(attack_json(a));
  eval["eval_n"] = cfg.eval.eval_n;
  eval["batch_size"] = cfg.eval.batch_size;
  eval["seed"] = cfg.eval.seed;

  json surface;
  surface["examples"] = cfg.surface.examples;
  surface["grid_n"] = cfg.surface.grid_n;
  surface["extent"] = cfg.surface.extent;
  surface["dir_a"] = direction_str(cfg.surface.dir_a);
  surface["dir_b"] = direction_str(cfg.surface.dir_b);
  surface["seed"] = cfg.surface.seed;

  json out;
  out["model"] = model;
  out["data"] = data;
  out["train"] = train;
  out["eval"] = eval;
  out["surface"] = surface;
  return out;
}

json dataset_json(const Dataset& train, const Dataset& eval) {
  json j;
  j["train_fingerprint"] = dataset_fingerprint(train);
  j["eval_fingerprint"] = dataset_fingerprint(eval);
  j["train_examples"] = train.size();
  j["eval_examples"] = eval.size();
  j["classes"] = train.classes;
  j["range_lo"] = train.range_lo;
  j["range_hi"] = train.range_hi;
  return j;
}

json schedule_json(const ExperimentConfig& cfg, std::size_t n_train) {
  const std::size_t bs = cfg.train.batch_size;
  const std::size_t per_epoch = (n_train + bs - 1) / bs;
  json j;
  j["regime"] = regime_str(cfg.train.regime);
  j["epochs"] = cfg.train.epochs;
  j["batches_per_epoch"] = per_epoch;
  if (cfg.train.regime == Regime::Free) {
    const std::size_t outer = cfg.train.epochs / cfg.train.replay_m;
    j["m"] = cfg.train.replay_m;
    j["outer_epochs"] = outer;
    j["dropped_epochs"] = cfg.train.epochs - outer * cfg.train.replay_m;
    j["planned_updates"] = outer * per_epoch * cfg.train.replay_m;
  } else {
    if (cfg.train.regime == Regime::Kpgd) j["k"] = cfg.train.attack_steps;
    j["planned_updates"] = cfg.train.epochs * per_epoch;
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  expect(f.good(), cat("cannot write ", path));
  f << text;
  expect(f.good(), cat("cannot write ", path));
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  expect(f.good(), cat("cannot open ", path));
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

/// Prepared run inputs shared by run/eval/surface so a checkpoint is always
/// re-evaluated against the exact data and units of the original run.
struct RunSetup {
  ExperimentConfig cfg;  // units stamped, eval split sliced
  std::string out_dir;
  SplitPair data;
};

RunSetup prepare(const ExperimentConfig& cfg_in, const std::string& override_dir) {
  RunSetup s;
  s.cfg = cfg_in;
  s.out_dir = resolve_out_dir(s.cfg, override_dir);
  s.data = load_datasets(s.cfg.data);
  if (s.cfg.eval.eval_n > 0 && s.cfg.eval.eval_n < s.data.eval.size())
    s.data.eval = take_rows(s.data.eval, s.cfg.eval.eval_n);
  stamp_dataset_units(s.cfg, s.data.train);
  s.cfg.model.validate();
  fs::create_directories(s.out_dir);
  return s;
}

std::vector<std::string> emit_surfaces(const Model& model,
                                       const ParamSet& params,
                                       const RunSetup& s) {
  std::vector<std::string> paths;
  const SurfaceConfig& sc = s.cfg.surface;
  const std::size_t n = std::min(sc.examples, s.data.eval.size());
  if (n == 0) return paths;

  std::vector<std::size_t> shape = s.cfg.model.input_shape;
  shape.insert(shape.begin(), 1);
  const std::size_t row = shape_numel(s.cfg.model.input_shape);
  const Tensor rows = reshape_rows(s.data.eval.images, s.cfg.model.input_shape);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = Tensor::zeros(shape);
    std::copy(rows.data.begin() + i * row, rows.data.begin() + (i + 1) * row,
              x.data.begin());
    SurfaceGrid grid = loss_surface(
        model, params, x, s.data.eval.labels[i], sc.dir_a, sc.dir_b, sc.extent,
        sc.grid_n, s.data.eval.range_lo, s.data.eval.range_hi,
        mix_seed(sc.seed, i));
    char name[64];
    std::snprintf(name, sizeof(name), "surface_%03zu.csv", i);
    paths.push_back(s.out_dir + "/" + name);
    write_surface_csv(grid, paths.back());
  }
  return paths;
}

}  // namespace

std::string resolve_out_dir(const ExperimentConfig& cfg,
                            const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  if (const char* env = std::getenv("FREETRAIN_OUTDIR"); env && *env)
    return env;
  return cfg.out_dir;
}

SplitPair load_datasets(const DataConfig& cfg) {
  SplitPair out;
  if (cfg.source == "synth_digits") {
    out.train = synth_digits(cfg.train_per_class, cfg.data_seed,
                             cfg.digit_noise_sigma, cfg.digit_brightness_lo,
                             cfg.digit_max_shift);
    out.eval = synth_digits(cfg.eval_per_class, mix_seed(cfg.data_seed, 1),
                            cfg.digit_noise_sigma, cfg.digit_brightness_lo,
                            cfg.digit_max_shift);
  } else if (cfg.source == "synth_blobs") {
    out.train = synth_blobs(cfg.blob_classes, cfg.train_per_class,
                            cfg.blob_dims, cfg.blob_separation, cfg.data_seed);
    out.eval = synth_blobs(cfg.blob_classes, cfg.eval_per_class, cfg.blob_dims,
                           cfg.blob_separation, mix_seed(cfg.data_seed, 1));
  } else if (cfg.source == "idx") {
    expect(!cfg.train_images.empty(), "data.train_images: missing path");
    expect(!cfg.train_labels.empty(), "data.train_labels: missing path");
    expect(!cfg.eval_images.empty(), "data.eval_images: missing path");
    expect(!cfg.eval_labels.empty(), "data.eval_labels: missing path");
    out.train = load_idx(cfg.train_images, cfg.train_labels);
    out.eval = load_idx(cfg.eval_images, cfg.eval_labels);
  } else if (cfg.source == "cifar") {
    expect(!cfg.train_files.empty(), "data.train_files: missing paths");
    expect(!cfg.eval_files.empty(), "data.eval_files: missing paths");
    out.train = load_cifar_binary(cfg.train_files);
    out.eval = load_cifar_binary(cfg.eval_files);
  } else {
    throw TensorError(cat("data.source: unknown source '", cfg.source,
                          "' (synth_digits, synth_blobs, idx, cifar)"));
  }
  out.train.split = "train";
  out.eval.split = "eval";
  return out;
}

void stamp_dataset_units(ExperimentConfig& cfg, const Dataset& data) {
  cfg.train.range_lo = data.range_lo;
  cfg.train.range_hi = data.range_hi;
  for (NamedAttack& a : cfg.eval.attacks) {
    a.config.range_lo = data.range_lo;
    a.config.range_hi = data.range_hi;
  }
  if (cfg.surface.extent == 0.0f) cfg.surface.extent = cfg.train.eps;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg_in,
                            const std::string& override_dir) {
  RunSetup s = prepare(cfg_in, override_dir);
  s.cfg.train.validate();

  RunArtifacts art;
  art.out_dir = s.out_dir;
  art.manifest_path = s.out_dir + "/manifest.json";
  art.checkpoint_path = s.out_dir + "/checkpoint.ftck";
  art.report_path = s.out_dir + "/report.csv";

  json manifest;
  manifest["version"] = kVersion;
  manifest["seed"] = s.cfg.train.seed;
  manifest["config"] = config_json(s.cfg);
  manifest["dataset"] = dataset_json(s.data.train, s.data.eval);
  manifest["schedule"] = schedule_json(s.cfg, s.data.train.size());
  // Written before training starts so an aborted run still identifies itself.
  write_text(art.manifest_path, manifest.dump(2) + "\n");

  Model model(s.cfg.model);
  CostLedger ledger;
  art.result = train(model, s.data.train, s.cfg.train, ledger);
  save_checkpoint(art.result.params, art.checkpoint_path);

  const std::size_t k_or_m = s.cfg.train.regime == Regime::Kpgd
                                 ? std::size_t(s.cfg.train.attack_steps)
                                 : s.cfg.train.replay_m;
  art.ledger_check =
      ledger_assert(ledger, s.cfg.train.regime, art.result.total_updates, k_or_m);

  CostLedger eval_ledger;
  art.report = evaluate(model, art.result.params, s.data.eval,
                        s.cfg.eval.attacks, s.cfg.eval.seed, eval_ledger,
                        s.cfg.eval.batch_size);
  write_report_csv(art.report, art.report_path);
  art.surface_paths = emit_surfaces(model, art.result.params, s);

  json result;
  result["total_updates"] = art.result.total_updates;
  result["outer_epochs"] = art.result.outer_epochs;
  result["dropped_epochs"] = art.result.dropped_epochs;
  result["final_loss"] = art.result.final_loss;
  json counters;
  counters["forward_count"] = ledger.forward_count();
  counters["backward_count"] = ledger.backward_count();
  counters["sgd_update_count"] = ledger.sgd_update_count();
  counters["delta_update_count"] = ledger.delta_update_count();
  result["ledger"] = counters;
  json check;
  check["ok"] = art.ledger_check.ok;
  check["expected_backwards"] = art.ledger_check.expected_backwards;
  check["actual_backwards"] = art.ledger_check.actual_backwards;
  check["message"] = art.ledger_check.message;
  result["ledger_check"] = check;
  json eval_summary;
  eval_summary["natural_accuracy"] = art.report.natural_accuracy;
  eval_summary["n"] = art.report.n;
  eval_summary["rows"] = json::array();
  for (const EvalRow& row : art.report.rows) {
    json r;
    r["attack"] = row.attack;
    r["accuracy"] = row.accuracy;
    eval_summary["rows"].push_back(r);
  }
  result["eval"] = eval_summary;
  manifest["result"] = result;
  write_text(art.manifest_path, manifest.dump(2) + "\n");
  return art;
}

EvalReport eval_checkpoint(const std::string& checkpoint_path,
                           const ExperimentConfig& cfg,
                           const std::string& override_dir,
                           std::string& report_path_out) {
  RunSetup s = prepare(cfg, override_dir);
  ParamSet params = load_checkpoint(checkpoint_path);
  Model model(s.cfg.model);
  CostLedger ledger;
  EvalReport report = evaluate(model, params, s.data.eval, s.cfg.eval.attacks,
                               s.cfg.eval.seed, ledger, s.cfg.eval.batch_size);
  report_path_out = s.out_dir + "/eval_report.csv";
  write_report_csv(report, report_path_out);
  return report;
}

std::vector<std::string> surface_checkpoint(const std::string& checkpoint_path,
                                            const ExperimentConfig& cfg,
                                            const std::string& override_dir) {
  RunSetup s = prepare(cfg, override_dir);
  ParamSet params = load_checkpoint(checkpoint_path);
  Model model(s.cfg.model);
  return emit_surfaces(model, params, s);
}

LedgerCheck check_manifest_ledger(const std::string& manifest_path) {
  const std::string text = read_text(manifest_path);
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const std::exception& e) {
    throw TensorError(cat("manifest ", manifest_path,
                          ": not a valid manifest: ", e.what()));
  }
  try {
    const json& schedule = manifest.at("schedule");
    const json& result = manifest.at("result");
    const json& counters = result.at("ledger");
    const std::string regime_name = schedule.at("regime").get<std::string>();
    Regime regime;
    if (regime_name == "natural") regime = Regime::Natural;
    else if (regime_name == "kpgd") regime = Regime::Kpgd;
    else if (regime_name == "free") regime = Regime::Free;
    else throw TensorError(cat("manifest ", manifest_path, ": unknown regime '",
                               regime_name, "'"));
    std::size_t k_or_m = 1;
    if (schedule.contains("k")) k_or_m = schedule.at("k").get<std::size_t>();
    if (schedule.contains("m")) k_or_m = schedule.at("m").get<std::size_t>();
    return ledger_assert_counts(
        counters.at("backward_count").get<std::uint64_t>(),
        counters.at("sgd_update_count").get<std::uint64_t>(), regime,
        result.at("total_updates").get<std::size_t>(), k_or_m);
  } catch (const TensorError&) {
    throw;
  } catch (const std::exception& e) {
    throw TensorError(cat("manifest ", manifest_path,
                          ": not a valid manifest: ", e.what()));
  }
}

}  // namespace freetrain
