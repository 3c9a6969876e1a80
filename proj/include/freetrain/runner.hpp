#pragma once

#include <string>
#include <vector>

#include "freetrain/config.hpp"

namespace freetrain {

struct RunArtifacts {
  std::string out_dir;
  std::string manifest_path;    // manifest.json
  std::string checkpoint_path;  // checkpoint.ftck
  std::string report_path;      // report.csv
  std::vector<std::string> surface_paths;
  TrainResult result;
  EvalReport report;
  LedgerCheck ledger_check;
};

/// Output directory priority: explicit override > FREETRAIN_OUTDIR > config.
std::string resolve_out_dir(const ExperimentConfig& cfg,
                            const std::string& override_dir = "");

struct SplitPair {
  Dataset train;
  Dataset eval;
};

/// Materializes the configured source. The eval split of a synthetic source
/// derives its seed from data_seed, so train and eval never share examples.
SplitPair load_datasets(const DataConfig& cfg);

/// Copies the dataset's value range into the train config and every attack
/// config, and resolves the surface extent default (training eps).
void stamp_dataset_units(ExperimentConfig& cfg, const Dataset& data);

/// End to end: load data, write the manifest, train, checkpoint, evaluate,
/// emit surface grids, then extend the manifest with the results and the
/// ledger check. Artifacts are byte-stable for a fixed config and seed except
/// for the report's seconds column.
RunArtifacts run_experiment(const ExperimentConfig& cfg,
                            const std::string& override_dir = "");

/// The `eval` subcommand body: checkpoint + config -> report written to
/// eval_report.csv in the resolved output directory.
EvalReport eval_checkpoint(const std::string& checkpoint_path,
                           const ExperimentConfig& cfg,
                           const std::string& override_dir,
                           std::string& report_path_out);

/// The `surface` subcommand body: grids for the first `surface.examples`
/// eval examples of the configured dataset.
std::vector<std::string> surface_checkpoint(const std::string& checkpoint_path,
                                            const ExperimentConfig& cfg,
                                            const std::string& override_dir);

/// The `ledger` subcommand body: re-checks the cost identities recorded in a
/// run manifest. Throws TensorError on unreadable/malformed manifests.
LedgerCheck check_manifest_ledger(const std::string& manifest_path);

}  // namespace freetrain
