#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "freetrain/runner.hpp"
#include "freetrain/version.hpp"

using namespace freetrain;

namespace {

void print_report(const EvalReport& report) {
  for (const EvalRow& row : report.rows) {
    if (row.attack == "natural") {
      std::printf("%-10s accuracy %.4f  (n=%zu)\n", row.attack.c_str(),
                  row.accuracy, row.n);
    } else {
      std::printf("%-10s accuracy %.4f  (k=%d eps=%g eps_step=%g restarts=%d)\n",
                  row.attack.c_str(), row.accuracy, row.k, double(row.eps),
                  double(row.eps_step), row.restarts);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial training at natural-training cost"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, manifest_path, out_dir;

  CLI::App* run = app.add_subcommand("run", "train, evaluate, write artifacts");
  run->add_option("config", config_path, "experiment config")->required();
  run->add_option("--out", out_dir, "output directory (overrides FREETRAIN_OUTDIR and the config)");

  CLI::App* eval = app.add_subcommand("eval", "re-evaluate a checkpoint");
  eval->add_option("checkpoint", checkpoint_path, "checkpoint.ftck from a run")->required();
  eval->add_option("config", config_path, "experiment config")->required();
  eval->add_option("--out", out_dir, "output directory");

  CLI::App* surface = app.add_subcommand("surface", "loss-surface grids from a checkpoint");
  surface->add_option("checkpoint", checkpoint_path, "checkpoint.ftck from a run")->required();
  surface->add_option("config", config_path, "experiment config")->required();
  surface->add_option("--out", out_dir, "output directory");

  CLI::App* ledger = app.add_subcommand("ledger", "re-check a manifest's cost identities");
  ledger->add_option("manifest", manifest_path, "manifest.json from a run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      RunArtifacts art = run_experiment(parse_config(config_path), out_dir);
      std::printf("trained %zu updates (%zu outer epochs, %zu dropped), final loss %.4f\n",
                  art.result.total_updates, art.result.outer_epochs,
                  art.result.dropped_epochs, art.result.final_loss);
      std::printf("%s\n", art.ledger_check.message.c_str());
      print_report(art.report);
      std::printf("artifacts in %s\n", art.out_dir.c_str());
      return art.ledger_check.ok ? 0 : 1;
    }
    if (eval->parsed()) {
      std::string report_path;
      EvalReport report = eval_checkpoint(checkpoint_path,
                                          parse_config(config_path), out_dir,
                                          report_path);
      print_report(report);
      std::printf("report in %s\n", report_path.c_str());
      return 0;
    }
    if (surface->parsed()) {
      std::vector<std::string> paths =
          surface_checkpoint(checkpoint_path, parse_config(config_path), out_dir);
      for (const std::string& p : paths) std::printf("%s\n", p.c_str());
      if (paths.empty())
        std::printf("no grids requested (surface.examples = 0)\n");
      return 0;
    }
    LedgerCheck check = check_manifest_ledger(manifest_path);
    std::printf("%s\n", check.message.c_str());
    return check.ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
