#pragma once

#include <string>
#include <vector>

#include "freetrain/eval.hpp"
#include "freetrain/train.hpp"

namespace freetrain {

/// Where the train/eval splits come from. Pixel ranges are set by the
/// loaders, never by config keys, so eps is always in the loader's raw units.
struct DataConfig {
  std::string source;  // synth_digits | synth_blobs | idx | cifar
  std::uint64_t data_seed = 5;
  // synth_digits / synth_blobs
  std::size_t train_per_class = 100;
  std::size_t eval_per_class = 50;
  // synth_digits glyph contrast
  float digit_noise_sigma = 10.0f;
  float digit_brightness_lo = 0.85f;
  int digit_max_shift = 3;
  // synth_blobs
  std::size_t blob_classes = 2;
  std::size_t blob_dims = 8;
  float blob_separation = 6.0f;
  // idx
  std::string train_images, train_labels, eval_images, eval_labels;
  // cifar
  std::vector<std::string> train_files, eval_files;
};

struct EvalConfig {
  std::vector<NamedAttack> attacks;
  std::size_t eval_n = 0;  // 0 = the whole eval split
  std::size_t batch_size = 200;
  std::uint64_t seed = 9;
};

struct SurfaceConfig {
  std::size_t examples = 0;  // grids to emit; 0 disables
  std::size_t grid_n = 11;
  float extent = 0.0f;  // 0 = use the training eps
  DirectionKind dir_a = DirectionKind::Adversarial;
  DirectionKind dir_b = DirectionKind::Rademacher;
  std::uint64_t seed = 33;
};

struct ExperimentConfig {
  ModelSpec model;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  SurfaceConfig surface;
  std::string out_dir = "run_out";
};

/// Sectioned `key = value` text ([model] [data] [train] [eval] [surface]
/// [output], full-line # comments). Unknown sections, unknown keys, malformed
/// values and missing required keys are hard errors naming the offender.
/// Attack configs are parsed without a value range; the runner stamps the
/// dataset's range (and the training eps defaults) before use.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin);

/// Space-separated attack list: `fgsm pgd(k=20) bim(k=7) cw(k=30)
/// pgd(k=20,restarts=10,eps=8,eps_step=2)`. fgsm fixes one full-eps step and
/// no random start; bim is iterative without random start; pgd random-starts;
/// cw is pgd on the margin loss. eps/eps_step default to default_eps and
/// eps/4.
std::vector<NamedAttack> parse_attacks(const std::string& text,
                                       float default_eps);

}  // namespace freetrain
