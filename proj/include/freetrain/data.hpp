#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freetrain/tensor.hpp"

namespace freetrain {

/// Immutable labeled image set. Pixels are raw units (no normalization here,
/// so perturbation budgets keep their pixel meaning).
struct Dataset {
  Tensor images;  // [N, ...dims]
  std::vector<int> labels;
  float range_lo = 0.0f;
  float range_hi = 255.0f;
  std::size_t classes = 0;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> example_shape() const;  // dims without N
  void validate() const;                           // throws TensorError
};

/// IDX pair (big-endian headers, u8 payloads); pixels become [0, 255] floats.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Inverse of load_idx for integral-valued datasets (rounds to nearest u8).
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

/// CIFAR-10 binary batches: per record 1 label byte + 3072 channel-major
/// pixels. Images come out as [N, 3, 32, 32].
Dataset load_cifar_binary(const std::vector<std::string>& paths);

/// Gaussian clusters on a shared diagonal, affinely squeezed into [0, 1].
Dataset synth_blobs(std::size_t classes, std::size_t per_class,
                    std::size_t dims, float separation, std::uint64_t seed);

/// Deterministic seven-segment digit glyphs, 28x28 in [0, 255], integral
/// pixel values (IDX round-trip safe): per-image shift, brightness and noise.
/// The knobs set the glyph contrast: noise_sigma is the per-pixel gaussian
/// noise, brightness_lo the dimmest stroke as a fraction of 255, max_shift
/// (<= 5) the largest per-image translation in pixels.
Dataset synth_digits(std::size_t per_class, std::uint64_t seed,
                     float noise_sigma = 10.0f, float brightness_lo = 0.85f,
                     int max_shift = 3);

/// First n examples of each class, dataset order preserved.
Dataset take_per_class(const Dataset& ds, std::size_t per_class);

struct Batch {
  Tensor x;  // [b, ...dims]
  std::vector<int> y;
  std::vector<std::size_t> indices;  // rows of the source dataset
};

/// Deterministic batching; a fixed seed fixes the permutation. The final
/// batch may be short. Together the batches partition the dataset.
std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size,
                           std::uint64_t seed, bool shuffle);

/// Reinterprets [b, ...] rows as [b, ...per_example]; element counts must
/// match. Used to adapt file-shaped images to a model's input shape.
Tensor reshape_rows(const Tensor& x, const std::vector<std::size_t>& per_example);

/// FNV-1a over shapes, labels and pixel bits; 16 hex digits.
std::string dataset_fingerprint(const Dataset& ds);

}  // namespace freetrain
