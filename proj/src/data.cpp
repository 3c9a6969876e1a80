#include "freetrain/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
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

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw TensorError(cat("dataset ", path, ": cannot open"));
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

std::uint32_t be32_at(const std::string& bytes, std::size_t at,
                      const std::string& path, const char* what) {
  expect(at + 4 <= bytes.size(),
         cat("dataset ", path, ": truncated reading ", what));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + at;
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void be32_out(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // u8 payload, 3 dims
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // u8 payload, 1 dim

}  // namespace

std::vector<std::size_t> Dataset::example_shape() const {
  if (images.shape.empty()) return {};
  return {images.shape.begin() + 1, images.shape.end()};
}

void Dataset::validate() const {
  expect(range_lo < range_hi, cat("dataset: value range [", range_lo, ", ",
                                  range_hi, "] is empty"));
  expect(classes >= 2, cat("dataset: expected >= 2 classes, got ", classes));
  expect(!images.shape.empty() && images.shape[0] == labels.size(),
         cat("dataset: ", images.shape.empty() ? 0 : images.shape[0],
             " images vs ", labels.size(), " labels"));
  for (std::size_t i = 0; i < labels.size(); ++i)
    expect(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < classes,
           cat("dataset: label ", labels[i], " at row ", i,
               " outside [0, ", classes, ")"));
  for (float v : images.data)
    expect(v >= range_lo && v <= range_hi,
           cat("dataset: pixel ", v, " outside [", range_lo, ", ", range_hi,
               "]"));
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  const std::string img = read_file(images_path);
  const std::uint32_t img_magic = be32_at(img, 0, images_path, "magic");
  expect(img_magic == kIdxImagesMagic,
         cat("dataset ", images_path, ": expected image magic 0x", std::hex,
             kIdxImagesMagic, ", got 0x", img_magic));
  const std::uint32_t n = be32_at(img, 4, images_path, "count");
  const std::uint32_t rows = be32_at(img, 8, images_path, "rows");
  const std::uint32_t cols = be32_at(img, 12, images_path, "cols");
  const std::size_t want = static_cast<std::size_t>(n) * rows * cols;
  const std::size_t have = img.size() - 16;
  expect(have == want, cat("dataset ", images_path, ": expected ", want,
                           " payload bytes, got ", have));

  const std::string lab = read_file(labels_path);
  const std::uint32_t lab_magic = be32_at(lab, 0, labels_path, "magic");
  expect(lab_magic == kIdxLabelsMagic,
         cat("dataset ", labels_path, ": expected label magic 0x", std::hex,
             kIdxLabelsMagic, ", got 0x", lab_magic));
  const std::uint32_t n_lab = be32_at(lab, 4, labels_path, "count");
  expect(lab.size() - 8 == n_lab, cat("dataset ", labels_path, ": expected ",
                                      n_lab, " payload bytes, got ",
                                      lab.size() - 8));
  expect(n == n_lab, cat("dataset: ", n, " images in ", images_path, " vs ",
                         n_lab, " labels in ", labels_path));

  Dataset ds;
  ds.images = Tensor::zeros({n, rows, cols});
  const auto* px = reinterpret_cast<const unsigned char*>(img.data()) + 16;
  for (std::size_t i = 0; i < want; ++i)
    ds.images.data[i] = static_cast<float>(px[i]);
  ds.labels.reserve(n);
  const auto* ly = reinterpret_cast<const unsigned char*>(lab.data()) + 8;
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(ly[i]);
  ds.range_lo = 0.0f;
  ds.range_hi = 255.0f;
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  expect(ds.images.rank() == 3,
         cat("write_idx: expected [N, rows, cols] images, got ",
             shape_str(ds.images.shape)));
  std::string img;
  be32_out(img, kIdxImagesMagic);
  for (std::size_t d : ds.images.shape)
    be32_out(img, static_cast<std::uint32_t>(d));
  for (float v : ds.images.data) {
    const float r = std::round(v);
    expect(r >= 0.0f && r <= 255.0f,
           cat("write_idx: pixel ", v, " outside [0, 255]"));
    img.push_back(static_cast<char>(static_cast<unsigned char>(r)));
  }
  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  expect(fi.good(), cat("write_idx: cannot open ", images_path));
  fi.write(img.data(), static_cast<std::streamsize>(img.size()));
  expect(fi.good(), cat("write_idx: write failed for ", images_path));

  std::string lab;
  be32_out(lab, kIdxLabelsMagic);
  be32_out(lab, static_cast<std::uint32_t>(ds.labels.size()));
  for (int y : ds.labels) {
    expect(y >= 0 && y <= 255, cat("write_idx: label ", y, " not a byte"));
    lab.push_back(static_cast<char>(static_cast<unsigned char>(y)));
  }
  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  expect(fl.good(), cat("write_idx: cannot open ", labels_path));
  fl.write(lab.data(), static_cast<std::streamsize>(lab.size()));
  expect(fl.good(), cat("write_idx: write failed for ", labels_path));
}

Dataset load_cifar_binary(const std::vector<std::string>& paths) {
  expect(!paths.empty(), "load_cifar_binary: no files given");
  constexpr std::size_t kRecord = 3073;  // label byte + 3*32*32 pixels
  constexpr std::size_t kPixels = 3072;
  std::size_t total = 0;
  std::vector<std::string> blobs;
  for (const std::string& path : paths) {
    blobs.push_back(read_file(path));
    expect(!blobs.back().empty() && blobs.back().size() % kRecord == 0,
           cat("dataset ", path, ": size ", blobs.back().size(),
               " is not a positive multiple of the ", kRecord,
               "-byte record"));
    total += blobs.back().size() / kRecord;
  }
  Dataset ds;
  ds.images = Tensor::zeros({total, 3, 32, 32});
  ds.labels.reserve(total);
  std::size_t row = 0;
  for (std::size_t f = 0; f < blobs.size(); ++f) {
    const auto* p = reinterpret_cast<const unsigned char*>(blobs[f].data());
    const std::size_t n = blobs[f].size() / kRecord;
    for (std::size_t r = 0; r < n; ++r, ++row) {
      const unsigned char* rec = p + r * kRecord;
      expect(rec[0] < 10, cat("dataset ", paths[f], ": record ", r, " label ",
                              static_cast<int>(rec[0]), " >= 10"));
      ds.labels.push_back(rec[0]);
      float* out = ds.images.data.data() + row * kPixels;
      for (std::size_t i = 0; i < kPixels; ++i)
        out[i] = static_cast<float>(rec[1 + i]);
    }
  }
  ds.range_lo = 0.0f;
  ds.range_hi = 255.0f;
  ds.classes = 10;
  return ds;
}

Dataset synth_blobs(std::size_t classes, std::size_t per_class,
                    std::size_t dims, float separation, std::uint64_t seed) {
  expect(classes >= 2, cat("synth_blobs: expected >= 2 classes, got ", classes));
  expect(separation > 0.0f,
         cat("synth_blobs: separation expected > 0, got ", separation));
  expect(per_class >= 1 && dims >= 1, "synth_blobs: empty dataset");
  Rng rng(seed);
  const std::size_t n = classes * per_class;
  Dataset ds;
  ds.images = Tensor::zeros({n, dims});
  ds.labels.reserve(n);
  // Class k sits at k*separation on every axis; the affine map squeezes the
  // whole span plus 4-sigma tails into [0, 1].
  const float span = separation * static_cast<float>(classes - 1) + 8.0f;
  std::size_t row = 0;
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      for (std::size_t j = 0; j < dims; ++j) {
        const float raw =
            separation * static_cast<float>(k) + rng.normal(0.0f, 1.0f);
        ds.images.data[row * dims + j] =
            std::clamp((raw + 4.0f) / span, 0.0f, 1.0f);
      }
      ds.labels.push_back(static_cast<int>(k));
    }
  ds.range_lo = 0.0f;
  ds.range_hi = 1.0f;
  ds.classes = classes;
  return ds;
}

namespace {

// Seven-segment layout: row/col spans per segment in a 28x28 frame.
struct Seg {
  int r0, r1, c0, c1;
};
constexpr Seg kSegments[7] = {
    {5, 8, 9, 19},    // A top
    {5, 14, 16, 19},  // B upper right
    {13, 23, 16, 19}, // C lower right
    {20, 23, 9, 19},  // D bottom
    {13, 23, 9, 12},  // E lower left
    {5, 14, 9, 12},   // F upper left
    {12, 15, 9, 19},  // G middle
};
// Segment mask (A..G) per digit.
constexpr bool kDigitSegs[10][7] = {
    {1, 1, 1, 1, 1, 1, 0},  // 0
    {0, 1, 1, 0, 0, 0, 0},  // 1
    {1, 1, 0, 1, 1, 0, 1},  // 2
    {1, 1, 1, 1, 0, 0, 1},  // 3
    {0, 1, 1, 0, 0, 1, 1},  // 4
    {1, 0, 1, 1, 0, 1, 1},  // 5
    {1, 0, 1, 1, 1, 1, 1},  // 6
    {1, 1, 1, 0, 0, 0, 0},  // 7
    {1, 1, 1, 1, 1, 1, 1},  // 8
    {1, 1, 1, 1, 0, 1, 1},  // 9
};

}  // namespace

Dataset synth_digits(std::size_t per_class, std::uint64_t seed,
                     float noise_sigma, float brightness_lo, int max_shift) {
  expect(per_class >= 1, "synth_digits: per_class expected >= 1");
  expect(noise_sigma >= 0.0f, "synth_digits: noise_sigma expected >= 0");
  expect(brightness_lo > 0.0f && brightness_lo <= 1.0f,
         "synth_digits: brightness_lo expected in (0, 1]");
  expect(max_shift >= 0 && max_shift <= 5,
         "synth_digits: max_shift expected in [0, 5]");
  Rng rng(seed);
  const std::size_t n = 10 * per_class;
  Dataset ds;
  ds.images = Tensor::zeros({n, 28, 28});
  ds.labels.reserve(n);
  std::size_t row = 0;
  for (int digit = 0; digit < 10; ++digit)
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      float* img = ds.images.data.data() + row * 28 * 28;
      const auto span = static_cast<std::uint64_t>(2 * max_shift + 1);
      const int dy = static_cast<int>(rng.below(span)) - max_shift;
      const int dx = static_cast<int>(rng.below(span)) - max_shift;
      const float bright = rng.uniform(brightness_lo, 1.0f) * 255.0f;
      for (int s = 0; s < 7; ++s) {
        if (!kDigitSegs[digit][s]) continue;
        const Seg& seg = kSegments[s];
        for (int r = seg.r0 + dy; r < seg.r1 + dy; ++r)
          for (int c = seg.c0 + dx; c < seg.c1 + dx; ++c)
            img[r * 28 + c] = bright;
      }
      for (std::size_t p = 0; p < 28 * 28; ++p) {
        const float noisy = std::round(img[p] + rng.normal(0.0f, noise_sigma));
        // <= keeps -0.0f out so pixels round-trip the idx files bit-exactly.
        img[p] = noisy <= 0.0f ? 0.0f : std::min(noisy, 255.0f);
      }
      ds.labels.push_back(digit);
    }
  ds.range_lo = 0.0f;
  ds.range_hi = 255.0f;
  ds.classes = 10;
  return ds;
}

Dataset take_per_class(const Dataset& ds, std::size_t per_class) {
  expect(ds.classes >= 1, "take_per_class: dataset has no class count");
  std::vector<std::size_t> counts(ds.classes, 0), keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    if (counts[c] < per_class) {
      ++counts[c];
      keep.push_back(i);
    }
  }
  const std::size_t row_numel = ds.images.numel() / ds.images.shape[0];
  Dataset out = ds;
  std::vector<std::size_t> shape = ds.images.shape;
  shape[0] = keep.size();
  out.images = Tensor::zeros(shape);
  out.labels.clear();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const float* src = ds.images.data.data() + keep[k] * row_numel;
    std::copy(src, src + row_numel, out.images.data.data() + k * row_numel);
    out.labels.push_back(ds.labels[keep[k]]);
  }
  return out;
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size,
                           std::uint64_t seed, bool shuffle) {
  expect(batch_size >= 1, "batches: batch size expected >= 1");
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  const std::size_t row_numel =
      n == 0 ? 0 : ds.images.numel() / ds.images.shape[0];
  std::vector<Batch> out;
  for (std::size_t at = 0; at < n; at += batch_size) {
    const std::size_t b = std::min(batch_size, n - at);
    Batch batch;
    std::vector<std::size_t> shape = ds.images.shape;
    shape[0] = b;
    batch.x = Tensor::zeros(shape);
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t row = order[at + k];
      batch.indices.push_back(row);
      batch.y.push_back(ds.labels[row]);
      const float* src = ds.images.data.data() + row * row_numel;
      std::copy(src, src + row_numel, batch.x.data.data() + k * row_numel);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

Tensor reshape_rows(const Tensor& x,
                    const std::vector<std::size_t>& per_example) {
  expect(x.rank() >= 1, "reshape_rows: empty tensor");
  const std::size_t rows = x.shape[0];
  const std::size_t want = shape_numel(per_example);
  const std::size_t have = rows == 0 ? 0 : x.numel() / rows;
  expect(want == have, cat("reshape_rows: rows of ", have,
                           " elements cannot view as ", shape_str(per_example),
                           " (", want, " elements)"));
  Tensor out;
  out.shape = {rows};
  out.shape.insert(out.shape.end(), per_example.begin(), per_example.end());
  out.data = x.data;
  return out;
}

std::string dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  mix(ds.images.rank());
  for (std::size_t d : ds.images.shape) mix(d);
  for (int y : ds.labels) mix(static_cast<std::uint64_t>(y));
  for (float v : ds.images.data) mix(std::bit_cast<std::uint32_t>(v));
  std::ostringstream out;
  out << std::hex << std::setfill('0') << std::setw(16) << h;
  return out.str();
}

}  // namespace freetrain
