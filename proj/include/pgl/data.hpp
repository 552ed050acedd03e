#pragma once

// Synthetic datasets, the IDX image format and mini-batch streams.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "pgl/tensor.hpp"

namespace pgl {

struct Dataset {
  Tensor inputs;            // [N, d] or [N, C, H, W]
  std::vector<int> labels;  // N entries in [0, num_classes)
  std::size_t num_classes = 0;
  double norm_mean = 0.0;
  double norm_std = 1.0;

  std::size_t size() const { return labels.size(); }
};

/// Class c is centered at 4 * e_c (a vertex of the standard simplex) with
/// isotropic Gaussian noise of std `spread`. Requires classes <= d.
inline Dataset gen_blobs(std::size_t n_per_class, std::size_t d, std::size_t classes, double spread,
                         std::uint64_t seed) {
  if (n_per_class < 1 || d < 1 || classes < 1 || !(spread > 0))
    throw ConfigError("gen_blobs: all arguments must be positive");
  if (classes > d) throw ConfigError("gen_blobs: need at least as many dimensions as classes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  const std::size_t n = n_per_class * classes;
  std::vector<float> x(n * d);
  Dataset ds;
  ds.num_classes = classes;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i) {
      std::size_t row = c * n_per_class + i;
      for (std::size_t k = 0; k < d; ++k) x[row * d + k] = static_cast<float>((k == c ? 4.0 : 0.0) + noise(rng));
      ds.labels.push_back(static_cast<int>(c));
    }
  ds.inputs = Tensor({n, d}, std::move(x));
  return ds;
}

/// Point on arm `c` of the interleaved spirals at parameter t in [0, 1].
inline std::pair<double, double> spiral_point(double t, std::size_t c, std::size_t classes) {
  const double angle = 1.25 * 2.0 * std::numbers::pi * t + 2.0 * std::numbers::pi * static_cast<double>(c) /
                                                               static_cast<double>(classes);
  return {t * std::cos(angle), t * std::sin(angle)};
}

/// Interleaved 2-D spirals: radius grows 0 -> 1 over 1.25 turns, arms are
/// offset by 2*pi/classes, Gaussian noise of std `noise` per coordinate.
inline Dataset gen_spirals(std::size_t n_per_class, std::size_t classes, double noise, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("gen_spirals: classes must be >= 2");
  if (n_per_class < 1) throw ConfigError("gen_spirals: n_per_class must be >= 1");
  if (noise < 0) throw ConfigError("gen_spirals: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = n_per_class * classes;
  std::vector<float> x(n * 2);
  Dataset ds;
  ds.num_classes = classes;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i) {
      double t = n_per_class == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n_per_class - 1);
      auto [px, py] = spiral_point(t, c, classes);
      if (noise > 0) {
        px += noise * gauss(rng);
        py += noise * gauss(rng);
      }
      std::size_t row = c * n_per_class + i;
      x[row * 2] = static_cast<float>(px);
      x[row * 2 + 1] = static_cast<float>(py);
      ds.labels.push_back(static_cast<int>(c));
    }
  ds.inputs = Tensor({n, 2}, std::move(x));
  return ds;
}

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at, const std::string& what) {
  if (at + 4 > buf.size()) throw IoError(what + ": truncated header");
  return (std::uint32_t(buf[at]) << 24) | (std::uint32_t(buf[at + 1]) << 16) | (std::uint32_t(buf[at + 2]) << 8) |
         std::uint32_t(buf[at + 3]);
}

inline void put_be32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) buf.push_back(static_cast<unsigned char>(v >> s));
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

/// Reads an IDX image file (u8, N x H x W) and its label file. Pixels are
/// scaled to [0, 1] and then normalized as (p - mean) / std.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        double mean = 0.0, double std = 1.0) {
  if (!(std > 0)) throw ConfigError("load_idx: std must be positive");
  auto img = detail::read_file(images_path);
  auto lab = detail::read_file(labels_path);

  const std::string iname = images_path.string(), lname = labels_path.string();
  if (auto m = detail::read_be32(img, 0, iname); m != kIdxImagesMagic)
    throw FormatError(iname + ": bad image magic 0x" + std::to_string(m));
  if (auto m = detail::read_be32(lab, 0, lname); m != kIdxLabelsMagic)
    throw FormatError(lname + ": bad label magic 0x" + std::to_string(m));
  const std::size_t n = detail::read_be32(img, 4, iname);
  const std::size_t h = detail::read_be32(img, 8, iname);
  const std::size_t w = detail::read_be32(img, 12, iname);
  const std::size_t nl = detail::read_be32(lab, 4, lname);
  if (n != nl) throw DataError("IDX count mismatch: " + std::to_string(n) + " images, " + std::to_string(nl) + " labels");
  if (n == 0 || h == 0 || w == 0) throw DataError(iname + ": empty image set");
  if (img.size() < 16 + n * h * w) throw IoError(iname + ": truncated pixel data");
  if (lab.size() < 8 + n) throw IoError(lname + ": truncated label data");

  Dataset ds;
  ds.norm_mean = mean;
  ds.norm_std = std;
  std::vector<float> x(n * h * w);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>((static_cast<double>(img[16 + i]) / 255.0 - mean) / std);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels.push_back(lab[8 + i]);
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.inputs = Tensor({n, 1, h, w}, std::move(x));
  return ds;
}

/// Writes the pair of files `load_idx` reads.
inline void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                      std::size_t h, std::size_t w, const std::vector<unsigned char>& pixels,
                      const std::vector<unsigned char>& labels) {
  if (pixels.size() != labels.size() * h * w) throw DataError("write_idx: pixel count does not match labels");
  std::vector<unsigned char> img, lab;
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(labels.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(h));
  detail::put_be32(img, static_cast<std::uint32_t>(w));
  img.insert(img.end(), pixels.begin(), pixels.end());
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.insert(lab.end(), labels.begin(), labels.end());
  detail::write_file(images_path, img);
  detail::write_file(labels_path, lab);
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Gathers rows `idx` of the dataset (untracked copies).
inline Batch gather(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t row = ds.inputs.numel() / ds.size();
  Shape shape = ds.inputs.shape();
  shape[0] = idx.size();
  std::vector<float> x(idx.size() * row);
  const auto& src = ds.inputs.values();
  Batch b;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row, x.begin() + static_cast<std::ptrdiff_t>(i * row));
    b.labels.push_back(ds.labels[idx[i]]);
  }
  b.indices.assign(idx.begin(), idx.end());
  b.inputs = Tensor(std::move(shape), std::move(x));
  return b;
}

/// Shuffled mini-batches for one epoch. The permutation depends only on
/// (seed, epoch); the last batch may be short.
inline std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
  std::mt19937_64 rng(sq);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Batch> out;
  for (std::size_t at = 0; at < perm.size(); at += batch_size) {
    std::size_t len = std::min(batch_size, perm.size() - at);
    out.push_back(gather(ds, std::span<const std::size_t>(perm.data() + at, len)));
  }
  return out;
}

/// Batches in dataset order (evaluation).
inline std::vector<Batch> sequential_batches(const Dataset& ds, std::size_t batch_size) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<Batch> out;
  for (std::size_t at = 0; at < idx.size(); at += batch_size) {
    std::size_t len = std::min(batch_size, idx.size() - at);
    out.push_back(gather(ds, std::span<const std::size_t>(idx.data() + at, len)));
  }
  return out;
}

/// Zero-pad by `pad`, crop back to the original size at a random offset,
/// then mirror horizontally with probability `flip_prob`.
inline Tensor augment(const Tensor& images, std::size_t pad, double flip_prob, std::mt19937_64& rng) {
  if (images.rank() != 4) throw ShapeError("augment expects NCHW images");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
  std::bernoulli_distribution flip(std::clamp(flip_prob, 0.0, 1.0));
  const auto& src = images.values();
  std::vector<float> out(src.size(), 0.0f);
  for (std::size_t s = 0; s < n; ++s) {
    const long dy = static_cast<long>(offset(rng)) - static_cast<long>(pad);
    const long dx = static_cast<long>(offset(rng)) - static_cast<long>(pad);
    const bool mirror = flip(rng);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          long sy = static_cast<long>(y) + dy;
          long sx = static_cast<long>(mirror ? w - 1 - x : x) + dx;
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
          out[((s * c + ch) * h + y) * w + x] = src[((s * c + ch) * h + sy) * w + sx];
        }
  }
  return Tensor(images.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Dataset descriptions (as read from run configs)

struct SpiralsSpec {
  std::size_t n_per_class = 256;
  std::size_t test_n_per_class = 1000;
  std::size_t classes = 3;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

struct BlobsSpec {
  std::size_t n_per_class = 100;
  std::size_t test_n_per_class = 100;
  std::size_t dim = 8;
  std::size_t classes = 4;
  double spread = 1.0;
  std::uint64_t seed = 1;
};

struct IdxSpec {
  std::string train_images, train_labels, test_images, test_labels;
  double mean = 0.0;
  double std = 1.0;
};

using DatasetSpec = std::variant<SpiralsSpec, BlobsSpec, IdxSpec>;

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Train and test sets; synthetic test sets use an independent seed stream.
inline DataSplit make_datasets(const DatasetSpec& spec) {
  if (auto* s = std::get_if<SpiralsSpec>(&spec))
    return {gen_spirals(s->n_per_class, s->classes, s->noise, s->seed),
            gen_spirals(s->test_n_per_class, s->classes, s->noise, s->seed ^ 0x9e3779b97f4a7c15ull)};
  if (auto* b = std::get_if<BlobsSpec>(&spec))
    return {gen_blobs(b->n_per_class, b->dim, b->classes, b->spread, b->seed),
            gen_blobs(b->test_n_per_class, b->dim, b->classes, b->spread, b->seed ^ 0x9e3779b97f4a7c15ull)};
  const auto& i = std::get<IdxSpec>(spec);
  return {load_idx(i.train_images, i.train_labels, i.mean, i.std), load_idx(i.test_images, i.test_labels, i.mean, i.std)};
}

}  // namespace pgl
