#pragma once

// Datasets: deterministic Gaussian blobs, IDX (MNIST-style) and CIFAR binary
// readers, and seeded epoch batching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "switokd/error.hpp"
#include "switokd/nn.hpp"

namespace switokd {

enum class Split { train, test };

struct Dataset {
  Matrix features;  // samples x dims
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;
  ImageShape image{};  // non-empty for image data

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return static_cast<std::size_t>(features.cols()); }
  bool empty() const { return labels.empty(); }

  void validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size())
      throw ShapeError("dataset: " + std::to_string(features.rows()) + " feature rows but " +
                       std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= num_classes)
        throw DomainError("dataset: label " + std::to_string(labels[i]) + " at sample " +
                          std::to_string(i) + " is not below " + std::to_string(num_classes));
  }
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

// --- synthetic blobs -------------------------------------------------------

/// Center of class k: +e_k for k < dims, then -e_(k - dims).
inline Vector blob_center(std::size_t k, std::size_t dims) {
  Vector c = Vector::Zero(static_cast<Eigen::Index>(dims));
  if (k < dims)
    c(static_cast<Eigen::Index>(k)) = 1.0;
  else
    c(static_cast<Eigen::Index>(k - dims)) = -1.0;
  return c;
}

/// All samples, class-interleaved (sample i has label i % classes), before the split.
inline Dataset generate_blob_samples(std::size_t classes, std::size_t per_class, std::size_t dims,
                                     double spread, std::uint64_t seed) {
  if (classes < 2) throw DomainError("generate_blobs: need at least 2 classes");
  if (per_class < 1) throw DomainError("generate_blobs: need at least 1 sample per class");
  if (dims < 1 || classes > 2 * dims)
    throw DomainError("generate_blobs: " + std::to_string(classes) +
                      " classes do not fit the +/- axis arrangement in " + std::to_string(dims) +
                      " dims");
  if (!(spread >= 0.0)) throw DomainError("generate_blobs: spread must be non-negative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.num_classes = classes;
  ds.features.resize(static_cast<Eigen::Index>(classes * per_class),
                     static_cast<Eigen::Index>(dims));
  ds.labels.resize(classes * per_class);
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < classes; ++k) {
      const auto row = static_cast<Eigen::Index>(i * classes + k);
      const Vector c = blob_center(k, dims);
      for (Eigen::Index d = 0; d < c.size(); ++d) ds.features(row, d) = c(d) + spread * noise(rng);
      ds.labels[i * classes + k] = k;
    }
  return ds;
}

/// Per-class train/test split: the last `test_per_class` samples of each class
/// (default floor(n/5), an 80/20 split) go to test.
inline DataSplit generate_blobs(std::size_t classes, std::size_t per_class, std::size_t dims,
                                double spread, std::uint64_t seed,
                                std::optional<std::size_t> test_count = std::nullopt) {
  const std::size_t test_per_class = test_count.value_or(per_class / 5);
  if (test_per_class >= per_class)
    throw DomainError("generate_blobs: test_per_class must leave training samples");
  Dataset all = generate_blob_samples(classes, per_class, dims, spread, seed);
  const std::size_t train_per_class = per_class - test_per_class;
  DataSplit out;
  out.train.num_classes = out.test.num_classes = classes;
  out.train.split = Split::train;
  out.test.split = Split::test;
  out.train.features.resize(static_cast<Eigen::Index>(train_per_class * classes), all.features.cols());
  out.test.features.resize(static_cast<Eigen::Index>(test_per_class * classes), all.features.cols());
  Eigen::Index tr = 0, te = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::size_t round = i / classes;
    const auto src = static_cast<Eigen::Index>(i);
    if (round < train_per_class) {
      out.train.features.row(tr++) = all.features.row(src);
      out.train.labels.push_back(all.labels[i]);
    } else {
      out.test.features.row(te++) = all.features.row(src);
      out.test.labels.push_back(all.labels[i]);
    }
  }
  return out;
}

// --- binary readers --------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset,
                               const std::filesystem::path& path) {
  if (b.size() < offset + 4)
    throw FormatError(path.string() + ": truncated header at byte " + std::to_string(offset),
                      offset);
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

} // namespace detail

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

/// IDX image/label pair. Pixels scaled by 1/255; images become 1 x rows x cols.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t num_classes = 10,
                        Split split = Split::train) {
  const auto img = detail::read_bytes(images_path);
  const auto lab = detail::read_bytes(labels_path);

  const auto img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic)
    throw FormatError(images_path.string() + ": bad image magic at byte 0", 0);
  const std::size_t count = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);

  const auto lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic)
    throw FormatError(labels_path.string() + ": bad label magic at byte 0", 0);
  const std::size_t label_count = detail::read_be32(lab, 4, labels_path);
  if (label_count != count)
    throw FormatError(labels_path.string() + ": " + std::to_string(label_count) +
                          " labels for " + std::to_string(count) + " images (byte 4)",
                      4);

  const std::size_t pixels = rows * cols;
  constexpr std::size_t img_header = 16, lab_header = 8;
  if (img.size() < img_header + count * pixels)
    throw FormatError(images_path.string() + ": truncated pixel data at byte " +
                          std::to_string(img.size()),
                      img.size());
  if (lab.size() < lab_header + count)
    throw FormatError(labels_path.string() + ": truncated label data at byte " +
                          std::to_string(lab.size()),
                      lab.size());

  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.image = {1, rows, cols};
  ds.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t p = 0; p < pixels; ++p)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
          img[img_header + i * pixels + p] / 255.0;
    ds.labels[i] = lab[lab_header + i];
    if (ds.labels[i] >= num_classes)
      throw FormatError(labels_path.string() + ": label " + std::to_string(ds.labels[i]) +
                            " out of range at byte " + std::to_string(lab_header + i),
                        lab_header + i);
  }
  return ds;
}

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;

/// CIFAR binary batch. Records are <label><3072 pixels> for 10 classes and
/// <coarse><fine><3072 pixels> for 100 classes (fine label kept). Pixels stay
/// in file order: the 1024 red values row-major, then green, then blue, which
/// is the 3 x 32 x 32 channel-major layout.
inline Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t num_classes,
                                 Split split = Split::train) {
  if (num_classes != 10 && num_classes != 100)
    throw DomainError("load_cifar_binary: classes must be 10 or 100");
  const auto bytes = detail::read_bytes(path);
  const std::size_t label_bytes = num_classes == 10 ? 1 : 2;
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.size() % record != 0)
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of the " + std::to_string(record) +
                          "-byte record; trailing record starts at byte " +
                          std::to_string(bytes.size() / record * record),
                      bytes.size() / record * record);
  const std::size_t count = bytes.size() / record;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.image = {3, 32, 32};
  ds.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(kCifarPixels));
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t base = i * record;
    ds.labels[i] = bytes[base + label_bytes - 1];
    if (ds.labels[i] >= num_classes)
      throw FormatError(path.string() + ": label out of range at byte " +
                            std::to_string(base + label_bytes - 1),
                        base + label_bytes - 1);
    for (std::size_t p = 0; p < kCifarPixels; ++p)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
          bytes[base + label_bytes + p] / 255.0;
  }
  return ds;
}

/// Row-wise concatenation of datasets with identical geometry.
inline Dataset concatenate(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw DomainError("concatenate: no datasets");
  Dataset out;
  out.num_classes = parts.front().num_classes;
  out.split = parts.front().split;
  out.image = parts.front().image;
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.dims() != parts.front().dims() || p.num_classes != out.num_classes)
      throw ShapeError("concatenate: datasets differ in shape");
    rows += p.features.rows();
  }
  out.features.resize(rows, parts.front().features.cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.features.middleRows(r, p.features.rows()) = p.features;
    r += p.features.rows();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

// --- batching --------------------------------------------------------------

/// Sample indices per batch for one epoch. The shuffle depends only on
/// (seed, epoch); the last batch may be short.
inline std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw DomainError("batches: batch size must be at least 1");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

struct Batch {
  Matrix features;
  std::vector<std::size_t> labels;
};

inline Batch gather(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw DomainError("gather: index out of range");
    b.features.row(static_cast<Eigen::Index>(i)) =
        ds.features.row(static_cast<Eigen::Index>(indices[i]));
    b.labels.push_back(ds.labels[indices[i]]);
  }
  return b;
}

/// Random horizontal flip plus a random shift of up to `pad` pixels with zero
/// fill, applied per sample in place. Only meaningful for image data.
inline void augment_flip_crop(Batch& batch, ImageShape image, std::size_t pad, std::mt19937_64& rng) {
  if (image.empty() || static_cast<std::size_t>(batch.features.cols()) != image.size())
    throw ShapeError("augment: batch is not image-shaped");
  std::bernoulli_distribution flip(0.5);
  std::uniform_int_distribution<int> shift(-static_cast<int>(pad), static_cast<int>(pad));
  const auto h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  Vector src;
  for (Eigen::Index i = 0; i < batch.features.rows(); ++i) {
    src = batch.features.row(i).transpose();
    const bool mirror = flip(rng);
    const int dy = shift(rng), dx = shift(rng);
    for (std::size_t c = 0; c < image.channels; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = y + dy;
          const int sx0 = x + dx;
          const int sx = mirror ? w - 1 - sx0 : sx0;
          const auto dst = static_cast<Eigen::Index>((c * image.height + y) * image.width + x);
          batch.features(i, dst) =
              (sy < 0 || sy >= h || sx0 < 0 || sx0 >= w)
                  ? 0.0
                  : src(static_cast<Eigen::Index>((c * image.height + sy) * image.width + sx));
        }
  }
}

} // namespace switokd
