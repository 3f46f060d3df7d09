#pragma once

// MNIST ingestion from IDX files and the three sequential task views:
// row-wise (one row of pixels per step), pixel-wise (one pixel per step,
// row-major order) and permuted pixel-wise (a fixed shuffle of the pixel
// order). Sequences are materialized lazily per batch from the byte store.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kafgru/errors.hpp"
#include "kafgru/numerics.hpp"
#include "kafgru/sequence.hpp"

namespace kafgru {

struct MnistSet {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
  std::vector<std::uint8_t> labels;  // count entries in 0..9

  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * rows * cols, rows * cols};
  }
};

namespace detail {

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 2051;
inline constexpr std::uint32_t kIdxLabelsMagic = 2049;

// Parses an IDX image/label file pair. Headers are big-endian; the image
// magic is 0x00000803 and the label magic 0x00000801.
inline MnistSet load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  if (img.size() < 16) throw DataError(images_path + ": truncated IDX header");
  if (detail::read_be32(img.data()) != kIdxImagesMagic)
    throw DataError(images_path + ": bad magic, expected 2051");
  const std::size_t count = detail::read_be32(img.data() + 4);
  const std::size_t rows = detail::read_be32(img.data() + 8);
  const std::size_t cols = detail::read_be32(img.data() + 12);
  if (img.size() != 16 + count * rows * cols)
    throw DataError(images_path + ": payload size does not match header");

  const auto lab = detail::read_file(labels_path);
  if (lab.size() < 8) throw DataError(labels_path + ": truncated IDX header");
  if (detail::read_be32(lab.data()) != kIdxLabelsMagic)
    throw DataError(labels_path + ": bad magic, expected 2049");
  const std::size_t label_count = detail::read_be32(lab.data() + 4);
  if (lab.size() != 8 + label_count) throw DataError(labels_path + ": payload size mismatch");
  if (label_count != count)
    throw DataError("image count " + std::to_string(count) + " != label count " +
                    std::to_string(label_count));

  MnistSet set;
  set.count = count;
  set.rows = rows;
  set.cols = cols;
  set.pixels.assign(img.begin() + 16, img.end());
  set.labels.assign(lab.begin() + 8, lab.end());
  for (std::uint8_t label : set.labels)
    if (label > 9) throw DataError(labels_path + ": label out of range 0..9");
  return set;
}

enum class SequenceVariant { RowWise, PixelWise, PermutedPixelWise };

inline const char* variant_name(SequenceVariant v) {
  switch (v) {
    case SequenceVariant::RowWise: return "rmnist";
    case SequenceVariant::PixelWise: return "pmnist";
    case SequenceVariant::PermutedPixelWise: return "ppmnist";
  }
  return "?";
}

// A fixed pixel-order shuffle, generated by seeded Fisher-Yates so runs with
// the same seed see the same permutation.
struct PermutationSpec {
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> order;
};

inline PermutationSpec make_permutation(std::uint64_t seed, std::size_t n) {
  PermutationSpec spec;
  spec.seed = seed;
  spec.order.resize(n);
  for (std::size_t i = 0; i < n; ++i) spec.order[i] = static_cast<std::uint32_t>(i);
  Rng rng(seed);
  shuffle(spec.order, rng);
  return spec;
}

// A dataset bound to one sequential reading of the images. Borrows the byte
// store; the MnistSet must outlive the source.
struct SequenceSource {
  const MnistSet* set = nullptr;
  SequenceVariant variant = SequenceVariant::RowWise;
  std::optional<PermutationSpec> perm;

  std::size_t size() const { return set->count; }
  std::size_t seq_len() const {
    return variant == SequenceVariant::RowWise ? set->rows : set->rows * set->cols;
  }
  std::size_t features() const {
    return variant == SequenceVariant::RowWise ? set->cols : 1;
  }
};

inline SequenceSource make_sequences(const MnistSet& set, SequenceVariant variant,
                                     std::optional<PermutationSpec> perm = std::nullopt) {
  if (variant == SequenceVariant::PermutedPixelWise) {
    if (!perm) throw std::invalid_argument("make_sequences: permuted variant needs a permutation");
    if (perm->order.size() != set.rows * set.cols)
      throw ShapeError("make_sequences: permutation length != pixels per image");
  }
  return SequenceSource{&set, variant, std::move(perm)};
}

// Validation is the final val_count elements in original file order; no
// shuffling happens before the split.
inline std::pair<MnistSet, MnistSet> split_train_val(const MnistSet& set,
                                                     std::size_t val_count) {
  if (val_count >= set.count)
    throw std::invalid_argument("split_train_val: val_count must be below the set size");
  const std::size_t train_count = set.count - val_count;
  const std::size_t px = set.rows * set.cols;
  MnistSet train{train_count, set.rows, set.cols,
                 {set.pixels.begin(), set.pixels.begin() + train_count * px},
                 {set.labels.begin(), set.labels.begin() + train_count}};
  MnistSet val{val_count, set.rows, set.cols,
               {set.pixels.begin() + train_count * px, set.pixels.end()},
               {set.labels.begin() + train_count, set.labels.end()}};
  return {std::move(train), std::move(val)};
}

inline MnistSet take_prefix(const MnistSet& set, std::size_t n) {
  if (n == 0 || n >= set.count) return set;
  const std::size_t px = set.rows * set.cols;
  return MnistSet{n, set.rows, set.cols,
                  {set.pixels.begin(), set.pixels.begin() + n * px},
                  {set.labels.begin(), set.labels.begin() + n}};
}

// Builds the batch for the given image indices. Pixels are scaled to [0, 1]
// by dividing by 255.
inline SequenceBatch materialize_batch(const SequenceSource& source,
                                       std::span<const std::uint32_t> indices) {
  const MnistSet& set = *source.set;
  const std::size_t seq_len = source.seq_len();
  const std::size_t features = source.features();
  SequenceBatch batch;
  batch.steps.assign(seq_len, Matrix(indices.size(), features));
  batch.labels.resize(indices.size());

  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto image = set.image(indices[b]);
    batch.labels[b] = set.labels[indices[b]];
    switch (source.variant) {
      case SequenceVariant::RowWise:
        for (std::size_t t = 0; t < seq_len; ++t) {
          double* out = batch.steps[t].data.data() + b * features;
          for (std::size_t f = 0; f < features; ++f)
            out[f] = static_cast<double>(image[t * features + f]) / 255.0;
        }
        break;
      case SequenceVariant::PixelWise:
        for (std::size_t t = 0; t < seq_len; ++t)
          batch.steps[t](b, 0) = static_cast<double>(image[t]) / 255.0;
        break;
      case SequenceVariant::PermutedPixelWise:
        for (std::size_t t = 0; t < seq_len; ++t)
          batch.steps[t](b, 0) =
              static_cast<double>(image[source.perm->order[t]]) / 255.0;
        break;
    }
  }
  return batch;
}

// Restartable epoch iterator: each epoch reshuffles the index order with the
// owned generator. A final partial batch is kept only when it has at least
// two elements (the batch-norm minimum).
class BatchIterator {
 public:
  BatchIterator(const SequenceSource& source, std::size_t batch_size, Rng rng)
      : source_(&source), batch_size_(batch_size), rng_(std::move(rng)) {
    if (batch_size < 2)
      throw std::invalid_argument("BatchIterator: batch size must be at least 2");
    indices_.resize(source.size());
    for (std::size_t i = 0; i < indices_.size(); ++i)
      indices_[i] = static_cast<std::uint32_t>(i);
    start_epoch();
  }

  void start_epoch() {
    shuffle(indices_, rng_);
    pos_ = 0;
  }

  // Fills the next batch; false once the epoch is exhausted.
  bool next(SequenceBatch& out) {
    const std::size_t remaining = indices_.size() - pos_;
    if (remaining < 2) return false;
    const std::size_t take = std::min(batch_size_, remaining);
    out = materialize_batch(*source_, {indices_.data() + pos_, take});
    pos_ += take;
    return true;
  }

  std::size_t batches_per_epoch() const {
    const std::size_t full = indices_.size() / batch_size_;
    const std::size_t tail = indices_.size() % batch_size_;
    return full + (tail >= 2 ? 1 : 0);
  }

 private:
  const SequenceSource* source_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::uint32_t> indices_;
  std::size_t pos_ = 0;
};

}  // namespace kafgru
