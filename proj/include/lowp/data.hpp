#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lowp/tensor.hpp"

namespace lowp {

class IdxError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Immutable after loading; pixel values normalized to [0, 1].
struct Dataset {
    Tensor images;                     // [N x rows x cols]
    std::vector<std::uint8_t> labels;  // class indices in [0, 9]
    std::string split;                 // "train" / "test"

    std::size_t size() const { return labels.size(); }

    // First n samples (dataset order), n clamped to size().
    Dataset subset(std::size_t n) const;
};

// IDX format: big-endian u32 magic (0x00000803 images, 0x00000801 labels),
// big-endian dimension sizes, then raw unsigned bytes. Gzipped files are
// accepted transparently. Pixels are divided by 255.
Tensor load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

// Loads the standard MNIST pair for a split ("train" or "test") from dir,
// trying the conventional file names with and without a .gz suffix.
Dataset load_mnist_split(const std::string& dir, const std::string& split);

struct Batch {
    Tensor images;   // [B x rows x cols]
    Tensor targets;  // [B x 10] one-hot
};

// Deterministic shuffle keyed by (seed, epoch); the final partial batch is
// kept. Every sample appears exactly once per epoch.
std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size,
                           std::uint64_t seed, std::size_t epoch);

// The permutation behind batches(), exposed for tests and for callers that
// want to gather batches lazily.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t epoch);

Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& perm,
                   std::size_t first, std::size_t count, std::size_t classes = 10);

}  // namespace lowp
