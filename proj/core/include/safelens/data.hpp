#pragma once

#include <string>
#include <vector>

#include "safelens/tensor.hpp"

namespace safelens {

// Images in [0,1], shape [N,C,H,W]; labels in [0,k). Read-only after load.
struct Dataset {
  std::string name;
  std::string split;  // "train" or "test"
  Tensor images;
  std::vector<int64_t> labels;
  int64_t num_classes = 10;

  int64_t size() const { return images.rank() ? images.dim(0) : 0; }
  Shape sample_shape() const;        // [C,H,W]
  Tensor image(int64_t i) const;     // copy of one sample
  int64_t label(int64_t i) const { return labels[static_cast<size_t>(i)]; }
};

// IDX format: big-endian magic (0x803 images / 0x801 labels), dims, raw
// bytes. Pixels are scaled by 1/255. Errors carry the offending byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: 10000 records of 1 label byte + 3072 pixel bytes,
// channel-major. Every batch file must be exactly 30730000 bytes.
Dataset load_cifar10(const std::vector<std::string>& batch_paths);

// Class-dependent blob patterns plus Gaussian pixel noise, clamped to [0,1].
// Deterministic in (seed, split); linearly separable enough for quick tests.
Dataset make_synthetic(int64_t n, int64_t classes, const Shape& chw, uint64_t seed,
                       const std::string& split = "train", double noise = 0.15);

// First `count` samples starting at `offset` (deterministic subsetting).
Dataset take(const Dataset& d, int64_t count, int64_t offset = 0);

// Gathers rows `idx` into a batch tensor [B,C,H,W].
Tensor gather_images(const Dataset& d, const std::vector<int64_t>& idx);

}  // namespace safelens
