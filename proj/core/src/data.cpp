#include "safelens/data.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

#include "safelens/error.hpp"
#include "safelens/rng.hpp"

namespace safelens {

Shape Dataset::sample_shape() const {
  Shape s = images.shape();
  s.erase(s.begin());
  return s;
}

Tensor Dataset::image(int64_t i) const {
  const Shape s = sample_shape();
  const int64_t sz = shape_numel(s);
  Tensor out = Tensor::uninit(s, images.dtype());
  std::copy(images.ptr() + i * sz, images.ptr() + (i + 1) * sz, out.ptr());
  return out.seal("image");
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  in.seekg(0, std::ios::end);
  const std::streamoff len = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> buf(static_cast<size_t>(len));
  in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw FormatError(path + ": short read");
  return buf;
}

uint32_t be32(const std::vector<unsigned char>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size())
    throw FormatError(path + ": truncated at byte offset " + std::to_string(off));
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto ibuf = read_file(images_path);
  const auto lbuf = read_file(labels_path);

  const uint32_t imagic = be32(ibuf, 0, images_path);
  if (imagic != 0x00000803u)
    throw FormatError(images_path + ": bad magic 0x" + [&] {
      char h[16];
      snprintf(h, sizeof h, "%08x", imagic);
      return std::string(h);
    }() + " at byte offset 0 (expected 0x00000803)");
  const uint32_t n = be32(ibuf, 4, images_path);
  const uint32_t h = be32(ibuf, 8, images_path);
  const uint32_t w = be32(ibuf, 12, images_path);
  const size_t want_i = 16 + static_cast<size_t>(n) * h * w;
  if (ibuf.size() != want_i)
    throw FormatError(images_path + ": payload length " + std::to_string(ibuf.size()) +
                      " != header-implied " + std::to_string(want_i) + " (payload starts at byte offset 16)");

  const uint32_t lmagic = be32(lbuf, 0, labels_path);
  if (lmagic != 0x00000801u)
    throw FormatError(labels_path + ": bad magic 0x" + [&] {
      char hh[16];
      snprintf(hh, sizeof hh, "%08x", lmagic);
      return std::string(hh);
    }() + " at byte offset 0 (expected 0x00000801)");
  const uint32_t ln = be32(lbuf, 4, labels_path);
  if (lbuf.size() != 8 + static_cast<size_t>(ln))
    throw FormatError(labels_path + ": payload length " + std::to_string(lbuf.size()) +
                      " != header-implied " + std::to_string(8 + static_cast<size_t>(ln)));
  if (ln != n)
    throw FormatError(labels_path + ": label count " + std::to_string(ln) + " != image count " +
                      std::to_string(n));

  Dataset d;
  d.images = Tensor::uninit({int64_t(n), 1, int64_t(h), int64_t(w)});
  for (size_t i = 0; i < static_cast<size_t>(n) * h * w; ++i)
    d.images[static_cast<int64_t>(i)] = static_cast<double>(ibuf[16 + i]) / 255.0;
  d.images.seal("load_idx");
  d.labels.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const unsigned char v = lbuf[8 + i];
    if (v > 9)
      throw FormatError(labels_path + ": label " + std::to_string(int(v)) + " out of range at byte offset " +
                        std::to_string(8 + i));
    d.labels[i] = v;
  }
  d.num_classes = 10;
  return d;
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
  if (batch_paths.empty()) throw ContractError("load_cifar10: no batch files given");
  constexpr int64_t kRecord = 3073;
  constexpr int64_t kPerBatch = 10000;
  constexpr int64_t kPixels = 3 * 32 * 32;
  Dataset d;
  d.num_classes = 10;
  const int64_t total = kPerBatch * static_cast<int64_t>(batch_paths.size());
  d.images = Tensor::uninit({total, 3, 32, 32});
  d.labels.resize(static_cast<size_t>(total));
  int64_t at = 0;
  for (const auto& path : batch_paths) {
    const auto buf = read_file(path);
    if (buf.size() != static_cast<size_t>(kRecord * kPerBatch))
      throw FormatError(path + ": size " + std::to_string(buf.size()) + " != expected " +
                        std::to_string(kRecord * kPerBatch));
    for (int64_t r = 0; r < kPerBatch; ++r, ++at) {
      const size_t base = static_cast<size_t>(r * kRecord);
      const unsigned char lab = buf[base];
      if (lab > 9)
        throw FormatError(path + ": label " + std::to_string(int(lab)) + " out of range at byte offset " +
                          std::to_string(base));
      d.labels[static_cast<size_t>(at)] = lab;
      double* dst = d.images.ptr() + at * kPixels;
      for (int64_t p = 0; p < kPixels; ++p) dst[p] = static_cast<double>(buf[base + 1 + p]) / 255.0;
    }
  }
  d.images.seal("load_cifar10");
  return d;
}

Dataset make_synthetic(int64_t n, int64_t classes, const Shape& chw, uint64_t seed,
                       const std::string& split, double noise) {
  if (n < 1 || classes < 1) throw ContractError("make_synthetic: n and classes must be positive");
  if (chw.size() != 3) throw DimensionError("make_synthetic: shape must be [C,H,W]");
  const int64_t sz = shape_numel(chw);
  // Per-class base pattern, fixed by the seed alone so train/test share it.
  std::vector<std::vector<double>> base(static_cast<size_t>(classes));
  for (int64_t c = 0; c < classes; ++c) {
    Rng rng(mix_seed(seed, "synthetic/pattern", static_cast<uint64_t>(c)));
    base[static_cast<size_t>(c)].resize(static_cast<size_t>(sz));
    for (auto& v : base[static_cast<size_t>(c)]) v = rng.uniform();
  }
  Dataset d;
  d.name = "synthetic";
  d.split = split;
  d.num_classes = classes;
  Shape full = chw;
  full.insert(full.begin(), n);
  d.images = Tensor::uninit(full);
  d.labels.resize(static_cast<size_t>(n));
  Rng rng(mix_seed(seed, split == "train" ? "synthetic/train" : "synthetic/test"));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t c = i % classes;
    d.labels[static_cast<size_t>(i)] = c;
    double* dst = d.images.ptr() + i * sz;
    const auto& pat = base[static_cast<size_t>(c)];
    for (int64_t p = 0; p < sz; ++p)
      dst[p] = std::min(1.0, std::max(0.0, pat[static_cast<size_t>(p)] + rng.normal(0.0, noise)));
  }
  d.images.seal("make_synthetic");
  return d;
}

Dataset take(const Dataset& d, int64_t count, int64_t offset) {
  if (offset < 0 || count < 0 || offset + count > d.size())
    throw ContractError("take: range [" + std::to_string(offset) + "," + std::to_string(offset + count) +
                        ") out of bounds for size " + std::to_string(d.size()));
  Dataset out;
  out.name = d.name;
  out.split = d.split;
  out.num_classes = d.num_classes;
  Shape s = d.images.shape();
  s[0] = count;
  const int64_t sz = shape_numel(d.sample_shape());
  out.images = Tensor::uninit(s, d.images.dtype());
  std::copy(d.images.ptr() + offset * sz, d.images.ptr() + (offset + count) * sz, out.images.ptr());
  out.images.seal("take");
  out.labels.assign(d.labels.begin() + offset, d.labels.begin() + offset + count);
  return out;
}

Tensor gather_images(const Dataset& d, const std::vector<int64_t>& idx) {
  Shape s = d.images.shape();
  s[0] = static_cast<int64_t>(idx.size());
  const int64_t sz = shape_numel(d.sample_shape());
  Tensor out = Tensor::uninit(s, d.images.dtype());
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(d.images.ptr() + idx[i] * sz, d.images.ptr() + (idx[i] + 1) * sz, out.ptr() + int64_t(i) * sz);
  return out.seal("gather_images");
}

}  // namespace safelens
