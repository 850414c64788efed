#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "adn/tensor.hpp"

namespace adn::data {

struct LabeledImageSet {
  std::vector<uint8_t> images;  // N*C*H*W, row-major
  int64_t n = 0;
  int c = 0, h = 0, w = 0;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  int64_t image_bytes() const { return static_cast<int64_t>(c) * h * w; }
  const uint8_t* image(int64_t i) const { return images.data() + i * image_bytes(); }
};

/// Big-endian IDX pair (MNIST family): images magic 0x00000803, labels magic
/// 0x00000801. Yields C=1 image sets.
LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-major
/// pixels. File sizes must be multiples of 3073; an empty total is allowed
/// with a warning.
LabeledImageSet load_cifar10_binary(const std::vector<std::filesystem::path>& paths);

/// Deterministic synthetic classification set: per class a fixed geometric
/// template (position-coded bars) with per-sample jitter, intensity scaling
/// and pixel noise. Labels are balanced round-robin. Linearly separable at
/// small noise.
LabeledImageSet synthetic_shapes(int64_t n, int num_classes, int size, uint64_t seed,
                                 float noise = 24.0f, int channels = 1);

/// First 80% / last 20% split over a seeded shuffle.
std::pair<LabeledImageSet, LabeledImageSet> split_train_val(const LabeledImageSet& set,
                                                            uint64_t seed);

/// Subset by seeded shuffle prefix (count <= n).
LabeledImageSet take_subset(const LabeledImageSet& set, int64_t count, uint64_t seed);

/// Per-channel mean/std of pixel values scaled to [0,1].
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;
};
Normalization compute_channel_stats(const LabeledImageSet& set);

/// Reflect-pad by crop_pad, random crop back to the original size, then
/// horizontal flip with probability hflip_prob. batch holds raw pixel values
/// [N,C,H,W] in 0..255.
Tensor augment(const Tensor& batch, int crop_pad, float hflip_prob, std::mt19937& rng);

/// (x/255 - mean) / std per channel.
Tensor normalize(const Tensor& batch, const Normalization& norm);
Tensor unnormalize(const Tensor& batch, const Normalization& norm);

/// Gathers rows `indices` of the set into a raw-pixel f32 batch [B,C,H,W].
Tensor gather_batch(const LabeledImageSet& set, const std::vector<int64_t>& indices,
                    std::vector<int>* labels_out);

}  // namespace adn::data
