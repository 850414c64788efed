#include "adn/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "adn/rng.hpp"

namespace adn::data {

namespace {

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

uint32_t be32(const std::vector<uint8_t>& buf, size_t pos) {
  if (pos + 4 > buf.size()) throw IoError("IDX file truncated in header");
  return (static_cast<uint32_t>(buf[pos]) << 24) | (static_cast<uint32_t>(buf[pos + 1]) << 16) |
         (static_cast<uint32_t>(buf[pos + 2]) << 8) | static_cast<uint32_t>(buf[pos + 3]);
}

}  // namespace

LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  auto ibuf = read_file(images_path);
  auto lbuf = read_file(labels_path);

  const uint32_t imagic = be32(ibuf, 0);
  if (imagic != 0x00000803u)
    throw IoError("bad IDX image magic 0x" + [&] {
      char b[16];
      std::snprintf(b, sizeof b, "%08x", imagic);
      return std::string(b);
    }() + " in " + images_path.string());
  const uint32_t lmagic = be32(lbuf, 0);
  if (lmagic != 0x00000801u)
    throw IoError("bad IDX label magic 0x" + [&] {
      char b[16];
      std::snprintf(b, sizeof b, "%08x", lmagic);
      return std::string(b);
    }() + " in " + labels_path.string());

  const uint32_t n = be32(ibuf, 4);
  const uint32_t h = be32(ibuf, 8);
  const uint32_t w = be32(ibuf, 12);
  const uint32_t ln = be32(lbuf, 4);
  if (ln != n)
    throw IoError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                  std::to_string(ln) + " labels");
  const size_t need = 16 + static_cast<size_t>(n) * h * w;
  if (ibuf.size() < need)
    throw IoError("IDX image file truncated: " + std::to_string(ibuf.size()) + " bytes, need " +
                  std::to_string(need));
  if (lbuf.size() < 8 + n) throw IoError("IDX label file truncated");

  LabeledImageSet set;
  set.n = n;
  set.c = 1;
  set.h = static_cast<int>(h);
  set.w = static_cast<int>(w);
  set.images.assign(ibuf.begin() + 16, ibuf.begin() + static_cast<int64_t>(need));
  set.labels.reserve(n);
  int max_label = 0;
  for (uint32_t i = 0; i < n; ++i) {
    set.labels.push_back(lbuf[8 + i]);
    max_label = std::max(max_label, static_cast<int>(lbuf[8 + i]));
  }
  set.num_classes = max_label + 1;
  return set;
}

LabeledImageSet load_cifar10_binary(const std::vector<std::filesystem::path>& paths) {
  constexpr int64_t kRecord = 3073;
  LabeledImageSet set;
  set.c = 3;
  set.h = 32;
  set.w = 32;
  set.num_classes = 10;
  for (const auto& path : paths) {
    auto buf = read_file(path);
    if (buf.size() % kRecord != 0)
      throw IoError("CIFAR-10 file " + path.string() + " has " + std::to_string(buf.size()) +
                    " bytes, not a multiple of 3073");
    const int64_t records = static_cast<int64_t>(buf.size()) / kRecord;
    for (int64_t r = 0; r < records; ++r) {
      const uint8_t label = buf[static_cast<size_t>(r * kRecord)];
      if (label > 9)
        throw IoError("CIFAR-10 label " + std::to_string(label) + " out of range in " +
                      path.string());
      set.labels.push_back(label);
      set.images.insert(set.images.end(), buf.begin() + r * kRecord + 1,
                        buf.begin() + (r + 1) * kRecord);
    }
    set.n += records;
  }
  if (set.n == 0) std::fprintf(stderr, "warning: CIFAR-10 input is empty\n");
  return set;
}

LabeledImageSet synthetic_shapes(int64_t n, int num_classes, int size, uint64_t seed, float noise,
                                 int channels) {
  if (n < num_classes) throw ValueError("synthetic_shapes: n must be >= num_classes");
  if (num_classes < 2 || size < 8) throw ValueError("synthetic_shapes: bad dimensions");
  LabeledImageSet set;
  set.n = n;
  set.c = channels;
  set.h = size;
  set.w = size;
  set.num_classes = num_classes;
  set.images.assign(static_cast<size_t>(n) * channels * size * size, 0);
  set.labels.resize(static_cast<size_t>(n));

  std::mt19937 rng = make_rng(seed, 0x5a5a);
  std::uniform_int_distribution<int> jitter(-2, 2);
  std::uniform_real_distribution<float> intensity(0.75f, 1.25f);
  std::normal_distribution<float> pix_noise(0.0f, noise);

  for (int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % num_classes);  // balanced round-robin
    set.labels[static_cast<size_t>(i)] = cls;
    // class-coded positions for one horizontal and one vertical bar
    const int row = (cls + 1) * size / (num_classes + 1);
    const int col = (num_classes - cls) * size / (num_classes + 1);
    const int dr = jitter(rng), dc = jitter(rng);
    const float scale = intensity(rng);
    uint8_t* img = set.images.data() + i * set.image_bytes();
    for (int ch = 0; ch < channels; ++ch) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          float v = 24.0f;
          if (std::abs(y - (row + dr)) <= 1) v = 208.0f * scale;
          if (std::abs(x - (col + dc)) <= 1) v = 208.0f * scale;
          v += pix_noise(rng);
          img[(ch * size + y) * size + x] =
              static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
        }
      }
    }
  }
  return set;
}

namespace {

LabeledImageSet gather_rows(const LabeledImageSet& set, const std::vector<int64_t>& rows,
                            const std::string& split) {
  LabeledImageSet out;
  out.c = set.c;
  out.h = set.h;
  out.w = set.w;
  out.num_classes = set.num_classes;
  out.split = split;
  out.n = static_cast<int64_t>(rows.size());
  out.images.reserve(rows.size() * static_cast<size_t>(set.image_bytes()));
  out.labels.reserve(rows.size());
  for (int64_t r : rows) {
    const uint8_t* src = set.image(r);
    out.images.insert(out.images.end(), src, src + set.image_bytes());
    out.labels.push_back(set.labels[static_cast<size_t>(r)]);
  }
  return out;
}

}  // namespace

std::pair<LabeledImageSet, LabeledImageSet> split_train_val(const LabeledImageSet& set,
                                                            uint64_t seed) {
  std::vector<int64_t> idx(static_cast<size_t>(set.n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937 rng = make_rng(seed, 0x59117);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int64_t cut = set.n * 8 / 10;
  std::vector<int64_t> tr(idx.begin(), idx.begin() + cut);
  std::vector<int64_t> va(idx.begin() + cut, idx.end());
  return {gather_rows(set, tr, "train"), gather_rows(set, va, "val")};
}

LabeledImageSet take_subset(const LabeledImageSet& set, int64_t count, uint64_t seed) {
  count = std::min(count, set.n);
  std::vector<int64_t> idx(static_cast<size_t>(set.n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937 rng = make_rng(seed, 0x5b5e7);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<size_t>(count));
  return gather_rows(set, idx, set.split);
}

Normalization compute_channel_stats(const LabeledImageSet& set) {
  Normalization norm;
  norm.mean.assign(static_cast<size_t>(set.c), 0.0f);
  norm.std.assign(static_cast<size_t>(set.c), 1.0f);
  if (set.n == 0) return norm;
  const int64_t plane = static_cast<int64_t>(set.h) * set.w;
  for (int c = 0; c < set.c; ++c) {
    double s = 0.0, s2 = 0.0;
    for (int64_t i = 0; i < set.n; ++i) {
      const uint8_t* img = set.image(i) + c * plane;
      for (int64_t p = 0; p < plane; ++p) {
        const double v = img[p] / 255.0;
        s += v;
        s2 += v * v;
      }
    }
    const double m = s / static_cast<double>(set.n * plane);
    const double var = std::max(1e-8, s2 / static_cast<double>(set.n * plane) - m * m);
    norm.mean[static_cast<size_t>(c)] = static_cast<float>(m);
    norm.std[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(var));
  }
  return norm;
}

Tensor gather_batch(const LabeledImageSet& set, const std::vector<int64_t>& indices,
                    std::vector<int>* labels_out) {
  const int64_t b = static_cast<int64_t>(indices.size());
  Tensor batch = Tensor::zeros({b, set.c, set.h, set.w});
  float* dst = batch.data();
  const int64_t stride = set.image_bytes();
  for (int64_t i = 0; i < b; ++i) {
    const uint8_t* src = set.image(indices[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < stride; ++j) dst[i * stride + j] = static_cast<float>(src[j]);
    if (labels_out) labels_out->push_back(set.labels[static_cast<size_t>(indices[static_cast<size_t>(i)])]);
  }
  return batch;
}

Tensor augment(const Tensor& batch, int crop_pad, float hflip_prob, std::mt19937& rng) {
  if (batch.rank() != 4) throw ShapeError("augment: expected [N,C,H,W]");
  if (crop_pad < 0) throw ValueError("augment: crop_pad must be >= 0");
  if (hflip_prob < 0.0f || hflip_prob > 1.0f)
    throw ValueError("augment: hflip_prob must be in [0,1]");
  if (crop_pad == 0 && hflip_prob == 0.0f) return batch;
  const int64_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor out = Tensor::zeros(batch.shape());
  std::uniform_int_distribution<int> off(0, 2 * crop_pad);
  std::uniform_real_distribution<float> coin(0.0f, 1.0f);
  const float* src = batch.data();
  float* dst = out.data();
  for (int64_t n = 0; n < N; ++n) {
    const int dy = crop_pad > 0 ? off(rng) - crop_pad : 0;
    const int dx = crop_pad > 0 ? off(rng) - crop_pad : 0;
    const bool flip = hflip_prob > 0.0f && coin(rng) < hflip_prob;
    for (int64_t c = 0; c < C; ++c) {
      const float* plane = src + (n * C + c) * H * W;
      float* oplane = dst + (n * C + c) * H * W;
      for (int64_t y = 0; y < H; ++y) {
        // reflect-pad indexing back into the source
        int64_t sy = y + dy;
        if (sy < 0) sy = -sy;
        if (sy >= H) sy = 2 * H - 2 - sy;
        for (int64_t x = 0; x < W; ++x) {
          int64_t sx = x + dx;
          if (sx < 0) sx = -sx;
          if (sx >= W) sx = 2 * W - 2 - sx;
          const int64_t tx = flip ? W - 1 - x : x;
          oplane[y * W + tx] = plane[sy * W + sx];
        }
      }
    }
  }
  return out;
}

Tensor normalize(const Tensor& batch, const Normalization& norm) {
  if (batch.rank() != 4) throw ShapeError("normalize: expected [N,C,H,W]");
  const int64_t N = batch.dim(0), C = batch.dim(1), HW = batch.dim(2) * batch.dim(3);
  if (static_cast<int64_t>(norm.mean.size()) != C)
    throw ShapeError("normalize: " + std::to_string(norm.mean.size()) + " channel stats for " +
                     std::to_string(C) + " channels");
  Tensor out = Tensor::zeros(batch.shape());
  const float* src = batch.data();
  float* dst = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const int64_t c = nc % C;
    const float m = norm.mean[static_cast<size_t>(c)];
    const float inv = 1.0f / norm.std[static_cast<size_t>(c)];
    for (int64_t i = 0; i < HW; ++i)
      dst[nc * HW + i] = (src[nc * HW + i] / 255.0f - m) * inv;
  }
  return out;
}

Tensor unnormalize(const Tensor& batch, const Normalization& norm) {
  const int64_t N = batch.dim(0), C = batch.dim(1), HW = batch.dim(2) * batch.dim(3);
  Tensor out = Tensor::zeros(batch.shape());
  const float* src = batch.data();
  float* dst = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const int64_t c = nc % C;
    for (int64_t i = 0; i < HW; ++i)
      dst[nc * HW + i] =
          (src[nc * HW + i] * norm.std[static_cast<size_t>(c)] + norm.mean[static_cast<size_t>(c)]) *
          255.0f;
  }
  return out;
}

}  // namespace adn::data
