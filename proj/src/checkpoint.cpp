#include "adn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace adn {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'N', 'W'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const std::map<std::string, Tensor>& tensors) {
  std::string manifest;
  manifest.append(kMagic, 4);
  put_u32(manifest, kVersion);
  put_u32(manifest, static_cast<uint32_t>(tensors.size()));
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {  // std::map iterates lexicographically
    put_u32(manifest, static_cast<uint32_t>(name.size()));
    manifest.append(name);
    put_u32(manifest, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put_u32(manifest, static_cast<uint32_t>(d));
    put_u64(manifest, offset);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& [name, t] : tensors) {
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf);
  if (r.bytes(4) != std::string(kMagic, 4))
    throw IoError("not an ADNW checkpoint: " + path.string());
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = r.u32();
  struct Entry {
    std::string name;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.bytes(r.u32());
    const uint32_t rank = r.u32();
    if (rank > 8) throw IoError("checkpoint tensor rank " + std::to_string(rank) + " is invalid");
    for (uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32());
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  const size_t data_start = r.pos;
  std::map<std::string, Tensor> result;
  for (auto& e : entries) {
    const int64_t n = shape_numel(e.shape);
    const size_t begin = data_start + e.offset;
    if (begin + static_cast<size_t>(n) * sizeof(float) > buf.size())
      throw IoError("checkpoint data for \"" + e.name + "\" is out of bounds");
    std::vector<float> values(static_cast<size_t>(n));
    std::memcpy(values.data(), buf.data() + begin, static_cast<size_t>(n) * sizeof(float));
    if (!result.emplace(e.name, Tensor::from_data(e.shape, std::move(values))).second)
      throw IoError("duplicate tensor \"" + e.name + "\" in checkpoint");
  }
  return result;
}

}  // namespace adn
