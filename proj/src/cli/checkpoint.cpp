#include "facecond/checkpoint.hpp"

#include <cstring>

#include "facecond/dataforge.hpp"
#include "facecond/textio.hpp"

namespace facecond {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DataError("checkpoint truncated while reading " + std::string(what) + " at byte " + std::to_string(pos_));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t uint(int width, const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(width, what));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string to_string(CheckpointStage s) {
  switch (s) {
    case CheckpointStage::Init: return "init";
    case CheckpointStage::BasePretrain: return "base_pretrain";
    case CheckpointStage::ImagePretrain: return "image_pretrain";
    case CheckpointStage::VideoFinetune: return "video_finetune";
  }
  return "?";
}

std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<char> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, ck.config_hash);
  put_u32(out, static_cast<std::uint32_t>(ck.stage));
  put_u64(out, ck.step);
  put_u32(out, static_cast<std::uint32_t>(ck.params.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    put_u64(out, offset);
    offset += 4 * t.size();
  }
  put_u64(out, offset);
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : ck.params) {
    for (float v : t.flat()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) throw DataError("not a checkpoint: bad magic");
  const auto version = r.uint(4, "version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.config_hash = r.uint(8, "config hash");
  const auto stage = r.uint(4, "stage");
  if (stage > static_cast<std::uint32_t>(CheckpointStage::VideoFinetune)) {
    throw DataError("checkpoint stage code " + std::to_string(stage) + " is unknown");
  }
  ck.stage = static_cast<CheckpointStage>(stage);
  ck.step = r.uint(8, "step");
  const auto count = r.uint(4, "tensor count");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::uint64_t expected_offset = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    const auto len = r.uint(4, "name length");
    e.name.assign(r.take(len, "name"), len);
    if (!entries.empty() && !(entries.back().name < e.name)) {
      throw DataError("checkpoint names not strictly sorted at '" + e.name + "'");
    }
    const auto rank = r.uint(4, "rank");
    if (rank == 0 || rank > 4) throw DataError("checkpoint tensor '" + e.name + "' has rank " + std::to_string(rank));
    for (std::uint64_t k = 0; k < rank; ++k) {
      const auto d = r.uint(4, "dimension");
      if (d == 0) throw DataError("checkpoint tensor '" + e.name + "' has a zero dimension");
      e.shape.push_back(d);
    }
    e.offset = r.uint(8, "offset");
    if (e.offset != expected_offset) {
      throw DataError("checkpoint tensor '" + e.name + "' offset " + std::to_string(e.offset) + ", expected " +
                      std::to_string(expected_offset));
    }
    expected_offset += 4 * shape_numel(e.shape);
    entries.push_back(std::move(e));
  }
  const auto payload = r.uint(8, "payload size");
  if (payload != expected_offset || r.remaining() != payload) {
    throw DataError("checkpoint payload is " + std::to_string(r.remaining()) + " bytes, header declares " +
                    std::to_string(payload) + ", tensors need " + std::to_string(expected_offset));
  }
  for (Entry& e : entries) {
    const std::size_t n = shape_numel(e.shape);
    std::vector<float> data(n);
    const char* p = r.take(4 * n, "payload");
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[4 * i + b])) << (8 * b);
      std::memcpy(&data[i], &bits, 4);
    }
    ck.params.emplace(std::move(e.name), Tensor(std::move(e.shape), std::move(data)));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_binary_file(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path, const Config& config) {
  Checkpoint ck;
  try {
    ck = deserialize_checkpoint(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  if (ck.config_hash != config.architecture_hash()) {
    throw DataError(path + ": checkpoint config hash " + std::to_string(ck.config_hash) +
                    " does not match the current config (" + std::to_string(config.architecture_hash()) + ")");
  }
  return ck;
}

}  // namespace facecond
