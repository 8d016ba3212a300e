#include "fredsr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "fredsr/codec.hpp"

namespace fredsr {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in native order");

namespace {

template <typename V>
CheckpointTensor make(const std::string& name, DType dtype, std::span<const V> v, Shape shape) {
  if (shape_numel(shape) != static_cast<std::int64_t>(v.size())) {
    throw std::invalid_argument("checkpoint tensor " + name + ": shape does not match value count");
  }
  CheckpointTensor t{name, dtype, std::move(shape), {}};
  t.payload.resize(v.size() * sizeof(V));
  if (!v.empty()) std::memcpy(t.payload.data(), v.data(), t.payload.size());
  return t;
}

template <typename V>
std::vector<V> read_as(const CheckpointTensor& t, DType want) {
  if (t.dtype != want) throw CheckpointError("tensor table", "tensor " + t.name + " has an unexpected dtype");
  std::vector<V> out(t.payload.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), t.payload.data(), t.payload.size());
  return out;
}

std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  const std::uint8_t* take(std::size_t n, const char* section, const char* what) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(section, std::string("truncated ") + what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* section, const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, section, what), 4);
    return v;
  }
  std::int64_t i64(const char* section, const char* what) {
    std::int64_t v;
    std::memcpy(&v, take(8, section, what), 8);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void parse_body(Reader& r, Checkpoint& c) {
  const auto cfg_len = r.u32("config", "config section");
  const auto* cfg = r.take(cfg_len, "config", "config section");
  c.config_text.assign(reinterpret_cast<const char*>(cfg), cfg_len);

  const auto count = r.u32("tensor table", "tensor table");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.u32("tensor table", "tensor table");
    const auto* name = r.take(name_len, "tensor table", "tensor table");
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto tag = *r.take(1, "tensor table", "tensor table");
    if (tag > 2) throw CheckpointError("tensor table", "unknown dtype tag in tensor table: " + t.name);
    t.dtype = static_cast<DType>(tag);
    const auto rank = r.u32("tensor table", "tensor table");
    if (rank > 8) throw CheckpointError("tensor table", "implausible rank in tensor table: " + t.name);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.i64("tensor table", "tensor table");
      if (e < 0 || e > (std::int64_t{1} << 40)) throw CheckpointError("tensor table", "bad extent for " + t.name);
      t.shape.push_back(e);
      numel *= e;
      if (numel > (std::int64_t{1} << 40)) throw CheckpointError("tensor table", "bad extent for " + t.name);
    }
    const auto n = static_cast<std::size_t>(numel) * dtype_size(t.dtype);
    if (n > r.remaining()) throw CheckpointError("tensor table", "truncated tensor table");
    const auto* p = r.take(n, "tensor table", "tensor table");
    t.payload.assign(p, p + n);
    if (!c.tensors.empty() && !(c.tensors.back().name < t.name)) {
      throw CheckpointError("tensor table", "tensor table is not sorted by name");
    }
    c.tensors.push_back(std::move(t));
  }
}

}  // namespace

CheckpointTensor CheckpointTensor::from(const std::string& name, std::span<const float> v, Shape shape) {
  return make(name, DType::kF32, v, std::move(shape));
}
CheckpointTensor CheckpointTensor::from(const std::string& name, std::span<const double> v, Shape shape) {
  return make(name, DType::kF64, v, std::move(shape));
}
CheckpointTensor CheckpointTensor::from(const std::string& name, std::span<const std::int64_t> v, Shape shape) {
  return make(name, DType::kI64, v, std::move(shape));
}
std::vector<float> CheckpointTensor::as_f32() const { return read_as<float>(*this, DType::kF32); }
std::vector<double> CheckpointTensor::as_f64() const { return read_as<double>(*this, DType::kF64); }
std::vector<std::int64_t> CheckpointTensor::as_i64() const { return read_as<std::int64_t>(*this, DType::kI64); }

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  auto it = std::lower_bound(tensors.begin(), tensors.end(), name,
                             [](const CheckpointTensor& t, const std::string& n) { return t.name < n; });
  return it != tensors.end() && it->name == name ? &*it : nullptr;
}

const CheckpointTensor& Checkpoint::at(const std::string& name) const {
  const auto* t = find(name);
  if (!t) throw CheckpointError("tensor table", "missing tensor " + name);
  return *t;
}

void Checkpoint::add(CheckpointTensor t) {
  auto it = std::lower_bound(tensors.begin(), tensors.end(), t.name,
                             [](const CheckpointTensor& a, const std::string& n) { return a.name < n; });
  if (it != tensors.end() && it->name == t.name) throw std::invalid_argument("duplicate checkpoint tensor " + t.name);
  tensors.insert(it, std::move(t));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw("FRED", 4);
  w.u32(ckpt.version);
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.raw(ckpt.config_text.data(), ckpt.config_text.size());
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.i64(e);
    w.raw(t.payload.data(), t.payload.size());
  }
  w.u32(crc32(w.bytes));
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Checkpoint c;
  if (std::memcmp(r.take(4, "header", "header"), "FRED", 4) != 0) {
    throw CheckpointError("header", "bad magic in header");
  }
  c.version = r.u32("header", "header");
  if (c.version != kCheckpointVersion) {
    throw CheckpointError("header", "unsupported version " + std::to_string(c.version) + " in header");
  }
  // Damage inside a complete stream can surface as any structural error;
  // report it as a checksum failure unless the stream is simply short.
  const bool intact = bytes.size() >= 12 && [&] {
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    return crc32(bytes.first(bytes.size() - 4)) == stored;
  }();
  try {
    parse_body(r, c);
  } catch (const CheckpointError& e) {
    if (intact || std::string_view(e.what()).starts_with("truncated")) throw;
    throw CheckpointError("tensor table", "checksum mismatch in tensor table");
  }
  const auto body = r.pos();
  const auto stored = r.u32("tensor table", "tensor table");
  if (r.remaining() != 0) {
    if (!intact) throw CheckpointError("tensor table", "checksum mismatch in tensor table");
    throw CheckpointError("tensor table", "trailing bytes after checksum");
  }
  if (crc32(bytes.first(body)) != stored) throw CheckpointError("tensor table", "checksum mismatch in tensor table");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("header", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fredsr
