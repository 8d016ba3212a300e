#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fredsr/tensor.hpp"

namespace fredsr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI64 = 2 };

struct CheckpointTensor {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian values

  std::int64_t numel() const { return shape_numel(shape); }

  static CheckpointTensor from(const std::string& name, std::span<const float> v, Shape shape);
  static CheckpointTensor from(const std::string& name, std::span<const double> v, Shape shape);
  static CheckpointTensor from(const std::string& name, std::span<const std::int64_t> v, Shape shape);
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
  std::vector<std::int64_t> as_i64() const;
};

/// Layout: "FRED", u32 version, u32 config length + UTF-8 config text,
/// u32 tensor count, tensors (u32 name length + name, u8 dtype, u32 rank,
/// i64 extents, payload), then a CRC-32 of every preceding byte.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<CheckpointTensor> tensors;  // kept sorted by name

  const CheckpointTensor* find(const std::string& name) const;
  const CheckpointTensor& at(const std::string& name) const;
  void add(CheckpointTensor t);
};

/// Load failure; `section()` is "header", "config" or "tensor table".
class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& section, const std::string& what)
      : std::runtime_error(what), section_(section) {}
  const std::string& section() const noexcept { return section_; }

 private:
  std::string section_;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Parses and verifies the whole stream before returning anything.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fredsr
