#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace reclab {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> shape;
  DType dtype = DType::F64;
  std::vector<double> values;  // f32 records hold values exactly representable as float

  std::size_t numel() const noexcept { return values.size(); }
};

/// Versioned weight container shared by every model: a kind tag, JSON metadata and
/// named flat arrays with shapes. Serialization is byte-stable: metadata keys are
/// sorted and tensors keep insertion order.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  Checkpoint() = default;
  explicit Checkpoint(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }
  nlohmann::json& metadata() noexcept { return metadata_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  void add(std::string name, std::vector<std::int64_t> shape, std::span<const float> values);
  void add(std::string name, std::vector<std::int64_t> shape, std::span<const double> values);

  bool contains(std::string_view name) const noexcept;
  const TensorRecord& tensor(std::string_view name) const;
  const std::vector<TensorRecord>& tensors() const noexcept { return tensors_; }

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  /// SHA-256 of serialize().
  std::string digest() const;

  /// Throws FormatError unless kind() == expected.
  void expect_kind(std::string_view expected) const;

 private:
  std::string kind_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::vector<TensorRecord> tensors_;
};

}  // namespace reclab
