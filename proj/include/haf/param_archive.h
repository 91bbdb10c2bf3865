#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace haf {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

struct TensorEntry {
  DType dtype = DType::kFloat64;
  std::vector<std::int64_t> shape;
  // Values are always held as double in memory; dtype controls the on-disk
  // representation.
  std::vector<double> values;

  std::int64_t numel() const;
};

// Named-tensor container backing backbone weights and checkpoints. The binary
// layout is documented in docs/formats.md.
class ParamArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, TensorEntry entry);
  bool contains(const std::string& name) const;
  // Throws ParameterError if the tensor is missing or its shape differs.
  const TensorEntry& get(const std::string& name,
                         const std::vector<std::int64_t>& expected_shape) const;
  const std::map<std::string, TensorEntry>& tensors() const { return tensors_; }

  std::string metadata;  // free-form UTF-8, JSON by convention

  void save(const std::filesystem::path& path) const;
  static ParamArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, TensorEntry> tensors_;
};

// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace haf
