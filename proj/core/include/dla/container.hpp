#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dla/tensor.hpp"

namespace dla {

// Versioned binary artifact file: magic, format version, JSON metadata
// block, named raw sections, trailing CRC32. Used for trace sets,
// adversarial sets and model files. See docs/formats.md.
class ContainerWriter {
 public:
  explicit ContainerWriter(std::string kind);

  nlohmann::json& meta() { return meta_; }

  void add_f32(const std::string& name, const Shape& shape, const float* data);
  void add_f32(const std::string& name, const Tensor& t) { add_f32(name, t.shape, t.data.data()); }
  void add_i32(const std::string& name, const std::vector<std::int32_t>& values);
  void add_u8(const std::string& name, const std::vector<std::uint8_t>& values);

  void write(const std::filesystem::path& path) const;
  // Serialized bytes, identical to the file contents.
  std::vector<std::uint8_t> bytes() const;

 private:
  void add_section(const std::string& name, const std::string& dtype, const Shape& shape,
                   const void* data, std::int64_t byte_count);

  nlohmann::json meta_;
  nlohmann::json sections_ = nlohmann::json::array();
  std::vector<std::uint8_t> payload_;
};

class Container {
 public:
  static Container load(const std::filesystem::path& path);
  static Container from_bytes(const std::vector<std::uint8_t>& bytes, const std::string& origin);

  const nlohmann::json& meta() const { return meta_; }
  std::string kind() const;

  bool has(const std::string& name) const;
  Shape section_shape(const std::string& name) const;
  Tensor f32(const std::string& name) const;
  std::vector<std::int32_t> i32(const std::string& name) const;
  std::vector<std::uint8_t> u8(const std::string& name) const;

 private:
  const nlohmann::json& find(const std::string& name) const;

  std::string origin_;
  nlohmann::json meta_;
  std::vector<std::uint8_t> payload_;
};

}  // namespace dla
