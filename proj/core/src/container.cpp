#include "dla/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "dla/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace dla {

namespace {

constexpr char kMagic[4] = {'D', 'L', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;

void append(std::vector<std::uint8_t>& out, const void* p, size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename T>
void append_value(std::vector<std::uint8_t>& out, T v) {
  append(out, &v, sizeof(T));
}

std::uint32_t crc_of(const std::uint8_t* data, size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace

ContainerWriter::ContainerWriter(std::string kind) { meta_["kind"] = std::move(kind); }

void ContainerWriter::add_section(const std::string& name, const std::string& dtype,
                                  const Shape& shape, const void* data, std::int64_t byte_count) {
  nlohmann::json s;
  s["name"] = name;
  s["dtype"] = dtype;
  s["shape"] = shape;
  s["offset"] = payload_.size();
  s["bytes"] = byte_count;
  sections_.push_back(std::move(s));
  append(payload_, data, static_cast<size_t>(byte_count));
}

void ContainerWriter::add_f32(const std::string& name, const Shape& shape, const float* data) {
  add_section(name, "f32", shape, data, numel(shape) * 4);
}

void ContainerWriter::add_i32(const std::string& name, const std::vector<std::int32_t>& values) {
  add_section(name, "i32", {static_cast<int>(values.size())}, values.data(),
              static_cast<std::int64_t>(values.size()) * 4);
}

void ContainerWriter::add_u8(const std::string& name, const std::vector<std::uint8_t>& values) {
  add_section(name, "u8", {static_cast<int>(values.size())}, values.data(),
              static_cast<std::int64_t>(values.size()));
}

std::vector<std::uint8_t> ContainerWriter::bytes() const {
  nlohmann::json meta = meta_;
  meta["sections"] = sections_;
  const std::string meta_str = meta.dump();

  std::vector<std::uint8_t> out;
  out.reserve(meta_str.size() + payload_.size() + 32);
  append(out, kMagic, 4);
  append_value<std::uint32_t>(out, kVersion);
  append_value<std::uint64_t>(out, meta_str.size());
  append(out, meta_str.data(), meta_str.size());
  append_value<std::uint64_t>(out, payload_.size());
  append(out, payload_.data(), payload_.size());
  append_value<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

void ContainerWriter::write(const std::filesystem::path& path) const {
  const auto buf = bytes();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("container: cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("container: write to '" + path.string() + "' failed");
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("container: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_bytes(buf, path.string());
}

Container Container::from_bytes(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) -> FormatError {
    return FormatError("container '" + origin + "': " + why);
  };
  if (bytes.size() < 4 + 4 + 8 + 8 + 4) throw fail("truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail("bad magic");

  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc_of(bytes.data(), bytes.size() - 4) != stored_crc) throw fail("checksum mismatch");

  size_t pos = 4;
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + pos, 4);
  pos += 4;
  if (version != kVersion) {
    throw fail("unsupported format version " + std::to_string(version));
  }
  std::uint64_t meta_len;
  std::memcpy(&meta_len, bytes.data() + pos, 8);
  pos += 8;
  if (pos + meta_len + 8 + 4 > bytes.size()) throw fail("truncated metadata");

  Container c;
  c.origin_ = origin;
  c.meta_ = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + meta_len),
                                  nullptr, false);
  if (c.meta_.is_discarded()) throw fail("metadata is not valid JSON");
  pos += meta_len;

  std::uint64_t payload_len;
  std::memcpy(&payload_len, bytes.data() + pos, 8);
  pos += 8;
  if (pos + payload_len + 4 != bytes.size()) throw fail("payload length mismatch");
  c.payload_.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + payload_len));
  return c;
}

std::string Container::kind() const { return meta_.value("kind", ""); }

const nlohmann::json& Container::find(const std::string& name) const {
  if (meta_.contains("sections")) {
    for (const auto& s : meta_["sections"]) {
      if (s.value("name", "") == name) return s;
    }
  }
  throw FormatError("container '" + origin_ + "': missing section '" + name + "'");
}

bool Container::has(const std::string& name) const {
  if (!meta_.contains("sections")) return false;
  for (const auto& s : meta_["sections"]) {
    if (s.value("name", "") == name) return true;
  }
  return false;
}

Shape Container::section_shape(const std::string& name) const {
  return find(name)["shape"].get<Shape>();
}

namespace {
std::pair<size_t, size_t> section_span(const nlohmann::json& s, size_t payload_size,
                                       const std::string& origin, const std::string& dtype) {
  if (s.value("dtype", "") != dtype) {
    throw FormatError("container '" + origin + "': section '" + s.value("name", "") +
                      "' has dtype " + s.value("dtype", "") + ", expected " + dtype);
  }
  const auto off = s["offset"].get<size_t>();
  const auto len = s["bytes"].get<size_t>();
  if (off + len > payload_size) {
    throw FormatError("container '" + origin + "': section out of bounds");
  }
  return {off, len};
}
}  // namespace

Tensor Container::f32(const std::string& name) const {
  const auto& s = find(name);
  auto [off, len] = section_span(s, payload_.size(), origin_, "f32");
  Shape shape = s["shape"].get<Shape>();
  if (static_cast<std::int64_t>(len) != numel(shape) * 4) {
    throw FormatError("container '" + origin_ + "': section '" + name + "' size mismatch");
  }
  std::vector<float> data(len / 4);
  std::memcpy(data.data(), payload_.data() + off, len);
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::int32_t> Container::i32(const std::string& name) const {
  const auto& s = find(name);
  auto [off, len] = section_span(s, payload_.size(), origin_, "i32");
  std::vector<std::int32_t> v(len / 4);
  std::memcpy(v.data(), payload_.data() + off, len);
  return v;
}

std::vector<std::uint8_t> Container::u8(const std::string& name) const {
  const auto& s = find(name);
  auto [off, len] = section_span(s, payload_.size(), origin_, "u8");
  return std::vector<std::uint8_t>(payload_.begin() + static_cast<std::ptrdiff_t>(off),
                                   payload_.begin() + static_cast<std::ptrdiff_t>(off + len));
}

}  // namespace dla
