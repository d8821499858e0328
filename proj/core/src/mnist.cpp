#include "dla/mnist.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include "dla/errors.hpp"

namespace dla {

namespace {

constexpr std::uint32_t kImageMagic = 2051;  // 0x00000803
constexpr std::uint32_t kLabelMagic = 2049;  // 0x00000801

std::uint32_t read_be32(std::ifstream& f, const std::string& file, const char* what) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw FormatError("idx file '" + file + "': truncated while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace

LabeledImageSet load_idx_pair(const std::filesystem::path& image_file,
                              const std::filesystem::path& label_file,
                              const std::string& split_tag) {
  std::ifstream imgf(image_file, std::ios::binary);
  if (!imgf) throw FormatError("idx file '" + image_file.string() + "': cannot open");
  const auto img_magic = read_be32(imgf, image_file.string(), "magic");
  if (img_magic != kImageMagic) {
    throw FormatError("idx file '" + image_file.string() + "': bad magic " +
                      std::to_string(img_magic) + ", expected 2051");
  }
  const int n = static_cast<int>(read_be32(imgf, image_file.string(), "count"));
  const int rows = static_cast<int>(read_be32(imgf, image_file.string(), "rows"));
  const int cols = static_cast<int>(read_be32(imgf, image_file.string(), "cols"));

  std::vector<unsigned char> raw(static_cast<size_t>(n) * rows * cols);
  imgf.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!imgf) throw FormatError("idx file '" + image_file.string() + "': truncated pixel data");

  std::ifstream labf(label_file, std::ios::binary);
  if (!labf) throw FormatError("idx file '" + label_file.string() + "': cannot open");
  const auto lab_magic = read_be32(labf, label_file.string(), "magic");
  if (lab_magic != kLabelMagic) {
    throw FormatError("idx file '" + label_file.string() + "': bad magic " +
                      std::to_string(lab_magic) + ", expected 2049");
  }
  const int ln = static_cast<int>(read_be32(labf, label_file.string(), "count"));
  if (ln != n) {
    throw FormatError("idx file '" + label_file.string() + "': label count " + std::to_string(ln) +
                      " does not match image count " + std::to_string(n));
  }
  std::vector<unsigned char> labraw(static_cast<size_t>(ln));
  labf.read(reinterpret_cast<char*>(labraw.data()), static_cast<std::streamsize>(labraw.size()));
  if (!labf) throw FormatError("idx file '" + label_file.string() + "': truncated label data");

  LabeledImageSet set;
  set.split = split_from_string(split_tag);
  set.images = Tensor::zeros({n, 1, rows, cols});
  for (size_t i = 0; i < raw.size(); ++i) {
    set.images.data[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  set.labels.assign(labraw.begin(), labraw.end());
  set.validate();
  return set;
}

std::pair<LabeledImageSet, LabeledImageSet> load_mnist(const std::filesystem::path& dir) {
  auto train = load_idx_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", "train");
  auto test = load_idx_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", "test");
  return {std::move(train), std::move(test)};
}

}  // namespace dla
