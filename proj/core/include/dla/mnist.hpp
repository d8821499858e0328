#pragma once

#include <filesystem>

#include "dla/data.hpp"

namespace dla {

// Reads the four canonical IDX files (big-endian, image magic 2051, label
// magic 2049) and scales pixels to [0,1] by dividing by 255.
// Train split has N=60000, test split N=10000.
std::pair<LabeledImageSet, LabeledImageSet> load_mnist(const std::filesystem::path& dir);

// Single image+label file pair; exposed for tests against non-canonical data.
LabeledImageSet load_idx_pair(const std::filesystem::path& image_file,
                              const std::filesystem::path& label_file, const std::string& split_tag);

}  // namespace dla
