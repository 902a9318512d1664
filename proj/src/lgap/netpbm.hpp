#pragma once

#include "lgap/tensor.hpp"

#include <filesystem>
#include <vector>

namespace lgap {

// One image as channel-major values in [0,1].
struct PixelImage {
  SampleShape shape;
  std::vector<double> values;
};

// Reads binary or ASCII PGM (1 channel) and PPM (3 channels).
PixelImage read_netpbm(const std::filesystem::path& path);
// Writes P5 or P6 with maxval 255; values are rounded to the nearest level.
void write_netpbm(const std::filesystem::path& path, const SampleShape& shape,
                  const double* values);

}  // namespace lgap
