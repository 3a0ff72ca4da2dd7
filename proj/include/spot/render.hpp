#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spot/masking.hpp"
#include "spot/tensor.hpp"

namespace spot {

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  int height = 0, width = 0;
  std::vector<std::uint8_t> data;  // height * width * 3

  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

void ppm_write(const std::string& path, const RgbImage& img);
RgbImage ppm_read(const std::string& path);

enum class BorderTag { None, Real, Corrupt };

/// Tile CHW float images [0,1] into a rows x cols grid. Each cell carries a
/// 2-pixel border (green = real, red = corrupt, black = untagged) and an
/// optional drop-mask inset in its bottom-left corner.
RgbImage render_grid(const std::vector<ArrayX<float>>& images, int channels, int height,
                     int width, int rows, int cols, const std::vector<BorderTag>& tags,
                     const std::vector<const MaskGrid*>& insets = {});

}  // namespace spot
