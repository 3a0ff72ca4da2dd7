#include "spot/render.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>

#include "spot/dataset.hpp"

namespace spot {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

constexpr int kBorder = 2;

}  // namespace

void ppm_write(const std::string& path, const RgbImage& img) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write image file: " + path);
  std::fprintf(f.get(), "P6\n%d %d\n255\n", img.width, img.height);
  if (std::fwrite(img.data.data(), 1, img.data.size(), f.get()) != img.data.size())
    throw IoError("short write on image file: " + path);
}

RgbImage ppm_read(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open image file: " + path);
  char magic[3] = {};
  int w = 0, h = 0, maxval = 0;
  if (std::fscanf(f.get(), "%2s %d %d %d", magic, &w, &h, &maxval) != 4 ||
      std::strcmp(magic, "P6") != 0 || maxval != 255 || w < 1 || h < 1)
    throw IoError(path + ": not a P6/255 image");
  std::fgetc(f.get());  // single whitespace after maxval
  RgbImage img;
  img.height = h;
  img.width = w;
  img.data.resize(static_cast<std::size_t>(h) * w * 3);
  if (std::fread(img.data.data(), 1, img.data.size(), f.get()) != img.data.size())
    throw IoError(path + ": truncated pixel data");
  return img;
}

RgbImage render_grid(const std::vector<ArrayX<float>>& images, int channels, int height,
                     int width, int rows, int cols, const std::vector<BorderTag>& tags,
                     const std::vector<const MaskGrid*>& insets) {
  detail::require(channels == 1 || channels == 3,
                  "render_grid: images must have 1 or 3 channels");
  detail::require(static_cast<int>(images.size()) <= rows * cols,
                  "render_grid: more images than grid cells");
  for (const auto& im : images)
    detail::require(im.size() == static_cast<Eigen::Index>(channels) * height * width,
                    "render_grid: image size mismatch");

  const bool with_border = !tags.empty();
  const int cell_h = height + (with_border ? 2 * kBorder : 0);
  const int cell_w = width + (with_border ? 2 * kBorder : 0);
  RgbImage canvas;
  canvas.height = rows * cell_h;
  canvas.width = cols * cell_w;
  canvas.data.assign(static_cast<std::size_t>(canvas.height) * canvas.width * 3, 0);

  for (std::size_t i = 0; i < images.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    const int oy = r * cell_h, ox = c * cell_w;
    if (with_border) {
      const BorderTag tag = i < tags.size() ? tags[i] : BorderTag::None;
      std::uint8_t br = 0, bg = 0, bb = 0;
      if (tag == BorderTag::Real) bg = 200;
      if (tag == BorderTag::Corrupt) br = 220;
      for (int y = 0; y < cell_h; ++y)
        for (int x = 0; x < cell_w; ++x)
          if (y < kBorder || y >= cell_h - kBorder || x < kBorder || x >= cell_w - kBorder) {
            canvas.at(oy + y, ox + x, 0) = br;
            canvas.at(oy + y, ox + x, 1) = bg;
            canvas.at(oy + y, ox + x, 2) = bb;
          }
    }
    const int iy = oy + (with_border ? kBorder : 0), ix = ox + (with_border ? kBorder : 0);
    const ArrayX<float>& im = images[i];
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          const int src_ch = channels == 3 ? ch : 0;
          canvas.at(iy + y, ix + x, ch) =
              to_byte(im[(static_cast<Eigen::Index>(src_ch) * height + y) * width + x]);
        }
    if (i < insets.size() && insets[i] != nullptr) {
      const MaskGrid& m = *insets[i];
      const int block = std::max(1, height / (4 * m.height));
      const int mh = m.height * block, mw = m.width * block;
      for (int y = 0; y < mh; ++y)
        for (int x = 0; x < mw; ++x) {
          const std::uint8_t v = m.at(y / block, x / block) ? 255 : 0;
          for (int ch = 0; ch < 3; ++ch) canvas.at(iy + height - mh + y, ix + x, ch) = v;
        }
    }
  }
  return canvas;
}

}  // namespace spot
