#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spot/rng.hpp"
#include "spot/tensor.hpp"

namespace spot {

/// File-level failure; the message names the byte offset where the problem
/// was detected.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary labeled image container ("IMGB"). Header: magic, version u16,
/// count u32, channels u8, height u16, width u16, little-endian; then per
/// record one label byte and channels*height*width pixel bytes, planar
/// channel-major. Pixels map to floats in [0,1] by /255.
class ImageDataset {
 public:
  static constexpr std::uint16_t kVersion = 1;
  static constexpr std::size_t kHeaderSize = 15;

  ImageDataset() = default;
  ImageDataset(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width) {}

  static ImageDataset load(const std::string& path);
  void save(const std::string& path) const;

  void add(std::uint8_t label, const std::vector<std::uint8_t>& pixels);

  int count() const { return static_cast<int>(labels_.size()); }
  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }

  std::uint8_t label(int i) const { return labels_[static_cast<std::size_t>(i)]; }
  /// Decoded floats in [0,1], CHW.
  ArrayX<float> image(int i) const;
  /// (B,C,H,W) batch tensor for the given record indices.
  TensorF batch(const std::vector<int>& indices) const;
  std::vector<int> all_indices() const;

 private:
  int channels_ = 0, height_ = 0, width_ = 0;
  std::vector<std::uint8_t> labels_;
  std::vector<std::uint8_t> pixels_;  // count * C*H*W, record-major
};

/// Random resize (uniform scale in [scale_min, scale_max], corner-aligned
/// bilinear) followed by a random crop to crop x crop.
ArrayX<float> augment(const ArrayX<float>& image, int channels, int height, int width,
                      int crop, Rng& rng, float scale_min = 1.0f, float scale_max = 1.25f);

}  // namespace spot
