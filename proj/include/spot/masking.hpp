#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spot/ops.hpp"
#include "spot/rng.hpp"
#include "spot/tensor.hpp"

namespace spot {

/// Binary drop mask over the bottleneck grid: 1 = kept, 0 = dropped. All
/// channels at a site share the site's bit.
struct MaskGrid {
  int height = 0, width = 0;
  std::vector<std::uint8_t> bits;  // row-major, values in {0,1}
  float theta = 0.0f;
  std::uint64_t rng_seed = 0;  // generator state at sampling time, for replay

  int at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  int dropped_count() const {
    int d = 0;
    for (auto b : bits) d += (b == 0);
    return d;
  }
  static MaskGrid ones(int h, int w) {
    MaskGrid g;
    g.height = h;
    g.width = w;
    g.bits.assign(static_cast<std::size_t>(h) * w, 1);
    return g;
  }
};

enum class Replacement { Average, Noise };

struct CorruptionConfig {
  float theta = 0.5f;
  Replacement replacement = Replacement::Average;
  float noise_scale = 1.0f;
};

/// I.i.d. Bernoulli site mask: each site dropped with probability theta.
inline MaskGrid sample_mask(int m, int n, const CorruptionConfig& config, Rng& rng) {
  detail::require(m >= 1 && n >= 1, "sample_mask: grid dims must be positive, got " +
                                        std::to_string(m) + "x" + std::to_string(n));
  MaskGrid grid;
  grid.height = m;
  grid.width = n;
  grid.theta = config.theta;
  grid.rng_seed = rng.state();
  grid.bits.resize(static_cast<std::size_t>(m) * n);
  for (auto& b : grid.bits) b = rng.bernoulli(config.theta) ? 0 : 1;
  return grid;
}

/// Nearest-neighbor block replication of the mask; stays binary.
inline MaskGrid upsample_mask(const MaskGrid& mask, int target_h, int target_w) {
  detail::require(target_h >= mask.height && target_h % mask.height == 0 &&
                      target_w >= mask.width && target_w % mask.width == 0,
                  "upsample_mask: target " + std::to_string(target_h) + "x" +
                      std::to_string(target_w) + " is not an integer multiple of " +
                      std::to_string(mask.height) + "x" + std::to_string(mask.width));
  const int fy = target_h / mask.height, fx = target_w / mask.width;
  MaskGrid out;
  out.height = target_h;
  out.width = target_w;
  out.theta = mask.theta;
  out.rng_seed = mask.rng_seed;
  out.bits.resize(static_cast<std::size_t>(target_h) * target_w);
  for (int y = 0; y < target_h; ++y)
    for (int x = 0; x < target_w; ++x)
      out.bits[static_cast<std::size_t>(y) * target_w + x] = mask.at(y / fy, x / fx);
  return out;
}

/// Full-shape keep array (N,C,H,W) for a batch of per-image masks, each
/// replicated along the channel axis.
template <typename S>
ArrayX<S> mask_keep_array(const std::vector<MaskGrid>& masks, int channels) {
  detail::require(!masks.empty(), "mask_keep_array: empty mask batch");
  const int h = masks[0].height, w = masks[0].width;
  ArrayX<S> keep(static_cast<Eigen::Index>(masks.size()) * channels * h * w);
  Eigen::Index at = 0;
  for (const MaskGrid& m : masks) {
    detail::require(m.height == h && m.width == w, "mask_keep_array: ragged mask batch");
    for (int c = 0; c < channels; ++c)
      for (int i = 0; i < h * w; ++i) keep[at++] = static_cast<S>(m.bits[i]);
  }
  return keep;
}

/// (N,1,H,W) constant tensor of mask bits, for concatenation as an extra
/// input channel.
template <typename S>
Tensor<S> mask_channel_tensor(const std::vector<MaskGrid>& masks) {
  const int n = static_cast<int>(masks.size());
  const int h = masks[0].height, w = masks[0].width;
  return Tensor<S>::from_array(Shape{n, 1, h, w}, mask_keep_array<S>(masks, 1));
}

/// Corrupt the bottleneck feature: kept sites are bitwise copies of phi,
/// dropped sites take either the 3x3 feature average or Gaussian noise
/// scaled to the per-channel standard deviation. The averaged path stays
/// differentiable w.r.t. phi.
template <typename S>
Tensor<S> corrupt_feature(const Tensor<S>& phi, const std::vector<MaskGrid>& masks,
                          const CorruptionConfig& config, Rng* rng = nullptr) {
  detail::require(phi.shape().rank() == 4, "corrupt_feature: phi must be rank 4 (NCHW)");
  const Shape& s = phi.shape();
  detail::require(static_cast<int>(masks.size()) == s.n(),
                  "corrupt_feature: " + std::to_string(masks.size()) + " masks for batch of " +
                      std::to_string(s.n()));
  for (const MaskGrid& m : masks)
    detail::require(m.height == s.h() && m.width == s.w(),
                    "corrupt_feature: mask " + std::to_string(m.height) + "x" +
                        std::to_string(m.width) + " does not match feature spatial dims " +
                        std::to_string(s.h()) + "x" + std::to_string(s.w()));
  ArrayX<S> keep = mask_keep_array<S>(masks, s.c());
  if (config.replacement == Replacement::Average) {
    return where_mask(keep, phi, avg_pool3(phi));
  }
  detail::require(rng != nullptr, "corrupt_feature: noise replacement needs a generator");
  // Zero-mean noise matched to each (image, channel) standard deviation.
  const int hw = s.h() * s.w();
  ArrayX<S> noise(phi.size());
  for (int img = 0; img < s.n(); ++img)
    for (int c = 0; c < s.c(); ++c) {
      const Eigen::Index off = (static_cast<Eigen::Index>(img) * s.c() + c) * hw;
      auto ch = Eigen::Map<const ArrayX<S>>(phi.values().data() + off, hw);
      const S mean = ch.mean();
      const S sd = std::sqrt((ch - mean).square().sum() / static_cast<S>(hw));
      for (int i = 0; i < hw; ++i)
        noise[off + i] = static_cast<S>(rng->normal()) * sd * static_cast<S>(config.noise_scale);
    }
  return where_mask(keep, phi, Tensor<S>::from_array(s, std::move(noise)));
}

template <typename S>
Tensor<S> corrupt_feature(const Tensor<S>& phi, const MaskGrid& mask,
                          const CorruptionConfig& config, Rng* rng = nullptr) {
  detail::require(phi.shape().rank() == 4 && phi.shape().n() == 1,
                  "corrupt_feature: single-mask form expects batch of 1");
  return corrupt_feature(phi, std::vector<MaskGrid>{mask}, config, rng);
}

}  // namespace spot
