#include "spot/synthetic.hpp"

#include <cmath>
#include <stdexcept>

namespace spot {

namespace {

struct Rgb {
  float r, g, b;
};

Rgb hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

bool point_in_triangle(float px, float py, float r) {
  // vertices: (0,-r), (-0.95r, 0.75r), (0.95r, 0.75r)
  const float ax = 0.0f, ay = -r;
  const float bx = -0.95f * r, by = 0.75f * r;
  const float cx = 0.95f * r, cy = 0.75f * r;
  auto side = [&](float x0, float y0, float x1, float y1) {
    return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
  };
  const float d0 = side(ax, ay, bx, by), d1 = side(bx, by, cx, cy), d2 = side(cx, cy, ax, ay);
  const bool neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
  const bool pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
  return !(neg && pos);
}

// kind: 0 circle, 1 square, 2 triangle, 3 cross, 4 diamond, 5 ring,
// 6 x-cross, 7 four-point star, 8 double bar, 9 L-shape
bool inside_shape(int kind, float px, float py, float r) {
  const float ax = std::fabs(px), ay = std::fabs(py);
  switch (kind) {
    case 0: return px * px + py * py <= r * r;
    case 1: return ax <= 0.88f * r && ay <= 0.88f * r;
    case 2: return point_in_triangle(px, py, r);
    case 3: return (ax <= 0.3f * r && ay <= r) || (ay <= 0.3f * r && ax <= r);
    case 4: return ax + ay <= 1.15f * r;
    case 5: {
      const float d2 = px * px + py * py;
      return d2 <= r * r && d2 >= 0.55f * 0.55f * r * r;
    }
    case 6: {
      const float ux = std::fabs(px + py) * 0.70710678f;
      const float uy = std::fabs(px - py) * 0.70710678f;
      return (ux <= 0.3f * r && uy <= r) || (uy <= 0.3f * r && ux <= r);
    }
    case 7: return (ax + ay / 0.35f <= r) || (ax / 0.35f + ay <= r);
    case 8: return ax <= 0.9f * r && (std::fabs(py - 0.5f * r) <= 0.22f * r ||
                                      std::fabs(py + 0.5f * r) <= 0.22f * r);
    default:
      return (px >= -0.8f * r && px <= -0.3f * r && ay <= 0.9f * r) ||
             (px >= -0.8f * r && px <= 0.9f * r && py >= 0.4f * r && py <= 0.9f * r);
  }
}

}  // namespace

ImageDataset make_synthetic_shapes(int n, int classes, int size, std::uint64_t seed) {
  if (classes < 2 || classes > 10)
    throw std::invalid_argument("make_synthetic_shapes: classes must be in 2..10, got " +
                                std::to_string(classes));
  if (size != 32 && size != 64)
    throw std::invalid_argument("make_synthetic_shapes: size must be 32 or 64, got " +
                                std::to_string(size));
  ImageDataset ds(3, size, size);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(3) * size * size);

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, {stream::kData, static_cast<std::uint64_t>(i)});
    const int label = rng.uniform_int(classes);

    // background: hue gradient plus a sinusoidal ripple
    const float bg_hue = static_cast<float>(rng.uniform());
    const Rgb c0 = hsv_to_rgb(bg_hue, static_cast<float>(rng.uniform(0.25, 0.65)),
                              static_cast<float>(rng.uniform(0.30, 0.70)));
    const Rgb c1 = hsv_to_rgb(bg_hue + static_cast<float>(rng.uniform(0.05, 0.20)),
                              static_cast<float>(rng.uniform(0.25, 0.65)),
                              static_cast<float>(rng.uniform(0.30, 0.70)));
    const float gx = static_cast<float>(rng.uniform(-1.0, 1.0));
    const float gy = static_cast<float>(rng.uniform(-1.0, 1.0));
    const float ripple_amp = static_cast<float>(rng.uniform(0.03, 0.09));
    const float fx = static_cast<float>(rng.uniform(0.5, 3.5));
    const float fy = static_cast<float>(rng.uniform(0.5, 3.5));
    const float phase = static_cast<float>(rng.uniform(0.0, 6.2831853));

    // foreground shape: hue pushed away from the background
    const Rgb fg = hsv_to_rgb(bg_hue + static_cast<float>(rng.uniform(0.35, 0.65)),
                              static_cast<float>(rng.uniform(0.6, 1.0)),
                              static_cast<float>(rng.uniform(0.55, 1.0)));
    const float s = static_cast<float>(size);
    const float radius = s * static_cast<float>(rng.uniform(0.20, 0.32));
    const float cx = s * 0.5f + s * static_cast<float>(rng.uniform(-0.15, 0.15));
    const float cy = s * 0.5f + s * static_cast<float>(rng.uniform(-0.15, 0.15));

    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const float u = 0.5f + 0.5f * (gx * (x / s - 0.5f) + gy * (y / s - 0.5f));
        const float ripple =
            ripple_amp * std::sin(6.2831853f * (fx * x + fy * y) / s + phase);
        float r = c0.r + (c1.r - c0.r) * u + ripple;
        float g = c0.g + (c1.g - c0.g) * u + ripple;
        float b = c0.b + (c1.b - c0.b) * u + ripple;
        // 2x2 supersampled coverage
        int hits = 0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx)
            hits += inside_shape(label, x + 0.25f + 0.5f * sx - cx, y + 0.25f + 0.5f * sy - cy,
                                 radius);
        const float cov = hits / 4.0f;
        r += (fg.r - r) * cov;
        g += (fg.g - g) * cov;
        b += (fg.b - b) * cov;
        const float noise = static_cast<float>(rng.uniform(-0.01, 0.01));
        auto q = [&](float v) {
          const float cl = std::min(1.0f, std::max(0.0f, v + noise));
          return static_cast<std::uint8_t>(std::lround(cl * 255.0f));
        };
        const std::size_t at = static_cast<std::size_t>(y) * size + x;
        pixels[at] = q(r);
        pixels[static_cast<std::size_t>(size) * size + at] = q(g);
        pixels[2 * static_cast<std::size_t>(size) * size + at] = q(b);
      }
    ds.add(static_cast<std::uint8_t>(label), pixels);
  }
  return ds;
}

}  // namespace spot
