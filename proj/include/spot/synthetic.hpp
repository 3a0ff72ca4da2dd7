#pragma once

#include <cstdint>

#include "spot/dataset.hpp"

namespace spot {

/// Labeled desk-scale benchmark: colored geometric shapes (circle, square,
/// triangle, ...) over textured backgrounds with random position, scale and
/// hue. Label = shape kind. Deterministic for a given seed.
ImageDataset make_synthetic_shapes(int n, int classes, int size, std::uint64_t seed);

}  // namespace spot
