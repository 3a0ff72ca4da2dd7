#pragma once

#include <string>
#include <vector>

#include "spot/ops.hpp"
#include "spot/shape.hpp"

namespace spot {

enum class LayerKind { Conv, ResizeConv };

/// One convolutional stage in the paper-style string notation, e.g.
/// "(32)3c1" or "(256)3rc2". For resize-conv the stride is the upsampling
/// factor; the convolution itself runs at stride 1.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int filters = 0;
  int kernel = 0;
  int stride = 1;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
};

/// Parse "(32)3c1-(64)2c2-..." into a NetworkSpec. Grammar per layer:
/// "(" filters ")" kernel ("c"|"rc") stride.
NetworkSpec parse_conv_stack(const std::string& text);

std::string format_conv_stack(const NetworkSpec& spec);

/// Output shape of a conv stack on an NCHW input (same padding throughout).
/// Throws naming the failing layer index when extents collapse.
Shape conv_stack_output_shape(const NetworkSpec& spec, const Shape& input);

struct RFSummary {
  int receptive_field = 1;
  int effective_stride = 1;
  int overlap = 0;  // receptive_field - effective_stride
};

/// Analytic receptive field of a conv-only stack via the standard
/// recurrence r += (k-1)*j, j *= s. Rejects resize-conv layers.
RFSummary receptive_field(const NetworkSpec& spec);

}  // namespace spot
