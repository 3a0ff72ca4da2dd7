#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spot/masking.hpp"
#include "spot/netspec.hpp"
#include "spot/ops.hpp"
#include "spot/rng.hpp"
#include "spot/tensor.hpp"

namespace spot {

using ParamVisitor = std::function<void(const std::string&, TensorF&)>;
using BufferVisitor = std::function<void(const std::string&, ArrayX<float>&)>;

/// Conv stage: optional bilinear 2x resize, convolution, optional batch
/// norm, optional activation.
struct ConvLayer {
  bool resize = false;
  int upscale = 2;
  int stride = 1;
  Padding pad = Padding::Same;
  TensorF w, b;
  std::optional<BatchNormState<float>> bn;
  std::optional<Act> act;

  TensorF forward(const TensorF& x, bool training);
  void visit_params(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

struct BuildOpts {
  std::optional<Act> act = Act::LeakyRelu01;
  bool batchnorm = true;
  // Overrides for the final layer (decoder drops BN on its last conv; the
  // discriminator trunk applies BN only after its last conv).
  std::optional<bool> last_batchnorm;
  std::optional<std::optional<Act>> last_act;
  bool batchnorm_only_last = false;
};

std::vector<ConvLayer> build_conv_stack(const NetworkSpec& spec, int in_channels,
                                        const BuildOpts& opts, Rng& rng);

struct Encoder {
  NetworkSpec spec;
  std::vector<ConvLayer> layers;
  TensorF forward(const TensorF& x, bool training);
  void visit_params(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
};

struct Decoder {
  NetworkSpec spec;
  std::vector<ConvLayer> layers;
  void visit_params(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
};

/// Residual-style correction block: batch norm, mask concatenated as an
/// extra channel, two 3x3 convolutions with a leaky-ReLU between. Gating by
/// the drop mask happens at the call site.
struct RepairBlock {
  BatchNormState<float> bn;
  TensorF w1, b1, w2, b2;
  TensorF forward(const TensorF& x, const TensorF& mask_channel, bool training);
  void visit_params(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
};

/// One repair block per decoder stage. In the local variant all blocks sit
/// at the bottleneck and run back-to-back before the first decoder layer.
struct RepairNet {
  std::vector<RepairBlock> blocks;
  bool local = false;
  void visit_params(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
};

struct DiscriminatorOutput {
  TensorF class_logits;  // (N,1), pre-sigmoid
  TensorF mask_logits;   // (N,1,M,N), pre-sigmoid
};

/// Dual-head classifier: conv trunk, a 3x3 conv mask head on the final
/// feature map (nearest-resized to the mask grid when dims differ), and a
/// flatten -> hidden dense -> logit class head.
struct Discriminator {
  NetworkSpec trunk_spec;
  std::vector<ConvLayer> trunk;
  int mask_h = 0, mask_w = 0;
  TensorF mask_head_w, mask_head_b;
  TensorF fc1_w, fc1_b, fc2_w, fc2_b;

  DiscriminatorOutput forward(const TensorF& images, bool training);
  /// Activations after trunk conv layer `layer` (1-based), inference mode.
  TensorF features(const TensorF& images, int layer);
  int conv_layer_count() const { return static_cast<int>(trunk.size()); }
  void visit_params(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
};

/// Noise-to-image generator for the plain-GAN baseline.
struct Generator {
  int z_dim = 64;
  int c0 = 0, h0 = 0, w0 = 0;
  TensorF fc_w, fc_b;
  std::vector<ConvLayer> layers;
  TensorF forward(const TensorF& z, bool training);
  void visit_params(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
};

// ---------------------------------------------------------------------------
// Scale presets
// ---------------------------------------------------------------------------

enum class ScalePreset { Paper128, Desk32, Desk64 };

ScalePreset parse_preset(const std::string& name);
std::string preset_name(ScalePreset p);

struct PresetSpec {
  int input_size = 32;
  int input_channels = 3;
  std::string encoder;      // locality pattern: 3c1 then kernel==stride
  std::string encoder_3x3;  // widened-overlap ablation variant
  std::string decoder;
  std::string disc_trunk;
  int disc_hidden = 256;
};

PresetSpec preset_spec(ScalePreset p);

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

Encoder build_encoder(const NetworkSpec& spec, int in_channels, Rng& rng);
Decoder build_decoder(const NetworkSpec& spec, int bottleneck_channels, Rng& rng);
/// Channel widths follow the decoder stage inputs; `local` sizes every
/// block at the bottleneck instead.
RepairNet build_repair_net(const Decoder& dec, int bottleneck_channels, bool local, Rng& rng);
Discriminator build_discriminator(const NetworkSpec& trunk, int in_channels, int input_size,
                                  int hidden, int mask_h, int mask_w, Rng& rng);
Generator build_generator(int z_dim, const Shape& bottleneck, const NetworkSpec& decoder_spec,
                          Rng& rng);

// ---------------------------------------------------------------------------
// Forward paths
// ---------------------------------------------------------------------------

TensorF forward_decoder(Decoder& dec, const TensorF& bottleneck, bool training);

/// D(E(x)): the replication path fed to the discriminator as "real".
TensorF forward_autoencode(Encoder& enc, Decoder& dec, const TensorF& x, bool training = false);

enum class RepairMode { Full, NoRepair, Ungated, DoublePass };

struct RepairForwardOpts {
  RepairMode mode = RepairMode::Full;
  bool repair_training = false;  // batch-norm mode inside repair blocks
  bool ae_training = false;      // encoder/decoder run frozen (inference) after pretraining
};

/// Per-stage instrumentation for gating checks: the raw corrections and the
/// keep arrays they were gated with.
struct RepairTrace {
  std::vector<TensorF> corrections;
  std::vector<ArrayX<float>> keeps;
};

/// Corrupt the encoded feature with per-image masks and decode with
/// mask-gated repair corrections ahead of every decoder stage. `rng` feeds
/// noise replacement and the fresh mask of the double-pass mode.
TensorF forward_damage_repair(Encoder& enc, Decoder& dec, RepairNet* rep, const TensorF& x,
                              const std::vector<MaskGrid>& masks, const CorruptionConfig& cc,
                              const RepairForwardOpts& opts, Rng* rng = nullptr,
                              RepairTrace* trace = nullptr);

DiscriminatorOutput discriminate(Discriminator& disc, const TensorF& images,
                                 bool training = false);

}  // namespace spot
