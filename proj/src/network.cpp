#include "spot/network.hpp"

#include <cmath>
#include <stdexcept>

namespace spot {

namespace {

TensorF he_conv_weights(int cout, int cin, int kernel, Rng& rng) {
  const float stddev = std::sqrt(2.0f / static_cast<float>(cin * kernel * kernel));
  TensorF w = TensorF::randn(Shape{cout, cin, kernel, kernel}, rng, stddev);
  w.set_requires_grad(true);
  return w;
}

TensorF he_dense_weights(int out, int in, Rng& rng) {
  const float stddev = std::sqrt(2.0f / static_cast<float>(in));
  TensorF w = TensorF::randn(Shape{out, in}, rng, stddev);
  w.set_requires_grad(true);
  return w;
}

TensorF zero_bias(int n) {
  TensorF b = TensorF::zeros(Shape{n});
  b.set_requires_grad(true);
  return b;
}

void visit_bn(BatchNormState<float>& bn, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", bn.gamma);
  fn(prefix + ".beta", bn.beta);
}

void visit_bn_buffers(BatchNormState<float>& bn, const std::string& prefix,
                      const BufferVisitor& fn) {
  fn(prefix + ".running_mean", bn.running_mean);
  fn(prefix + ".running_var", bn.running_var);
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvLayer
// ---------------------------------------------------------------------------

TensorF ConvLayer::forward(const TensorF& x, bool training) {
  TensorF h = x;
  if (resize) h = resize_bilinear(h, x.shape().h() * upscale, x.shape().w() * upscale);
  h = conv2d(h, w, b, stride, pad);
  if (bn) h = batch_norm(h, *bn, training);
  if (act) h = activation(h, *act);
  return h;
}

void ConvLayer::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w", w);
  fn(prefix + ".b", b);
  if (bn) visit_bn(*bn, prefix + ".bn", fn);
}

void ConvLayer::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  if (bn) visit_bn_buffers(*bn, prefix + ".bn", fn);
}

std::vector<ConvLayer> build_conv_stack(const NetworkSpec& spec, int in_channels,
                                        const BuildOpts& opts, Rng& rng) {
  std::vector<ConvLayer> layers;
  int cin = in_channels;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const bool last = i + 1 == spec.layers.size();
    if (l.filters < 1 || l.kernel < 1 || l.stride < 1 || l.stride > 2)
      throw ShapeError("conv stack: unsupported layer " + std::to_string(i) + " (" +
                       format_conv_stack(NetworkSpec{{l}}) + ")");
    ConvLayer layer;
    layer.resize = l.kind == LayerKind::ResizeConv;
    layer.upscale = layer.resize ? l.stride : 2;
    layer.stride = layer.resize ? 1 : l.stride;
    layer.w = he_conv_weights(l.filters, cin, l.kernel, rng);
    layer.b = zero_bias(l.filters);
    bool use_bn = opts.batchnorm_only_last ? last : opts.batchnorm;
    if (last && opts.last_batchnorm) use_bn = *opts.last_batchnorm;
    if (use_bn) layer.bn = BatchNormState<float>::create(l.filters);
    layer.act = (last && opts.last_act) ? *opts.last_act : opts.act;
    layers.push_back(std::move(layer));
    cin = l.filters;
  }
  return layers;
}

// ---------------------------------------------------------------------------
// Encoder / Decoder
// ---------------------------------------------------------------------------

TensorF Encoder::forward(const TensorF& x, bool training) {
  TensorF h = x;
  for (auto& layer : layers) h = layer.forward(h, training);
  return h;
}

void Encoder::visit_params(const ParamVisitor& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit_params("enc." + std::to_string(i), fn);
}
void Encoder::visit_buffers(const BufferVisitor& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit_buffers("enc." + std::to_string(i), fn);
}

void Decoder::visit_params(const ParamVisitor& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit_params("dec." + std::to_string(i), fn);
}
void Decoder::visit_buffers(const BufferVisitor& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit_buffers("dec." + std::to_string(i), fn);
}

Encoder build_encoder(const NetworkSpec& spec, int in_channels, Rng& rng) {
  Encoder enc;
  enc.spec = spec;
  enc.layers = build_conv_stack(spec, in_channels, BuildOpts{}, rng);
  return enc;
}

Decoder build_decoder(const NetworkSpec& spec, int bottleneck_channels, Rng& rng) {
  BuildOpts opts;
  opts.last_batchnorm = false;  // no normalization on the image-producing conv
  Decoder dec;
  dec.spec = spec;
  dec.layers = build_conv_stack(spec, bottleneck_channels, opts, rng);
  return dec;
}

// ---------------------------------------------------------------------------
// Repair network
// ---------------------------------------------------------------------------

TensorF RepairBlock::forward(const TensorF& x, const TensorF& mask_channel, bool training) {
  TensorF h = batch_norm(x, bn, training);
  h = concat_channels(h, mask_channel);
  h = conv2d(h, w1, b1, 1, Padding::Same);
  h = activation(h, Act::LeakyRelu01);
  return conv2d(h, w2, b2, 1, Padding::Same);
}

void RepairBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  visit_bn(bn, prefix + ".bn", fn);
  fn(prefix + ".w1", w1);
  fn(prefix + ".b1", b1);
  fn(prefix + ".w2", w2);
  fn(prefix + ".b2", b2);
}
void RepairBlock::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  visit_bn_buffers(bn, prefix + ".bn", fn);
}

void RepairNet::visit_params(const ParamVisitor& fn) {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].visit_params("rep." + std::to_string(i), fn);
}
void RepairNet::visit_buffers(const BufferVisitor& fn) {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].visit_buffers("rep." + std::to_string(i), fn);
}

RepairNet build_repair_net(const Decoder& dec, int bottleneck_channels, bool local, Rng& rng) {
  RepairNet rep;
  rep.local = local;
  int cin = bottleneck_channels;
  for (std::size_t i = 0; i < dec.layers.size(); ++i) {
    const int c = local ? bottleneck_channels : cin;
    RepairBlock block;
    block.bn = BatchNormState<float>::create(c);
    block.w1 = he_conv_weights(c, c + 1, 3, rng);  // +1 for the mask channel
    block.b1 = zero_bias(c);
    block.w2 = he_conv_weights(c, c, 3, rng);
    block.b2 = zero_bias(c);
    rep.blocks.push_back(std::move(block));
    cin = dec.spec.layers[i].filters;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator build_discriminator(const NetworkSpec& trunk, int in_channels, int input_size,
                                  int hidden, int mask_h, int mask_w, Rng& rng) {
  Discriminator disc;
  disc.trunk_spec = trunk;
  BuildOpts opts;
  opts.act = Act::Relu;
  opts.batchnorm_only_last = true;  // normalization after the final conv only
  disc.trunk = build_conv_stack(trunk, in_channels, opts, rng);
  const Shape feat =
      conv_stack_output_shape(trunk, Shape{1, in_channels, input_size, input_size});
  disc.mask_h = mask_h;
  disc.mask_w = mask_w;
  disc.mask_head_w = he_conv_weights(1, feat.c(), 3, rng);
  disc.mask_head_b = zero_bias(1);
  const int flat = feat.c() * feat.h() * feat.w();
  disc.fc1_w = he_dense_weights(hidden, flat, rng);
  disc.fc1_b = zero_bias(hidden);
  disc.fc2_w = he_dense_weights(1, hidden, rng);
  disc.fc2_b = zero_bias(1);
  return disc;
}

DiscriminatorOutput Discriminator::forward(const TensorF& images, bool training) {
  TensorF h = images;
  for (auto& layer : trunk) h = layer.forward(h, training);
  TensorF hm = h;
  if (h.shape().h() != mask_h || h.shape().w() != mask_w) {
    if (h.shape().h() >= mask_h)
      hm = downsample_nearest(h, mask_h, mask_w);
    else
      hm = upsample_nearest(h, mask_h, mask_w);
  }
  DiscriminatorOutput out;
  out.mask_logits = conv2d(hm, mask_head_w, mask_head_b, 1, Padding::Same);
  TensorF f = dense(h, fc1_w, fc1_b);
  f = activation(f, Act::Relu);
  out.class_logits = dense(f, fc2_w, fc2_b);
  return out;
}

TensorF Discriminator::features(const TensorF& images, int layer) {
  if (layer < 1 || layer > conv_layer_count())
    throw std::out_of_range("discriminator has conv layers 1.." +
                            std::to_string(conv_layer_count()) + ", requested " +
                            std::to_string(layer));
  TensorF h = images;
  for (int i = 0; i < layer; ++i) h = trunk[static_cast<std::size_t>(i)].forward(h, false);
  return h;
}

void Discriminator::visit_params(const ParamVisitor& fn) {
  for (std::size_t i = 0; i < trunk.size(); ++i)
    trunk[i].visit_params("dis.conv" + std::to_string(i + 1), fn);
  fn("dis.mask_head.w", mask_head_w);
  fn("dis.mask_head.b", mask_head_b);
  fn("dis.fc1.w", fc1_w);
  fn("dis.fc1.b", fc1_b);
  fn("dis.fc2.w", fc2_w);
  fn("dis.fc2.b", fc2_b);
}
void Discriminator::visit_buffers(const BufferVisitor& fn) {
  for (std::size_t i = 0; i < trunk.size(); ++i)
    trunk[i].visit_buffers("dis.conv" + std::to_string(i + 1), fn);
}

DiscriminatorOutput discriminate(Discriminator& disc, const TensorF& images, bool training) {
  return disc.forward(images, training);
}

// ---------------------------------------------------------------------------
// Generator (GAN baseline)
// ---------------------------------------------------------------------------

Generator build_generator(int z_dim, const Shape& bottleneck, const NetworkSpec& decoder_spec,
                          Rng& rng) {
  Generator gen;
  gen.z_dim = z_dim;
  gen.c0 = bottleneck.c();
  gen.h0 = bottleneck.h();
  gen.w0 = bottleneck.w();
  gen.fc_w = he_dense_weights(gen.c0 * gen.h0 * gen.w0, z_dim, rng);
  gen.fc_b = zero_bias(gen.c0 * gen.h0 * gen.w0);
  BuildOpts opts;
  opts.last_batchnorm = false;
  gen.layers = build_conv_stack(decoder_spec, gen.c0, opts, rng);
  return gen;
}

TensorF Generator::forward(const TensorF& z, bool training) {
  TensorF h = dense(z, fc_w, fc_b);
  h = activation(h, Act::LeakyRelu01);
  h = reshape(h, Shape{z.shape()[0], c0, h0, w0});
  for (auto& layer : layers) h = layer.forward(h, training);
  return h;
}

void Generator::visit_params(const ParamVisitor& fn) {
  fn("gen.fc.w", fc_w);
  fn("gen.fc.b", fc_b);
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit_params("gen." + std::to_string(i), fn);
}
void Generator::visit_buffers(const BufferVisitor& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit_buffers("gen." + std::to_string(i), fn);
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

ScalePreset parse_preset(const std::string& name) {
  if (name == "paper-128") return ScalePreset::Paper128;
  if (name == "desk-32") return ScalePreset::Desk32;
  if (name == "desk-64") return ScalePreset::Desk64;
  throw std::invalid_argument("unknown scale preset '" + name +
                              "' (expected paper-128, desk-32 or desk-64)");
}

std::string preset_name(ScalePreset p) {
  switch (p) {
    case ScalePreset::Paper128: return "paper-128";
    case ScalePreset::Desk32: return "desk-32";
    case ScalePreset::Desk64: return "desk-64";
  }
  return "?";
}

PresetSpec preset_spec(ScalePreset p) {
  PresetSpec s;
  switch (p) {
    case ScalePreset::Paper128:
      s.input_size = 128;
      s.encoder = "(32)3c1-(64)2c2-(128)2c2-(256)2c2-(512)2c2";
      s.encoder_3x3 = "(32)3c1-(64)3c2-(128)3c2-(256)3c2-(512)3c2";
      s.decoder = "(256)3rc2-(128)3rc2-(64)3rc2-(32)3rc2-(3)3c1";
      // AlexNet-like footprint with pooling folded into strides; the fifth
      // conv keeps the 256-filter width and normalization.
      s.disc_trunk = "(96)5c2-(256)5c2-(384)3c2-(384)3c1-(256)3c1";
      s.disc_hidden = 4096;
      break;
    case ScalePreset::Desk32:
      s.input_size = 32;
      s.encoder = "(16)3c1-(32)2c2-(64)2c2-(128)2c2-(256)2c2";
      s.encoder_3x3 = "(16)3c1-(32)3c2-(64)3c2-(128)3c2-(256)3c2";
      s.decoder = "(128)3rc2-(64)3rc2-(32)3rc2-(16)3rc2-(3)3c1";
      s.disc_trunk = "(32)3c2-(64)3c2-(96)3c1-(96)3c1-(96)3c2";
      s.disc_hidden = 256;
      break;
    case ScalePreset::Desk64:
      s.input_size = 64;
      s.encoder = "(16)3c1-(32)2c2-(64)2c2-(128)2c2-(256)2c2";
      s.encoder_3x3 = "(16)3c1-(32)3c2-(64)3c2-(128)3c2-(256)3c2";
      s.decoder = "(128)3rc2-(64)3rc2-(32)3rc2-(16)3rc2-(3)3c1";
      s.disc_trunk = "(32)3c2-(64)3c2-(96)3c2-(96)3c1-(96)3c1";
      s.disc_hidden = 256;
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward paths
// ---------------------------------------------------------------------------

TensorF forward_decoder(Decoder& dec, const TensorF& bottleneck, bool training) {
  TensorF h = bottleneck;
  for (auto& layer : dec.layers) h = layer.forward(h, training);
  return h;
}

TensorF forward_autoencode(Encoder& enc, Decoder& dec, const TensorF& x, bool training) {
  return forward_decoder(dec, enc.forward(x, training), training);
}

namespace {

// Masks upsampled to the running feature resolution, as keep array + channel
// tensor.
struct StageMasks {
  ArrayX<float> keep;
  TensorF channel;
};

StageMasks masks_at(const std::vector<MaskGrid>& masks, const Shape& feat) {
  std::vector<MaskGrid> up;
  up.reserve(masks.size());
  for (const MaskGrid& m : masks)
    up.push_back(m.height == feat.h() && m.width == feat.w()
                     ? m
                     : upsample_mask(m, feat.h(), feat.w()));
  StageMasks sm;
  sm.keep = mask_keep_array<float>(up, feat.c());
  sm.channel = mask_channel_tensor<float>(up);
  return sm;
}

TensorF damage_repair_once(Encoder& enc, Decoder& dec, RepairNet* rep, const TensorF& x,
                           const std::vector<MaskGrid>& masks, const CorruptionConfig& cc,
                           const RepairForwardOpts& opts, Rng* rng, RepairTrace* trace) {
  TensorF phi = enc.forward(x, opts.ae_training);
  TensorF h = corrupt_feature(phi, masks, cc, rng);
  const bool repair = rep != nullptr && opts.mode != RepairMode::NoRepair;
  auto apply_block = [&](RepairBlock& block, TensorF& inout) {
    StageMasks sm = masks_at(masks, inout.shape());
    TensorF corr = block.forward(inout, sm.channel, opts.repair_training);
    if (trace) {
      // what actually lands after gating
      trace->keeps.push_back(sm.keep);
      trace->corrections.push_back(
          opts.mode == RepairMode::Ungated
              ? corr
              : mul(corr, TensorF::from_array(corr.shape(),
                                              (1.0f - sm.keep).eval())));
    }
    inout = opts.mode == RepairMode::Ungated ? add(inout, corr)
                                             : gated_add(inout, corr, sm.keep);
  };
  if (repair && rep->local) {
    for (auto& block : rep->blocks) apply_block(block, h);
    for (auto& layer : dec.layers) h = layer.forward(h, opts.ae_training);
    return h;
  }
  for (std::size_t i = 0; i < dec.layers.size(); ++i) {
    if (repair) apply_block(rep->blocks[i], h);
    h = dec.layers[i].forward(h, opts.ae_training);
  }
  return h;
}

}  // namespace

TensorF forward_damage_repair(Encoder& enc, Decoder& dec, RepairNet* rep, const TensorF& x,
                              const std::vector<MaskGrid>& masks, const CorruptionConfig& cc,
                              const RepairForwardOpts& opts, Rng* rng, RepairTrace* trace) {
  detail::require(x.shape().rank() == 4, "forward_damage_repair: input must be rank 4");
  if (opts.mode != RepairMode::DoublePass)
    return damage_repair_once(enc, dec, rep, x, masks, cc, opts, rng, trace);

  detail::require(rng != nullptr, "double-pass mode needs a generator for the fresh mask");
  RepairForwardOpts pass = opts;
  pass.mode = RepairMode::Full;
  TensorF once = damage_repair_once(enc, dec, rep, x, masks, cc, pass, rng, trace);
  std::vector<MaskGrid> fresh;
  fresh.reserve(masks.size());
  for (const MaskGrid& m : masks) {
    CorruptionConfig cc2 = cc;
    cc2.theta = m.theta;
    fresh.push_back(sample_mask(m.height, m.width, cc2, *rng));
  }
  return damage_repair_once(enc, dec, rep, once, fresh, cc, pass, rng, trace);
}

}  // namespace spot
