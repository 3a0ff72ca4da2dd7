#include "spot/training.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>

namespace spot {

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

namespace {

RepairLossVariant parse_repair_loss(const std::string& v) {
  if (v == "saturating") return RepairLossVariant::Saturating;
  if (v == "non-saturating") return RepairLossVariant::NonSaturating;
  throw ConfigError("repair_loss must be 'saturating' or 'non-saturating', got \"" + v + "\"");
}

Replacement parse_replacement(const std::string& v) {
  if (v == "average") return Replacement::Average;
  if (v == "noise") return Replacement::Noise;
  throw ConfigError("replacement must be 'average' or 'noise', got \"" + v + "\"");
}

std::string format_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

TrainConfig TrainConfig::from_run_config(const RunConfig& rc) {
  TrainConfig c;
  c.preset = parse_preset(rc.get("preset"));
  c.seed = rc.get_u64("seed");
  c.theta = rc.get_float("theta");
  c.batch_size = rc.get_int("batch_size");
  c.ae_epochs = rc.get_int("ae_epochs");
  c.adv_epochs = rc.get_int("adv_epochs");
  c.lr_start = rc.get_float("lr_start");
  c.lr_end = rc.get_float("lr_end");
  c.beta1 = rc.get_float("beta1");
  c.beta2 = rc.get_float("beta2");
  c.adam_eps = rc.get_float("adam_eps");
  c.mask_loss_weight = rc.get_float("mask_loss_weight");
  c.repair_loss = parse_repair_loss(rc.get("repair_loss"));
  c.replacement = parse_replacement(rc.get("replacement"));
  c.noise_scale = rc.get_float("noise_scale");
  c.buffer_batches = rc.get_int("buffer_batches");
  c.buffer_mix = rc.get_float("buffer_mix");
  c.checkpoint_every = rc.get_int("checkpoint_every");
  c.augment_inputs = rc.get_bool("augment");
  c.crop = rc.get_int("crop");
  c.resize_min = rc.get_float("resize_min");
  c.resize_max = rc.get_float("resize_max");
  c.real_input_images = rc.get_bool("real_input_images");
  c.local_repair = rc.get_bool("local_repair");
  c.mask_prediction = rc.get_bool("mask_prediction");
  c.encoder_3x3 = rc.get_bool("encoder_3x3");
  c.gated_repair = rc.get_bool("gated_repair");
  c.history_buffer = rc.get_bool("history_buffer");
  c.repair_network = rc.get_bool("repair_network");
  c.gan_baseline = rc.get_bool("gan_baseline");
  c.encoder_spec = rc.get("encoder_spec");
  c.decoder_spec = rc.get("decoder_spec");
  c.disc_spec = rc.get("disc_spec");
  c.disc_hidden = rc.get_int("disc_hidden");
  c.origin_text = rc.resolved_text();
  return c;
}

void TrainConfig::validate() const {
  if (!(theta > 0.0f && theta < 1.0f))
    throw TrainError("theta must be strictly inside (0,1) for training runs, got " +
                     format_float(theta));
  if (!(lr_end > 0.0f && lr_end <= lr_start))
    throw TrainError("learning-rate schedule requires 0 < lr_end <= lr_start");
  if (buffer_mix < 0.0f || buffer_mix > 1.0f)
    throw TrainError("buffer_mix must be in [0,1], got " + format_float(buffer_mix));
  if (batch_size < 1) throw TrainError("batch_size must be positive");
  if (ae_epochs < 0 || adv_epochs < 0) throw TrainError("epoch counts must be non-negative");
  if (mask_loss_weight < 0.0f) throw TrainError("mask_loss_weight must be non-negative");
  if (history_buffer && buffer_batches < 1)
    throw TrainError("history buffer enabled but buffer_batches < 1");
}

// ---------------------------------------------------------------------------
// History buffer
// ---------------------------------------------------------------------------

void HistoryBuffer::push(BufferItem item) {
  if (capacity_ <= 0) return;
  if (size() < capacity_) {
    items_.push_back(std::move(item));
    return;
  }
  items_[head_] = std::move(item);
  head_ = (head_ + 1) % static_cast<std::size_t>(capacity_);
}

std::vector<BufferItem> mix_batch(const std::vector<BufferItem>& fresh, HistoryBuffer& buffer,
                                  float fraction, Rng& rng) {
  if (fraction < 0.0f || fraction > 1.0f)
    throw TrainError("mix fraction must be in [0,1], got " + format_float(fraction));
  std::vector<BufferItem> out = fresh;
  const int want = static_cast<int>(fraction * static_cast<float>(fresh.size()));
  const int take = std::min(want, buffer.size());
  if (take > 0) {
    // uniform draws without replacement
    std::vector<int> pool(static_cast<std::size_t>(buffer.size()));
    for (int i = 0; i < buffer.size(); ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < take; ++i) {
      const int j = i + rng.uniform_int(buffer.size() - i);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      out[static_cast<std::size_t>(i)] = buffer.at(pool[static_cast<std::size_t>(i)]);
    }
  }
  for (const BufferItem& item : fresh) buffer.push(item);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

MetricsWriter::MetricsWriter(const std::string& path) {
  if (path.empty()) return;
  file_ = std::fopen(path.c_str(), "w");
  if (!file_) throw IoError("cannot open metrics file: " + path);
}

MetricsWriter::~MetricsWriter() {
  if (file_) std::fclose(file_);
}

void MetricsWriter::line(const std::string& json) {
  if (!file_) return;
  std::fputs(json.c_str(), file_);
  std::fputc('\n', file_);
  std::fflush(file_);
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

namespace {

std::string encoder_string(const TrainConfig& cfg, const PresetSpec& preset) {
  if (!cfg.encoder_spec.empty()) return cfg.encoder_spec;
  return cfg.encoder_3x3 ? preset.encoder_3x3 : preset.encoder;
}

Models build_models(const TrainConfig& cfg, bool full) {
  Models m;
  m.preset = preset_spec(cfg.preset);
  const std::string enc_str = encoder_string(cfg, m.preset);
  const std::string dec_str = cfg.decoder_spec.empty() ? m.preset.decoder : cfg.decoder_spec;
  const std::string dis_str = cfg.disc_spec.empty() ? m.preset.disc_trunk : cfg.disc_spec;
  const int hidden = cfg.disc_hidden > 0 ? cfg.disc_hidden : m.preset.disc_hidden;

  const NetworkSpec enc_spec = parse_conv_stack(enc_str);
  const NetworkSpec dec_spec = parse_conv_stack(dec_str);
  m.bottleneck = conv_stack_output_shape(
      enc_spec, Shape{1, m.preset.input_channels, m.preset.input_size, m.preset.input_size});

  Rng rng = Rng::derive(cfg.seed, {stream::kInit});
  m.enc = build_encoder(enc_spec, m.preset.input_channels, rng);
  m.dec = build_decoder(dec_spec, m.bottleneck.c(), rng);
  if (!full) return m;
  m.rep = build_repair_net(m.dec, m.bottleneck.c(), cfg.local_repair, rng);
  m.disc = build_discriminator(parse_conv_stack(dis_str), m.preset.input_channels,
                               m.preset.input_size, hidden, m.bottleneck.h(), m.bottleneck.w(),
                               rng);
  if (cfg.gan_baseline) m.gen = build_generator(64, m.bottleneck, dec_spec, rng);
  return m;
}

void for_each_param(Models& m, const ParamVisitor& fn) {
  m.enc.visit_params(fn);
  m.dec.visit_params(fn);
  m.rep.visit_params(fn);
  m.disc.visit_params(fn);
  if (m.gen) m.gen->visit_params(fn);
}

void for_each_buffer(Models& m, const BufferVisitor& fn) {
  m.enc.visit_buffers(fn);
  m.dec.visit_buffers(fn);
  m.rep.visit_buffers(fn);
  m.disc.visit_buffers(fn);
  if (m.gen) m.gen->visit_buffers(fn);
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

Models Models::build(const TrainConfig& cfg) { return build_models(cfg, true); }

std::vector<ParamRef<float>> Models::params_of(const std::string& prefix) {
  std::vector<ParamRef<float>> out;
  for_each_param(*this, [&](const std::string& name, TensorF& t) {
    if (starts_with(name, prefix)) out.push_back({name, t});
  });
  return out;
}

void Models::store(CheckpointBundle& bundle) {
  for_each_param(*this, [&](const std::string& name, TensorF& t) { bundle.put(name, t); });
  for_each_buffer(*this,
                  [&](const std::string& name, ArrayX<float>& a) { bundle.put_array(name, a); });
}

void Models::load(const CheckpointBundle& bundle) {
  for_each_param(*this, [&](const std::string& name, TensorF& t) {
    const TensorF& src = bundle.require(name);
    if (!(src.shape() == t.shape()))
      throw IoError("checkpoint tensor '" + name + "' has shape " + src.shape().str() +
                    ", model expects " + t.shape().str());
    t.raw_values() = src.values();
  });
  for_each_buffer(*this, [&](const std::string& name, ArrayX<float>& a) {
    const TensorF& src = bundle.require(name);
    if (src.size() != a.size())
      throw IoError("checkpoint buffer '" + name + "' has length " +
                    std::to_string(src.size()) + ", model expects " + std::to_string(a.size()));
    a = src.values();
  });
}

namespace {

void load_prefix(Models& m, const CheckpointBundle& bundle, const std::string& prefix) {
  for_each_param(m, [&](const std::string& name, TensorF& t) {
    if (!starts_with(name, prefix)) return;
    const TensorF& src = bundle.require(name);
    if (!(src.shape() == t.shape()))
      throw IoError("checkpoint tensor '" + name + "' has shape " + src.shape().str() +
                    ", model expects " + t.shape().str());
    t.raw_values() = src.values();
  });
  for_each_buffer(m, [&](const std::string& name, ArrayX<float>& a) {
    if (!starts_with(name, prefix)) return;
    const TensorF& src = bundle.require(name);
    if (src.size() != a.size())
      throw IoError("checkpoint buffer '" + name + "' has length " +
                    std::to_string(src.size()) + ", model expects " + std::to_string(a.size()));
    a = src.values();
  });
}

void store_optimizer(CheckpointBundle& bundle, const std::string& tag, AdamF& opt) {
  bundle.put_scalar("opt." + tag + ".step", static_cast<float>(opt.step_count()));
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    bundle.put_array("opt." + tag + "." + params[i].name + ".m", opt.moment1(i));
    bundle.put_array("opt." + tag + "." + params[i].name + ".v", opt.moment2(i));
  }
}

void load_optimizer(const CheckpointBundle& bundle, const std::string& tag, AdamF& opt) {
  opt.set_step_count(
      static_cast<std::int64_t>(bundle.require("opt." + tag + ".step").values()[0]));
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.moment1(i) = bundle.require("opt." + tag + "." + params[i].name + ".m").values();
    opt.moment2(i) = bundle.require("opt." + tag + "." + params[i].name + ".v").values();
  }
}

std::vector<int> shuffled_indices(int n, Rng rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(i + 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

TensorF batch_tensor(const ImageDataset& data, const std::vector<int>& indices,
                     const TrainConfig& cfg, std::uint64_t phase, std::uint64_t step) {
  if (!cfg.augment_inputs) return data.batch(indices);
  const PresetSpec preset = preset_spec(cfg.preset);
  const int crop = cfg.crop > 0 ? cfg.crop : preset.input_size;
  const Eigen::Index plane = static_cast<Eigen::Index>(data.channels()) * crop * crop;
  ArrayX<float> out(static_cast<Eigen::Index>(indices.size()) * plane);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    Rng rng = Rng::derive(cfg.seed, {stream::kAugment, phase, step, static_cast<std::uint64_t>(k)});
    out.segment(static_cast<Eigen::Index>(k) * plane, plane) =
        augment(data.image(indices[k]), data.channels(), data.height(), data.width(), crop, rng,
                cfg.resize_min, cfg.resize_max);
  }
  return TensorF::from_array(Shape{static_cast<int>(indices.size()), data.channels(), crop, crop},
                             std::move(out));
}

std::string metrics_json(std::initializer_list<std::pair<const char*, std::string>> fields) {
  std::string out = "{";
  bool first = true;
  for (const auto& [k, v] : fields) {
    if (!first) out += ",";
    first = false;
    out += std::string("\"") + k + "\":" + v;
  }
  out += "}";
  return out;
}

std::string jnum(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

Models models_from_checkpoint(const CheckpointBundle& bundle) {
  if (bundle.config_text.empty())
    throw IoError("checkpoint carries no embedded config; cannot rebuild models");
  const RunConfig rc = RunConfig::parse_text(bundle.config_text, "<checkpoint>");
  TrainConfig cfg = TrainConfig::from_run_config(rc);
  Models m = build_models(cfg, true);
  load_prefix(m, bundle, "enc.");
  load_prefix(m, bundle, "dec.");
  if (bundle.has("rep.0.w1")) load_prefix(m, bundle, "rep.");
  if (bundle.has("dis.fc1.w")) load_prefix(m, bundle, "dis.");
  if (m.gen && bundle.has("gen.fc.w")) load_prefix(m, bundle, "gen.");
  return m;
}

// ---------------------------------------------------------------------------
// Autoencoder pretraining
// ---------------------------------------------------------------------------

namespace {

CheckpointBundle snapshot_ae(Models& m, AdamF& opt, const TrainConfig& cfg, std::uint64_t step,
                             std::uint32_t epoch, const std::vector<float>& curve,
                             const std::string& config_text) {
  CheckpointBundle b;
  b.seed = cfg.seed;
  b.step = step;
  b.epoch = epoch;
  b.config_text = config_text;
  b.fingerprint = config_text.empty() ? 0 : fingerprint64(config_text);
  m.enc.visit_params([&](const std::string& n, TensorF& t) { b.put(n, t); });
  m.dec.visit_params([&](const std::string& n, TensorF& t) { b.put(n, t); });
  m.enc.visit_buffers([&](const std::string& n, ArrayX<float>& a) { b.put_array(n, a); });
  m.dec.visit_buffers([&](const std::string& n, ArrayX<float>& a) { b.put_array(n, a); });
  store_optimizer(b, "ae", opt);
  if (!curve.empty()) {
    ArrayX<float> c(static_cast<Eigen::Index>(curve.size()));
    for (std::size_t i = 0; i < curve.size(); ++i) c[static_cast<Eigen::Index>(i)] = curve[i];
    b.put_array("ae.loss_curve", c);
  }
  return b;
}

}  // namespace

CheckpointBundle pretrain_autoencoder(const ImageDataset& data, const TrainConfig& cfg,
                                      MetricsWriter* metrics, const std::string& save_path,
                                      const CheckpointBundle* resume) {
  cfg.validate();
  if (data.count() == 0) throw TrainError("pretrain_autoencoder: empty dataset");
  Models m = build_models(cfg, false);

  std::vector<ParamRef<float>> params = m.params_of("enc.");
  for (auto& p : m.params_of("dec.")) params.push_back(p);
  AdamF opt(params, cfg.beta1, cfg.beta2, cfg.adam_eps);

  std::vector<float> curve;
  std::uint32_t start_epoch = 0;
  std::uint64_t global_step = 0;
  if (resume) {
    load_prefix(m, *resume, "enc.");
    load_prefix(m, *resume, "dec.");
    load_optimizer(*resume, "ae", opt);
    start_epoch = resume->epoch;
    global_step = resume->step;
    if (const TensorF* c = resume->find("ae.loss_curve"))
      for (Eigen::Index i = 0; i < c->size(); ++i) curve.push_back(c->values()[i]);
  }

  const int batch = std::min(cfg.batch_size, data.count());
  const int steps_per_epoch = std::max(1, data.count() / batch);
  CheckpointBundle last_good =
      snapshot_ae(m, opt, cfg, global_step, start_epoch, curve, cfg.origin_text);

  for (std::uint32_t epoch = start_epoch; epoch < static_cast<std::uint32_t>(cfg.ae_epochs);
       ++epoch) {
    const std::vector<int> perm =
        shuffled_indices(data.count(), Rng::derive(cfg.seed, {stream::kShuffle, 1, epoch}));
    double epoch_loss = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<int> idx(perm.begin() + static_cast<std::ptrdiff_t>(s) * batch,
                           perm.begin() + static_cast<std::ptrdiff_t>(s + 1) * batch);
      TensorF x = batch_tensor(data, idx, cfg, 1, global_step);
      TensorF x_hat = forward_autoencode(m.enc, m.dec, x, true);
      TensorF loss = loss_auto(x_hat, x);
      const float lv = loss.item();
      if (!std::isfinite(lv)) {
        if (!save_path.empty()) last_good.save(save_path);
        throw TrainError("autoencoder loss diverged at step " + std::to_string(global_step) +
                         (save_path.empty() ? "" : "; last-good checkpoint saved to " + save_path));
      }
      backward(loss);
      opt.step(cfg.lr_start);
      epoch_loss += lv;
      ++global_step;
      if (metrics)
        metrics->line(metrics_json({{"phase", "\"ae\""},
                                    {"epoch", std::to_string(epoch)},
                                    {"step", std::to_string(global_step)},
                                    {"lr", jnum(cfg.lr_start)},
                                    {"loss_auto", jnum(lv)}}));
    }
    curve.push_back(static_cast<float>(epoch_loss / steps_per_epoch));
    last_good = snapshot_ae(m, opt, cfg, global_step, epoch + 1, curve, cfg.origin_text);
    if (!save_path.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % static_cast<std::uint32_t>(cfg.checkpoint_every) == 0)
      last_good.save(save_path + ".epoch" + std::to_string(epoch + 1));
  }
  if (!save_path.empty()) last_good.save(save_path);
  return last_good;
}

// ---------------------------------------------------------------------------
// Adversarial phase
// ---------------------------------------------------------------------------

namespace {

void set_requires_grad(std::vector<ParamRef<float>>& params, bool v) {
  for (auto& p : params) p.tensor.set_requires_grad(v);
}

float accuracy_real_fake(const TensorF& real_logits, const TensorF& fake_logits) {
  int correct = 0;
  for (Eigen::Index i = 0; i < real_logits.size(); ++i)
    correct += real_logits.values()[i] > 0.0f;
  for (Eigen::Index i = 0; i < fake_logits.size(); ++i)
    correct += fake_logits.values()[i] <= 0.0f;
  return static_cast<float>(correct) /
         static_cast<float>(real_logits.size() + fake_logits.size());
}

float mask_site_accuracy(const TensorF& mask_logits, const std::vector<BufferItem>& items) {
  const int n = mask_logits.shape().n();
  const int sites = mask_logits.shape().h() * mask_logits.shape().w();
  int correct = 0, total = 0;
  for (int i = 0; i < n; ++i) {
    if (!items[static_cast<std::size_t>(i)].mask) continue;
    const MaskGrid& grid = *items[static_cast<std::size_t>(i)].mask;
    for (int s = 0; s < sites; ++s) {
      const bool kept = mask_logits.values()[static_cast<Eigen::Index>(i) * sites + s] > 0.0f;
      correct += kept == (grid.bits[static_cast<std::size_t>(s)] == 1);
      ++total;
    }
  }
  return total ? static_cast<float>(correct) / static_cast<float>(total) : 0.0f;
}

CheckpointBundle snapshot_adv(Models& m, AdamF& optC, AdamF& optR, const HistoryBuffer& buffer,
                              const TrainConfig& cfg, std::uint64_t step, std::uint32_t epoch) {
  CheckpointBundle b;
  b.seed = cfg.seed;
  b.step = step;
  b.epoch = epoch;
  b.config_text = cfg.origin_text;
  b.fingerprint = cfg.origin_text.empty() ? 0 : fingerprint64(cfg.origin_text);
  m.store(b);
  store_optimizer(b, "C", optC);
  store_optimizer(b, "R", optR);
  b.put_scalar("buf.count", static_cast<float>(buffer.size()));
  for (int i = 0; i < buffer.size(); ++i) {
    const BufferItem& item = buffer.at(i);
    b.put(
        "buf." + std::to_string(i) + ".image",
        TensorF::from_array(Shape{static_cast<int>(item.image.size())}, item.image));
    if (item.mask) {
      ArrayX<float> bits(static_cast<Eigen::Index>(item.mask->bits.size()));
      for (std::size_t k = 0; k < item.mask->bits.size(); ++k)
        bits[static_cast<Eigen::Index>(k)] = static_cast<float>(item.mask->bits[k]);
      b.put("buf." + std::to_string(i) + ".mask",
            TensorF::from_array(Shape{item.mask->height, item.mask->width}, bits));
    }
  }
  return b;
}

void restore_buffer(HistoryBuffer& buffer, const CheckpointBundle& bundle, float theta) {
  const TensorF* count = bundle.find("buf.count");
  if (!count) return;
  const int n = static_cast<int>(count->values()[0]);
  for (int i = 0; i < n; ++i) {
    BufferItem item;
    item.image = bundle.require("buf." + std::to_string(i) + ".image").values();
    if (const TensorF* mt = bundle.find("buf." + std::to_string(i) + ".mask")) {
      MaskGrid grid;
      grid.height = mt->shape()[0];
      grid.width = mt->shape()[1];
      grid.theta = theta;
      grid.bits.resize(static_cast<std::size_t>(grid.height) * grid.width);
      for (std::size_t k = 0; k < grid.bits.size(); ++k)
        grid.bits[k] = mt->values()[static_cast<Eigen::Index>(k)] > 0.5f ? 1 : 0;
      item.mask = std::move(grid);
    }
    buffer.push(std::move(item));
  }
}

}  // namespace

CheckpointBundle train_adversarial(const ImageDataset& data, const CheckpointBundle& ae,
                                   const TrainConfig& cfg, MetricsWriter* metrics,
                                   const ImageDataset* eval_data, const std::string& save_path,
                                   const CheckpointBundle* resume) {
  cfg.validate();
  if (data.count() == 0) throw TrainError("train_adversarial: empty dataset");
  Models m = build_models(cfg, true);

  // scale-preset compatibility with the pretrained autoencoder
  if (!ae.config_text.empty()) {
    const RunConfig ae_rc = RunConfig::parse_text(ae.config_text, "<ae-checkpoint>");
    const TrainConfig ae_cfg = TrainConfig::from_run_config(ae_rc);
    if (ae_cfg.preset != cfg.preset)
      throw TrainError("autoencoder checkpoint was trained with preset " +
                       preset_name(ae_cfg.preset) + " but this run uses " +
                       preset_name(cfg.preset));
    if (encoder_string(ae_cfg, preset_spec(ae_cfg.preset)) !=
        encoder_string(cfg, preset_spec(cfg.preset)))
      throw TrainError("autoencoder checkpoint encoder does not match this run's encoder spec");
  }
  load_prefix(m, ae, "enc.");
  load_prefix(m, ae, "dec.");

  // freeze the autoencoder
  std::vector<ParamRef<float>> frozen = m.params_of("enc.");
  for (auto& p : m.params_of("dec.")) frozen.push_back(p);
  set_requires_grad(frozen, false);

  std::vector<ParamRef<float>> disc_params = m.params_of("dis.");
  std::vector<ParamRef<float>> repair_params =
      cfg.gan_baseline ? m.params_of("gen.") : m.params_of("rep.");
  AdamF optC(disc_params, cfg.beta1, cfg.beta2, cfg.adam_eps);
  AdamF optR(repair_params, cfg.beta1, cfg.beta2, cfg.adam_eps);

  HistoryBuffer buffer(cfg.history_buffer ? cfg.buffer_batches * cfg.batch_size : 0);

  std::uint32_t start_epoch = 0;
  std::uint64_t global_step = 0;
  if (resume) {
    load_prefix(m, *resume, "enc.");
    load_prefix(m, *resume, "dec.");
    load_prefix(m, *resume, "rep.");
    load_prefix(m, *resume, "dis.");
    if (m.gen) load_prefix(m, *resume, "gen.");
    load_optimizer(*resume, "C", optC);
    load_optimizer(*resume, "R", optR);
    restore_buffer(buffer, *resume, cfg.theta);
    start_epoch = resume->epoch;
    global_step = resume->step;
  }

  const int batch = std::min(cfg.batch_size, data.count());
  const int steps_per_epoch = std::max(1, data.count() / batch);
  const std::uint64_t total_steps =
      static_cast<std::uint64_t>(cfg.adv_epochs) * static_cast<std::uint64_t>(steps_per_epoch);
  CorruptionConfig cc{cfg.theta, cfg.replacement, cfg.noise_scale};
  const bool repair_updates = cfg.gan_baseline || cfg.repair_network;

  CheckpointBundle last_good = snapshot_adv(m, optC, optR, buffer, cfg, global_step, start_epoch);

  for (std::uint32_t epoch = start_epoch; epoch < static_cast<std::uint32_t>(cfg.adv_epochs);
       ++epoch) {
    const std::vector<int> perm =
        shuffled_indices(data.count(), Rng::derive(cfg.seed, {stream::kShuffle, 2, epoch}));
    for (int s = 0; s < steps_per_epoch; ++s) {
      const float t = total_steps > 1
                          ? static_cast<float>(global_step) / static_cast<float>(total_steps - 1)
                          : 0.0f;
      const float lr = cfg.lr_start + (cfg.lr_end - cfg.lr_start) * std::min(t, 1.0f);

      std::vector<int> idx(perm.begin() + static_cast<std::ptrdiff_t>(s) * batch,
                           perm.begin() + static_cast<std::ptrdiff_t>(s + 1) * batch);
      TensorF x = batch_tensor(data, idx, cfg, 2, global_step);

      // real examples: replicated through the frozen autoencoder by default
      TensorF real_images =
          cfg.real_input_images || cfg.gan_baseline ? x : forward_autoencode(m.enc, m.dec, x,
                                                                             false);

      // fresh corrupt examples
      Rng mask_rng = Rng::derive(cfg.seed, {stream::kMask, global_step});
      const std::uint64_t mask_seed = mask_rng.state();
      std::vector<MaskGrid> masks;
      TensorF fake;
      if (cfg.gan_baseline) {
        Rng zrng = Rng::derive(cfg.seed, {stream::kLatent, global_step});
        TensorF z = TensorF::randn(Shape{batch, m.gen->z_dim}, zrng);
        fake = m.gen->forward(z, true);
      } else {
        masks.reserve(static_cast<std::size_t>(batch));
        int dropped_in_batch = 0;
        for (int i = 0; i < batch; ++i) {
          masks.push_back(sample_mask(m.mask_h(), m.mask_w(), cc, mask_rng));
          dropped_in_batch += masks.back().dropped_count();
        }
        // sampling is unconditioned; an all-kept batch at a real dropping
        // rate is astronomically unlikely and worth flagging
        if (cfg.theta >= 0.1f && dropped_in_batch == 0)
          std::fprintf(stderr,
                       "warning: step %llu drew a batch with zero dropped sites at theta=%g\n",
                       static_cast<unsigned long long>(global_step),
                       static_cast<double>(cfg.theta));
        Rng noise_rng = Rng::derive(cfg.seed, {stream::kNoise, global_step});
        RepairForwardOpts opts;
        opts.mode = cfg.gated_repair ? RepairMode::Full : RepairMode::Ungated;
        opts.repair_training = true;
        fake = forward_damage_repair(m.enc, m.dec, cfg.repair_network ? &m.rep : nullptr, x,
                                     masks, cc, opts, &noise_rng);
      }

      // detach for the discriminator update; mix with the history buffer
      std::vector<BufferItem> fresh(static_cast<std::size_t>(batch));
      const Eigen::Index plane = fake.size() / batch;
      for (int i = 0; i < batch; ++i) {
        fresh[static_cast<std::size_t>(i)].image =
            fake.values().segment(static_cast<Eigen::Index>(i) * plane, plane);
        if (!cfg.gan_baseline) fresh[static_cast<std::size_t>(i)].mask = masks[static_cast<std::size_t>(i)];
      }
      Rng buffer_rng = Rng::derive(cfg.seed, {stream::kBuffer, global_step});
      std::vector<BufferItem> cbatch =
          cfg.history_buffer ? mix_batch(fresh, buffer, cfg.buffer_mix, buffer_rng) : fresh;

      // (4) discriminator update: real and corrupt examples share one batch
      // so batch normalization cannot separate the classes by batch
      // statistics alone
      ArrayX<float> joint(2 * fake.size());
      joint.head(fake.size()) = real_images.values();
      for (int i = 0; i < batch; ++i)
        joint.segment(fake.size() + static_cast<Eigen::Index>(i) * plane, plane) =
            cbatch[static_cast<std::size_t>(i)].image;
      TensorF joint_images = TensorF::from_array(
          Shape{2 * batch, fake.shape().c(), fake.shape().h(), fake.shape().w()},
          std::move(joint));
      DiscriminatorOutput joint_out = m.disc.forward(joint_images, true);
      TensorF real_logits = slice_batch(joint_out.class_logits, 0, batch);
      TensorF fake_logits = slice_batch(joint_out.class_logits, batch, batch);
      TensorF loss_d = loss_discriminator_class(real_logits, fake_logits);
      const float loss_d_val = loss_d.item();
      float loss_m_val = 0.0f;
      TensorF loss_total = loss_d;
      TensorF fake_mask_logits;
      if (cfg.mask_prediction && !cfg.gan_baseline) {
        std::vector<MaskGrid> targets;
        targets.reserve(cbatch.size());
        for (const BufferItem& item : cbatch) targets.push_back(*item.mask);
        fake_mask_logits = slice_batch(joint_out.mask_logits, batch, batch);
        TensorF lm = loss_mask(fake_mask_logits, targets);
        loss_m_val = lm.item();
        loss_total = add(loss_total, scale(lm, cfg.mask_loss_weight));
      }
      if (!std::isfinite(loss_d_val) || !std::isfinite(loss_m_val)) {
        if (!save_path.empty()) last_good.save(save_path);
        throw TrainError("discriminator loss diverged at step " + std::to_string(global_step));
      }
      const float d_acc = accuracy_real_fake(real_logits, fake_logits);
      const float m_acc = cfg.mask_prediction && !cfg.gan_baseline
                              ? mask_site_accuracy(fake_mask_logits, cbatch)
                              : 0.0f;
      backward(loss_total);
      optC.step(lr);

      // (5) repair (or generator) update against the updated discriminator
      float loss_r_val = 0.0f;
      if (repair_updates) {
        set_requires_grad(disc_params, false);
        DiscriminatorOutput adv_out = m.disc.forward(fake, true);
        TensorF loss_r = loss_repair_class(adv_out.class_logits, cfg.repair_loss);
        loss_r_val = loss_r.item();
        if (!std::isfinite(loss_r_val)) {
          set_requires_grad(disc_params, true);
          if (!save_path.empty()) last_good.save(save_path);
          throw TrainError("repair loss diverged at step " + std::to_string(global_step));
        }
        backward(loss_r);
        optR.step(lr);
        set_requires_grad(disc_params, true);
      }

      ++global_step;
      if (metrics)
        metrics->line(metrics_json({{"phase", "\"adv\""},
                                    {"epoch", std::to_string(epoch)},
                                    {"step", std::to_string(global_step)},
                                    {"lr", jnum(lr)},
                                    {"loss_d", jnum(loss_d_val)},
                                    {"loss_mask", jnum(loss_m_val)},
                                    {"loss_r", jnum(loss_r_val)},
                                    {"d_acc", jnum(d_acc)},
                                    {"mask_acc", jnum(m_acc)},
                                    {"mask_seed", std::to_string(mask_seed)}}));
    }

    if (eval_data && metrics) {
      const DiscEval ev = evaluate_discriminator(m, *eval_data, cfg, epoch);
      metrics->line(metrics_json({{"phase", "\"eval\""},
                                  {"epoch", std::to_string(epoch)},
                                  {"class_acc", jnum(ev.class_accuracy)},
                                  {"mask_acc", jnum(ev.mask_accuracy)}}));
    }
    last_good = snapshot_adv(m, optC, optR, buffer, cfg, global_step, epoch + 1);
    if (!save_path.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % static_cast<std::uint32_t>(cfg.checkpoint_every) == 0)
      last_good.save(save_path + ".epoch" + std::to_string(epoch + 1));
  }
  if (!save_path.empty()) last_good.save(save_path);
  return last_good;
}

// ---------------------------------------------------------------------------
// Discriminator evaluation
// ---------------------------------------------------------------------------

DiscEval evaluate_discriminator(Models& m, const ImageDataset& data, const TrainConfig& cfg,
                                std::uint64_t eval_tag) {
  DiscEval ev;
  if (data.count() == 0) return ev;
  CorruptionConfig cc{cfg.theta, cfg.replacement, cfg.noise_scale};
  const int batch = std::min(cfg.batch_size, data.count());
  int correct_class = 0, total_class = 0;
  std::int64_t correct_sites = 0, total_sites = 0;
  std::vector<int> idx;
  for (int at = 0; at + batch <= data.count(); at += batch) {
    idx.clear();
    for (int i = 0; i < batch; ++i) idx.push_back(at + i);
    TensorF x = data.batch(idx);
    TensorF real = cfg.real_input_images || cfg.gan_baseline
                       ? x
                       : forward_autoencode(m.enc, m.dec, x, false);
    Rng rng = Rng::derive(cfg.seed, {stream::kEval, eval_tag, static_cast<std::uint64_t>(at)});
    TensorF fake;
    std::vector<MaskGrid> masks;
    if (cfg.gan_baseline) {
      TensorF z = TensorF::randn(Shape{batch, m.gen->z_dim}, rng);
      fake = m.gen->forward(z, false);
    } else {
      for (int i = 0; i < batch; ++i)
        masks.push_back(sample_mask(m.mask_h(), m.mask_w(), cc, rng));
      RepairForwardOpts opts;
      opts.mode = cfg.gated_repair ? RepairMode::Full : RepairMode::Ungated;
      fake = forward_damage_repair(m.enc, m.dec, cfg.repair_network ? &m.rep : nullptr, x, masks,
                                   cc, opts, &rng);
    }
    DiscriminatorOutput ro = m.disc.forward(real, false);
    DiscriminatorOutput fo = m.disc.forward(fake, false);
    for (Eigen::Index i = 0; i < ro.class_logits.size(); ++i) {
      correct_class += ro.class_logits.values()[i] > 0.0f;
      correct_class += fo.class_logits.values()[i] <= 0.0f;
      total_class += 2;
    }
    if (!cfg.gan_baseline) {
      const int sites = m.mask_h() * m.mask_w();
      for (int i = 0; i < batch; ++i)
        for (int s2 = 0; s2 < sites; ++s2) {
          const bool kept =
              fo.mask_logits.values()[static_cast<Eigen::Index>(i) * sites + s2] > 0.0f;
          correct_sites += kept == (masks[static_cast<std::size_t>(i)].bits[
                                        static_cast<std::size_t>(s2)] == 1);
          ++total_sites;
        }
    }
  }
  ev.class_accuracy =
      total_class ? static_cast<float>(correct_class) / static_cast<float>(total_class) : 0.0f;
  ev.mask_accuracy =
      total_sites ? static_cast<float>(correct_sites) / static_cast<float>(total_sites) : 0.0f;
  return ev;
}

}  // namespace spot
