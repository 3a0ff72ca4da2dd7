#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spot/adam.hpp"
#include "spot/checkpoint.hpp"
#include "spot/config.hpp"
#include "spot/dataset.hpp"
#include "spot/losses.hpp"
#include "spot/network.hpp"

namespace spot {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs: schedule, losses, corruption, ablation switches.
struct TrainConfig {
  ScalePreset preset = ScalePreset::Desk32;
  std::uint64_t seed = 1;
  float theta = 0.5f;
  int batch_size = 16;
  int ae_epochs = 80;
  int adv_epochs = 150;
  float lr_start = 3e-4f;
  float lr_end = 3e-6f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float mask_loss_weight = 1.0f;
  RepairLossVariant repair_loss = RepairLossVariant::NonSaturating;
  Replacement replacement = Replacement::Average;
  float noise_scale = 1.0f;
  int buffer_batches = 16;
  float buffer_mix = 0.5f;
  int checkpoint_every = 0;  // epochs; 0 = final only
  bool augment_inputs = false;
  int crop = 0;  // 0 = preset input size
  float resize_min = 1.0f, resize_max = 1.25f;

  // ablation switches
  bool real_input_images = false;  // feed raw inputs as real examples
  bool local_repair = false;       // all repair blocks stacked at the bottleneck
  bool mask_prediction = true;
  bool encoder_3x3 = false;  // widened-overlap encoder
  bool gated_repair = true;
  bool history_buffer = true;
  bool repair_network = true;
  bool gan_baseline = false;  // noise-to-image generator instead of damage & repair

  // network overrides (empty string / 0 = preset values)
  std::string encoder_spec, decoder_spec, disc_spec;
  int disc_hidden = 0;

  // resolved config document this run came from; embedded in checkpoints
  std::string origin_text;

  static TrainConfig from_run_config(const RunConfig& rc);
  void validate() const;
};

/// FIFO ring of past corrupted examples with their ground-truth masks.
struct BufferItem {
  ArrayX<float> image;
  std::optional<MaskGrid> mask;
};

class HistoryBuffer {
 public:
  explicit HistoryBuffer(int capacity) : capacity_(capacity) {}
  void push(BufferItem item);
  int size() const { return static_cast<int>(items_.size()); }
  int capacity() const { return capacity_; }
  const BufferItem& at(int i) const { return items_[static_cast<std::size_t>(i)]; }

 private:
  int capacity_ = 0;
  std::size_t head_ = 0;  // next eviction slot once full
  std::vector<BufferItem> items_;
};

/// Replace floor(fraction*B) leading items with uniform draws from the
/// buffer (fewer when the buffer holds less), then push the fresh items.
std::vector<BufferItem> mix_batch(const std::vector<BufferItem>& fresh, HistoryBuffer& buffer,
                                  float fraction, Rng& rng);

/// Line-delimited metrics records (one JSON object per line).
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;
  void line(const std::string& json);
  bool active() const { return file_ != nullptr; }

 private:
  std::FILE* file_ = nullptr;
};

/// The full model set for one run.
struct Models {
  PresetSpec preset;
  Shape bottleneck;  // encoder output for a single image
  Encoder enc;
  Decoder dec;
  RepairNet rep;
  Discriminator disc;
  std::optional<Generator> gen;

  static Models build(const TrainConfig& cfg);
  std::vector<ParamRef<float>> params_of(const std::string& prefix);
  void store(CheckpointBundle& bundle);
  void load(const CheckpointBundle& bundle);
  int input_size() const { return preset.input_size; }
  int mask_h() const { return bottleneck.h(); }
  int mask_w() const { return bottleneck.w(); }
};

/// Autoencoder pretraining (phase 1). Emits a checkpoint carrying encoder,
/// decoder, optimizer state and the per-epoch loss curve; deterministic for
/// a given seed. On divergence the last epoch-end state is saved to
/// `save_path` before the error propagates.
CheckpointBundle pretrain_autoencoder(const ImageDataset& data, const TrainConfig& cfg,
                                      MetricsWriter* metrics = nullptr,
                                      const std::string& save_path = "",
                                      const CheckpointBundle* resume = nullptr);

/// Adversarial phase: repair network vs dual-head discriminator on top of
/// the frozen autoencoder. Honors every ablation switch; learning rate
/// decays linearly from lr_start to lr_end across the phase.
CheckpointBundle train_adversarial(const ImageDataset& data, const CheckpointBundle& ae,
                                   const TrainConfig& cfg, MetricsWriter* metrics = nullptr,
                                   const ImageDataset* eval_data = nullptr,
                                   const std::string& save_path = "",
                                   const CheckpointBundle* resume = nullptr);

struct DiscEval {
  float class_accuracy = 0.0f;
  float mask_accuracy = 0.0f;
};

/// Held-out real/corrupt and per-site mask accuracy, inference mode, with
/// masks drawn from the evaluation stream.
DiscEval evaluate_discriminator(Models& m, const ImageDataset& data, const TrainConfig& cfg,
                                std::uint64_t eval_tag);

/// Rebuild models from an adversarial checkpoint (its embedded config).
Models models_from_checkpoint(const CheckpointBundle& bundle);

}  // namespace spot
