#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spot/training.hpp"

namespace spot {

struct ProbeConfig {
  int layer = 5;         // discriminator trunk conv index, 1-based
  int target_dim = 0;    // flattened feature target; 0 = no pooling
  int epochs = 200;
  float lr = 1e-3f;
  int folds = 5;
  float train_fraction = 0.8f;
  std::uint64_t seed = 1;

  static ProbeConfig from_run_config(const RunConfig& rc);
};

/// Frozen-trunk features: forward to the chosen conv layer (inference mode,
/// running statistics folded in), adaptive average pooling so the flattened
/// dimension lands closest to target_dim. One row per image.
MatX<float> extract_features(Discriminator& disc, const ImageDataset& data,
                             const ProbeConfig& cfg, int batch = 64);

struct ProbeResult {
  std::vector<float> fold_accuracy;
  float mean = 0.0f;
  float sd = 0.0f;
};

/// Multinomial logistic regression on frozen features, trained per fold on
/// a seeded subsample and evaluated on the held-out set; reports mean and
/// standard deviation across folds.
ProbeResult linear_probe(const MatX<float>& train_features, const std::vector<int>& train_labels,
                         const MatX<float>& test_features, const std::vector<int>& test_labels,
                         const ProbeConfig& cfg);

/// Top-k row indices by cosine similarity to the query row, query excluded,
/// ties broken by index. Zero-norm rows have similarity 0 by convention.
std::vector<int> nearest_neighbors(const MatX<float>& features, int query_index, int k);

struct AblationRow {
  std::string id;      // "baseline", "a".."l" or "theta=<v>"
  std::string delta;   // human-readable config delta
  float theta = 0.5f;
  float accuracy = 0.0f;
  float sd = 0.0f;
  std::uint64_t seed = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string table() const;    // aligned plain-text table
  std::string records() const;  // line-delimited JSON
};

/// Train + probe each experiment variant at desk scale with fixed seeds.
/// Baseline always runs first. Experiment ids: a..l (architecture table) or
/// "theta=<value>".
AblationReport run_ablation(const RunConfig& base, const std::vector<std::string>& experiments,
                            MetricsWriter* metrics = nullptr);

}  // namespace spot
