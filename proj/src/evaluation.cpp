#include "spot/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace spot {

ProbeConfig ProbeConfig::from_run_config(const RunConfig& rc) {
  ProbeConfig c;
  c.layer = rc.get_int("probe_layer");
  c.target_dim = rc.get_int("probe_target_dim");
  if (c.target_dim == 0)
    c.target_dim = parse_preset(rc.get("preset")) == ScalePreset::Paper128 ? 9200 : 1600;
  c.epochs = rc.get_int("probe_epochs");
  c.lr = rc.get_float("probe_lr");
  c.folds = rc.get_int("probe_folds");
  c.train_fraction = rc.get_float("probe_train_fraction");
  c.seed = rc.get_u64("seed");
  return c;
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

namespace {

// Adaptive average pooling of one CHW plane set to a g x g grid.
void adaptive_pool(const float* src, int c, int h, int w, int g, float* dst) {
  for (int ch = 0; ch < c; ++ch)
    for (int gy = 0; gy < g; ++gy) {
      const int y0 = gy * h / g, y1 = std::max(y0 + 1, (gy + 1) * h / g);
      for (int gx = 0; gx < g; ++gx) {
        const int x0 = gx * w / g, x1 = std::max(x0 + 1, (gx + 1) * w / g);
        float acc = 0.0f;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            acc += src[(static_cast<std::ptrdiff_t>(ch) * h + y) * w + x];
        dst[(static_cast<std::ptrdiff_t>(ch) * g + gy) * g + gx] =
            acc / static_cast<float>((y1 - y0) * (x1 - x0));
      }
    }
}

int pick_pool_grid(int c, int h, int target) {
  if (target <= 0) return h;
  int best = 1;
  std::int64_t best_err = -1;
  for (int g = 1; g <= h; ++g) {
    const std::int64_t dim = static_cast<std::int64_t>(c) * g * g;
    const std::int64_t err = std::llabs(dim - target);
    if (best_err < 0 || err < best_err) {
      best_err = err;
      best = g;
    }
  }
  return best;
}

}  // namespace

MatX<float> extract_features(Discriminator& disc, const ImageDataset& data,
                             const ProbeConfig& cfg, int batch) {
  if (data.count() == 0) return MatX<float>(0, 0);
  std::vector<int> idx{0};
  const TensorF probe = disc.features(data.batch(idx), cfg.layer);
  const int c = probe.shape().c(), h = probe.shape().h(), w = probe.shape().w();
  const int g = pick_pool_grid(c, std::min(h, w), cfg.target_dim);
  const int dim = c * g * g;

  MatX<float> features(data.count(), dim);
  std::vector<float> row(static_cast<std::size_t>(dim));
  for (int at = 0; at < data.count(); at += batch) {
    idx.clear();
    for (int i = at; i < std::min(at + batch, data.count()); ++i) idx.push_back(i);
    const TensorF f = disc.features(data.batch(idx), cfg.layer);
    const Eigen::Index plane = static_cast<Eigen::Index>(c) * h * w;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      adaptive_pool(f.values().data() + static_cast<Eigen::Index>(k) * plane, c, h, w, g,
                    row.data());
      for (int d = 0; d < dim; ++d) features(idx[k], d) = row[static_cast<std::size_t>(d)];
    }
  }
  return features;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

namespace {

float probe_accuracy(const MatX<float>& w, const ArrayX<float>& b, const MatX<float>& x,
                     const std::vector<int>& labels) {
  int correct = 0;
  MatX<float> logits = x * w.transpose();
  for (int i = 0; i < x.rows(); ++i) {
    int best = 0;
    float best_v = logits(i, 0) + b[0];
    for (int k = 1; k < w.rows(); ++k) {
      const float v = logits(i, k) + b[k];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    correct += best == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<float>(correct) / static_cast<float>(x.rows());
}

}  // namespace

ProbeResult linear_probe(const MatX<float>& train_features, const std::vector<int>& train_labels,
                         const MatX<float>& test_features, const std::vector<int>& test_labels,
                         const ProbeConfig& cfg) {
  const int n = static_cast<int>(train_features.rows());
  const int dim = static_cast<int>(train_features.cols());
  if (n == 0 || static_cast<int>(train_labels.size()) != n)
    throw TrainError("linear_probe: features/labels mismatch");
  int classes = 0;
  for (int l : train_labels) {
    if (l < 0) throw TrainError("linear_probe: negative label");
    classes = std::max(classes, l + 1);
  }
  for (int l : test_labels) classes = std::max(classes, l + 1);
  if (classes < 2) throw TrainError("linear_probe: at least 2 classes required");

  ProbeResult result;
  const int fold_n = std::max(1, static_cast<int>(cfg.train_fraction * n));
  for (int fold = 0; fold < cfg.folds; ++fold) {
    // seeded subsample for this fold
    Rng rng = Rng::derive(cfg.seed, {stream::kProbe, static_cast<std::uint64_t>(fold)});
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const int j = rng.uniform_int(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    MatX<float> x(fold_n, dim);
    std::vector<int> y(static_cast<std::size_t>(fold_n));
    std::vector<int> seen(static_cast<std::size_t>(classes), 0);
    for (int i = 0; i < fold_n; ++i) {
      x.row(i) = train_features.row(order[static_cast<std::size_t>(i)]);
      y[static_cast<std::size_t>(i)] = train_labels[static_cast<std::size_t>(
          order[static_cast<std::size_t>(i)])];
      ++seen[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
    }
    int present = 0;
    for (int s : seen) present += s > 0;
    if (present < 2)
      throw TrainError("linear_probe: degenerate fold " + std::to_string(fold) +
                       " holds a single class");

    // standardize per dimension on the fold's training statistics
    Eigen::RowVectorXf mu = x.colwise().mean();
    Eigen::RowVectorXf sd =
        ((x.rowwise() - mu).array().square().colwise().mean()).sqrt().matrix();
    for (int d = 0; d < dim; ++d) sd(d) = std::max(sd(d), 1e-6f);
    x = (x.rowwise() - mu).array().rowwise() / sd.array();
    MatX<float> xt = (test_features.rowwise() - mu).array().rowwise() / sd.array();

    // multinomial logistic regression, full-batch Adam, cosine decay
    MatX<float> w = MatX<float>::Zero(classes, dim);
    ArrayX<float> b = ArrayX<float>::Zero(classes);
    MatX<float> mw = w, vw = w;
    ArrayX<float> mb = b, vb = b;
    const float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      MatX<float> logits = x * w.transpose();
      logits.rowwise() += b.matrix().transpose();
      // softmax rows, then gradient (p - onehot)/n
      for (int i = 0; i < fold_n; ++i) {
        const float mx = logits.row(i).maxCoeff();
        ArrayX<float> e = (logits.row(i).array() - mx).exp();
        logits.row(i) = (e / e.sum()).matrix();
      }
      for (int i = 0; i < fold_n; ++i) logits(i, y[static_cast<std::size_t>(i)]) -= 1.0f;
      logits /= static_cast<float>(fold_n);
      MatX<float> gw = logits.transpose() * x;
      ArrayX<float> gb = logits.colwise().sum().array();

      const float sched =
          0.5f * (1.0f + std::cos(3.14159265f * epoch / std::max(1, cfg.epochs)));
      const float lr = cfg.lr * sched;
      const float t = static_cast<float>(epoch + 1);
      const float c1 = 1.0f - std::pow(beta1, t), c2 = 1.0f - std::pow(beta2, t);
      mw = beta1 * mw + (1.0f - beta1) * gw;
      vw = beta2 * vw.array().matrix() + (1.0f - beta2) * gw.array().square().matrix();
      w -= (lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps)).matrix();
      mb = beta1 * mb + (1.0f - beta1) * gb;
      vb = beta2 * vb + (1.0f - beta2) * gb.square();
      b -= lr * (mb / c1) / ((vb / c2).sqrt() + eps);
    }
    result.fold_accuracy.push_back(probe_accuracy(w, b, xt, test_labels));
  }
  float mean = 0.0f;
  for (float a : result.fold_accuracy) mean += a;
  mean /= static_cast<float>(result.fold_accuracy.size());
  float var = 0.0f;
  for (float a : result.fold_accuracy) var += (a - mean) * (a - mean);
  var /= static_cast<float>(result.fold_accuracy.size());
  result.mean = mean;
  result.sd = std::sqrt(var);
  return result;
}

// ---------------------------------------------------------------------------
// Nearest neighbors
// ---------------------------------------------------------------------------

std::vector<int> nearest_neighbors(const MatX<float>& features, int query_index, int k) {
  const int n = static_cast<int>(features.rows());
  if (query_index < 0 || query_index >= n)
    throw TrainError("nearest_neighbors: query index out of range");
  if (k >= n) throw TrainError("nearest_neighbors: k must be smaller than the row count");
  ArrayX<float> norms(n);
  for (int i = 0; i < n; ++i) norms[i] = features.row(i).norm();
  std::vector<std::pair<float, int>> scored;
  scored.reserve(static_cast<std::size_t>(n) - 1);
  for (int i = 0; i < n; ++i) {
    if (i == query_index) continue;
    float sim = 0.0f;
    if (norms[i] > 0.0f && norms[query_index] > 0.0f)
      sim = features.row(i).dot(features.row(query_index)) / (norms[i] * norms[query_index]);
    scored.emplace_back(sim, i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

namespace {

struct Experiment {
  std::string id;
  std::string delta;
  const char* key;
  const char* value;
};

const std::vector<Experiment>& experiment_table() {
  static const std::vector<Experiment> table = {
      {"a", "input image as real", "real_input_images", "true"},
      {"b", "local repair stack", "local_repair", "true"},
      {"c", "dropping rate = 0.1", "theta", "0.1"},
      {"d", "dropping rate = 0.3", "theta", "0.3"},
      {"e", "dropping rate = 0.7", "theta", "0.7"},
      {"f", "dropping rate = 0.9", "theta", "0.9"},
      {"g", "without mask prediction", "mask_prediction", "false"},
      {"h", "3x3 encoder convolutions", "encoder_3x3", "true"},
      {"i", "no gating in repair layers", "gated_repair", "false"},
      {"j", "no history of corrupted examples", "history_buffer", "false"},
      {"k", "no repair network", "repair_network", "false"},
      {"l", "plain GAN instead of damage & repair", "gan_baseline", "true"},
  };
  return table;
}

}  // namespace

std::string AblationReport::table() const {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-10s %-38s %7s %9s %8s %s\n", "id", "delta", "theta",
                "accuracy", "sd", "seed");
  out += buf;
  out += std::string(84, '-') + "\n";
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-10s %-38s %7.2f %8.2f%% %8.4f %llu\n", r.id.c_str(),
                  r.delta.c_str(), static_cast<double>(r.theta),
                  static_cast<double>(100.0f * r.accuracy), static_cast<double>(r.sd),
                  static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

std::string AblationReport::records() const {
  std::string out;
  char buf[300];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "{\"id\":\"%s\",\"delta\":\"%s\",\"theta\":%.4g,\"accuracy\":%.6g,"
                  "\"sd\":%.6g,\"seed\":%llu}\n",
                  r.id.c_str(), r.delta.c_str(), static_cast<double>(r.theta),
                  static_cast<double>(r.accuracy), static_cast<double>(r.sd),
                  static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

AblationReport run_ablation(const RunConfig& base, const std::vector<std::string>& experiments,
                            MetricsWriter* metrics) {
  const TrainConfig base_cfg = TrainConfig::from_run_config(base);
  const ProbeConfig probe_cfg = ProbeConfig::from_run_config(base);
  const ImageDataset train = ImageDataset::load(base.get("dataset"));
  const std::string eval_path = base.get("eval_dataset");
  const ImageDataset test = eval_path.empty() ? train : ImageDataset::load(eval_path);

  std::vector<int> train_labels, test_labels;
  for (int i = 0; i < train.count(); ++i) train_labels.push_back(train.label(i));
  for (int i = 0; i < test.count(); ++i) test_labels.push_back(test.label(i));

  // variants with the same encoder share a pretrained autoencoder
  std::map<std::string, CheckpointBundle> ae_cache;
  auto pretrained = [&](const TrainConfig& cfg) -> const CheckpointBundle& {
    const std::string key = cfg.encoder_spec + "|" + (cfg.encoder_3x3 ? "3x3" : "2x2");
    auto it = ae_cache.find(key);
    if (it == ae_cache.end())
      it = ae_cache.emplace(key, pretrain_autoencoder(train, cfg, metrics)).first;
    return it->second;
  };

  auto run_one = [&](const std::string& id, const std::string& delta,
                     const RunConfig& rc) -> AblationRow {
    const TrainConfig cfg = TrainConfig::from_run_config(rc);
    CheckpointBundle adv = train_adversarial(train, pretrained(cfg), cfg, metrics);
    Models m = models_from_checkpoint(adv);
    const MatX<float> train_f = extract_features(m.disc, train, probe_cfg);
    const MatX<float> test_f = extract_features(m.disc, test, probe_cfg);
    const ProbeResult pr = linear_probe(train_f, train_labels, test_f, test_labels, probe_cfg);
    AblationRow row;
    row.id = id;
    row.delta = delta;
    row.theta = cfg.theta;
    row.accuracy = pr.mean;
    row.sd = pr.sd;
    row.seed = cfg.seed;
    return row;
  };

  AblationReport report;
  report.rows.push_back(
      run_one("baseline", "dropping rate = " + std::to_string(base_cfg.theta), base));
  for (const std::string& id : experiments) {
    RunConfig rc = base;
    std::string delta;
    if (id.rfind("theta=", 0) == 0) {
      rc.set("theta", id.substr(6));
      delta = "dropping rate = " + id.substr(6);
    } else {
      const auto& table = experiment_table();
      const auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Experiment& e) { return e.id == id; });
      if (it == table.end())
        throw TrainError("unknown ablation experiment '" + id +
                         "' (expected a..l or theta=<value>)");
      delta = it->delta;
      rc.set(it->key, it->value);
    }
    report.rows.push_back(run_one(id, delta, rc));
  }
  return report;
}

}  // namespace spot
