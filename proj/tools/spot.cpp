// spot — damage & repair self-supervised feature learning, end to end:
// autoencoder pretraining, adversarial repair-vs-discriminator training,
// linear-probe evaluation, ablations, receptive-field analysis, rendering.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "spot/evaluation.hpp"
#include "spot/render.hpp"
#include "spot/synthetic.hpp"
#include "spot/training.hpp"

namespace {

using namespace spot;

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig rc = RunConfig::parse_file(path);
  for (const std::string& kv : overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got \"" + kv + "\"");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return rc;
}

void print_resolved(const RunConfig& rc) {
  std::cout << "# resolved config (fingerprint " << rc.fingerprint() << ")\n"
            << rc.resolved_text() << std::flush;
}

void check_fingerprint(const CheckpointBundle& bundle, const RunConfig& rc, bool allow,
                       const std::string& what) {
  if (bundle.fingerprint == 0 || bundle.fingerprint == rc.fingerprint()) return;
  if (allow) {
    std::cerr << "warning: " << what << " config fingerprint " << bundle.fingerprint
              << " differs from this run's " << rc.fingerprint() << " (override in effect)\n";
    return;
  }
  throw TrainError(what + " was produced under a different config (fingerprint " +
                   std::to_string(bundle.fingerprint) + " vs " +
                   std::to_string(rc.fingerprint()) +
                   "); pass --allow-config-mismatch to proceed");
}

int cmd_pretrain(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig rc = load_config(config_path, overrides);
  print_resolved(rc);
  TrainConfig cfg = TrainConfig::from_run_config(rc);
  const ImageDataset data = ImageDataset::load(rc.get("dataset"));
  MetricsWriter metrics(rc.get("metrics"));
  CheckpointBundle out = pretrain_autoencoder(data, cfg, &metrics, rc.get("out"));
  std::cout << "autoencoder checkpoint written to " << rc.get("out") << " after " << out.epoch
            << " epochs\n";
  if (const TensorF* curve = out.find("ae.loss_curve"))
    std::cout << "final reconstruction loss " << curve->values()[curve->size() - 1] << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& ae_path,
              const std::string& resume_path, bool allow_mismatch,
              const std::vector<std::string>& overrides) {
  RunConfig rc = load_config(config_path, overrides);
  print_resolved(rc);
  TrainConfig cfg = TrainConfig::from_run_config(rc);
  const ImageDataset data = ImageDataset::load(rc.get("dataset"));
  ImageDataset eval_data;
  const bool has_eval = !rc.get("eval_dataset").empty();
  if (has_eval) eval_data = ImageDataset::load(rc.get("eval_dataset"));
  const CheckpointBundle ae = CheckpointBundle::load(ae_path);
  check_fingerprint(ae, rc, allow_mismatch, "autoencoder checkpoint");
  CheckpointBundle resume;
  const bool has_resume = !resume_path.empty();
  if (has_resume) {
    resume = CheckpointBundle::load(resume_path);
    check_fingerprint(resume, rc, allow_mismatch, "resume checkpoint");
  }
  MetricsWriter metrics(rc.get("metrics"));
  CheckpointBundle out =
      train_adversarial(data, ae, cfg, &metrics, has_eval ? &eval_data : nullptr, rc.get("out"),
                        has_resume ? &resume : nullptr);
  std::cout << "adversarial checkpoint written to " << rc.get("out") << " after " << out.epoch
            << " epochs (" << out.step << " steps)\n";
  return 0;
}

int cmd_eval_probe(const std::string& ckpt_path, const std::string& dataset_path,
                   const std::string& eval_path, int layer, int target_dim) {
  const CheckpointBundle bundle = CheckpointBundle::load(ckpt_path);
  Models m = models_from_checkpoint(bundle);
  RunConfig rc = RunConfig::parse_text(bundle.config_text, "<checkpoint>");
  ProbeConfig pc = ProbeConfig::from_run_config(rc);
  if (layer > 0) pc.layer = layer;
  if (target_dim > 0) pc.target_dim = target_dim;

  const ImageDataset train = ImageDataset::load(dataset_path);
  const ImageDataset test = eval_path.empty() ? train : ImageDataset::load(eval_path);
  std::vector<int> train_labels, test_labels;
  for (int i = 0; i < train.count(); ++i) train_labels.push_back(train.label(i));
  for (int i = 0; i < test.count(); ++i) test_labels.push_back(test.label(i));

  const MatX<float> train_f = extract_features(m.disc, train, pc);
  const MatX<float> test_f = extract_features(m.disc, test, pc);
  std::cout << "probe layer conv" << pc.layer << ", feature dim " << train_f.cols() << ", "
            << pc.folds << " folds, seed " << pc.seed << "\n";
  const ProbeResult pr = linear_probe(train_f, train_labels, test_f, test_labels, pc);
  for (std::size_t i = 0; i < pr.fold_accuracy.size(); ++i)
    std::printf("fold %zu: %.2f%%\n", i, 100.0 * pr.fold_accuracy[i]);
  std::printf("accuracy %.2f%% +- %.2f\n", 100.0 * pr.mean, 100.0 * pr.sd);
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& experiments_csv,
               const std::string& table_path, const std::string& records_path,
               const std::vector<std::string>& overrides) {
  RunConfig rc = load_config(config_path, overrides);
  print_resolved(rc);
  std::vector<std::string> ids;
  std::string cur;
  for (char c : experiments_csv) {
    if (c == ',') {
      if (!cur.empty()) ids.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) ids.push_back(cur);
  MetricsWriter metrics(rc.get("metrics"));
  const AblationReport report = run_ablation(rc, ids, &metrics);
  std::cout << report.table();
  auto dump = [](const std::string& path, const std::string& text) {
    if (path.empty()) return;
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write report file: " + path);
    std::fputs(text.c_str(), f);
    std::fclose(f);
  };
  dump(table_path, report.table());
  dump(records_path, report.records());
  return 0;
}

int cmd_render(const std::string& ckpt_path, const std::string& mode_name,
               const std::string& out_path, const std::string& dataset_override, int count) {
  const CheckpointBundle bundle = CheckpointBundle::load(ckpt_path);
  Models m = models_from_checkpoint(bundle);
  RunConfig rc = RunConfig::parse_text(bundle.config_text, "<checkpoint>");
  TrainConfig cfg = TrainConfig::from_run_config(rc);

  RepairMode mode;
  RepairNet* rep = &m.rep;
  if (mode_name == "full") {
    mode = RepairMode::Full;
  } else if (mode_name == "no-repair") {
    mode = RepairMode::NoRepair;
  } else if (mode_name == "ungated") {
    mode = RepairMode::Ungated;
  } else if (mode_name == "double-pass") {
    mode = RepairMode::DoublePass;
  } else {
    throw ConfigError("unknown render mode '" + mode_name +
                      "' (expected full, no-repair, ungated or double-pass)");
  }

  const std::string data_path = dataset_override.empty() ? rc.get("dataset") : dataset_override;
  const ImageDataset data = ImageDataset::load(data_path);
  count = std::min(count, data.count());
  if (count < 1) throw TrainError("render: dataset is empty");

  std::vector<int> idx;
  for (int i = 0; i < count; ++i) idx.push_back(i);
  TensorF x = data.batch(idx);
  TensorF real = forward_autoencode(m.enc, m.dec, x, false);

  CorruptionConfig cc{cfg.theta, cfg.replacement, cfg.noise_scale};
  Rng rng = Rng::derive(cfg.seed, {stream::kEval, 0xBEEF});
  std::vector<MaskGrid> masks;
  for (int i = 0; i < count; ++i) masks.push_back(sample_mask(m.mask_h(), m.mask_w(), cc, rng));
  RepairForwardOpts opts;
  opts.mode = mode;
  TensorF corrupt = forward_damage_repair(m.enc, m.dec, rep, x, masks, cc, opts, &rng);

  // top row: replicated real images with mask insets; bottom row: corrupt
  std::vector<ArrayX<float>> cells;
  std::vector<BorderTag> tags;
  std::vector<const MaskGrid*> insets;
  const Eigen::Index plane = real.size() / count;
  for (int i = 0; i < count; ++i) {
    cells.push_back(real.values().segment(i * plane, plane));
    tags.push_back(BorderTag::Real);
    insets.push_back(&masks[static_cast<std::size_t>(i)]);
  }
  for (int i = 0; i < count; ++i) {
    cells.push_back(corrupt.values().segment(i * plane, plane));
    tags.push_back(BorderTag::Corrupt);
    insets.push_back(nullptr);
  }
  const RgbImage grid = render_grid(cells, data.channels(), data.height(), data.width(), 2,
                                    count, tags, insets);
  ppm_write(out_path, grid);
  std::cout << "wrote " << out_path << " (" << grid.width << "x" << grid.height << ", mode "
            << mode_name << ", theta " << cfg.theta << ")\n";
  return 0;
}

int cmd_rf_analyze(const std::string& spec_text) {
  const NetworkSpec spec = parse_conv_stack(spec_text);
  const RFSummary rf = receptive_field(spec);
  std::printf("rf=%d stride=%d overlap=%d\n", rf.receptive_field, rf.effective_stride,
              rf.overlap);
  std::printf("# overlap counts pixels shared by adjacent feature entries: rf(%d) - stride(%d) "
              "= %d\n",
              rf.receptive_field, rf.effective_stride, rf.overlap);
  if (rf.overlap > rf.effective_stride)
    std::printf("# note: overlap exceeds the stride, so each pixel feeds several entries; "
                "figures quoting a smaller overlap for this stack usually subtract a reference "
                "receptive field instead of the stride\n");
  return 0;
}

int cmd_make_synthetic(const std::string& out_path, int n, int classes, int size,
                       std::uint64_t seed) {
  const ImageDataset ds = make_synthetic_shapes(n, classes, size, seed);
  ds.save(out_path);
  std::cout << "wrote " << out_path << " (" << n << " images, " << classes << " classes, "
            << size << "x" << size << ", seed " << seed << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"damage & repair self-supervised feature learning"};
  app.require_subcommand(1);

  std::string config_path, ae_path, resume_path, ckpt_path, dataset_path, eval_path;
  std::string out_path, mode_name = "full", spec_text, experiments, table_path, records_path;
  std::vector<std::string> overrides;
  bool allow_mismatch = false;
  int layer = 0, target_dim = 0, count = 5, n = 500, classes = 3, size = 32;
  std::uint64_t seed = 1;

  CLI::App* pre = app.add_subcommand("pretrain-ae", "pretrain the autoencoder");
  pre->add_option("--config", config_path, "run config file")->required();
  pre->add_option("--set", overrides, "override config keys (key=value)");

  CLI::App* train = app.add_subcommand("train", "adversarial repair-vs-discriminator phase");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--ae", ae_path, "pretrained autoencoder checkpoint")->required();
  train->add_option("--resume", resume_path, "resume from a mid-run checkpoint");
  train->add_flag("--allow-config-mismatch", allow_mismatch,
                  "accept checkpoints with a different config fingerprint");
  train->add_option("--set", overrides, "override config keys (key=value)");

  CLI::App* probe = app.add_subcommand("eval-probe", "linear probe on frozen conv features");
  probe->add_option("--ckpt", ckpt_path, "trained checkpoint")->required();
  probe->add_option("--dataset", dataset_path, "labeled probe training set")->required();
  probe->add_option("--eval-dataset", eval_path, "held-out evaluation set");
  probe->add_option("--layer", layer, "trunk conv layer (1-based)");
  probe->add_option("--target-dim", target_dim, "flattened feature size target");

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation harness");
  ablate->add_option("--config", config_path, "run config file")->required();
  ablate->add_option("--experiments", experiments, "comma-separated ids (a..l, theta=<v>)");
  ablate->add_option("--out-table", table_path, "write the aligned text table here");
  ablate->add_option("--out-records", records_path, "write line-delimited records here");
  ablate->add_option("--set", overrides, "override config keys (key=value)");

  CLI::App* render = app.add_subcommand("render", "emit real/corrupt comparison panels");
  render->add_option("--ckpt", ckpt_path, "trained checkpoint")->required();
  render->add_option("--mode", mode_name, "full | no-repair | ungated | double-pass");
  render->add_option("--out", out_path, "output PPM path")->required();
  render->add_option("--dataset", dataset_path, "dataset override");
  render->add_option("--count", count, "images per row");

  CLI::App* rf = app.add_subcommand("rf-analyze", "receptive field of a conv stack");
  rf->add_option("--spec", spec_text, "conv stack, e.g. \"(32)3c1-(64)2c2\"")->required();

  CLI::App* synth = app.add_subcommand("make-synthetic", "generate the shapes dataset");
  synth->add_option("--out", out_path, "output dataset path")->required();
  synth->add_option("--n", n, "image count");
  synth->add_option("--classes", classes, "shape classes (2..10)");
  synth->add_option("--size", size, "image size (32 or 64)");
  synth->add_option("--seed", seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(config_path, overrides);
    if (train->parsed()) return cmd_train(config_path, ae_path, resume_path, allow_mismatch,
                                          overrides);
    if (probe->parsed()) return cmd_eval_probe(ckpt_path, dataset_path, eval_path, layer,
                                               target_dim);
    if (ablate->parsed()) return cmd_ablate(config_path, experiments, table_path, records_path,
                                            overrides);
    if (render->parsed()) return cmd_render(ckpt_path, mode_name, out_path, dataset_path, count);
    if (rf->parsed()) return cmd_rf_analyze(spec_text);
    if (synth->parsed()) return cmd_make_synthetic(out_path, n, classes, size, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
