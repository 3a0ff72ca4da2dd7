// Integration acceptance suite: each criterion prints one PASS/FAIL line.
// Run everything, or a single criterion with --criterion N. Criteria that
// drive the command-line tool need --cli <path-to-binary>.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "spot/evaluation.hpp"
#include "spot/render.hpp"
#include "spot/synthetic.hpp"
#include "spot/training.hpp"

using namespace spot;
using namespace spot::testing;

namespace {

std::string g_cli;  // path to the CLI binary

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string out_path = "acc_cli_out.txt";
  const std::string cmd = "\"" + g_cli + "\" " + args + " > " + out_path + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(out_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

// -------------------------------------------------------------------------
// 1. gradient suite
// -------------------------------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst = 0.0;
  int instances = 0;
  std::string worst_op = "-";
  auto track = [&](const std::string& op, const GradCheckResult& r) {
    ++instances;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_op = op;
    }
  };
  auto shifted = [&](Eigen::Index n, double margin) {
    ArrayX<double> a = random_array(n, rng);
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::fabs(a[i]) < margin) a[i] = a[i] < 0 ? -margin : margin;
    return a;
  };

  constexpr int kInstances = 20;
  for (int t = 0; t < kInstances; ++t) {
    const int cin = 1 + rng.uniform_int(3), cout = 1 + rng.uniform_int(3);
    const int size = 4 + rng.uniform_int(4), kernel = 1 + rng.uniform_int(3);
    const int stride = 1 + rng.uniform_int(2);
    const Padding pad = rng.bernoulli(0.5) ? Padding::Same : Padding::Valid;
    if (pad == Padding::Valid && kernel > size) continue;
    auto conv_fn = [&](std::vector<TensorD>& p) {
      return mean_all(conv2d(p[0], p[1], p[2], stride, pad));
    };
    track("conv2d",
          gradcheck(conv_fn,
                    {{Shape{1, cin, size, size}, random_array(cin * size * size, rng)},
                     {Shape{cout, cin, kernel, kernel},
                      random_array(cout * cin * kernel * kernel, rng, 0.5)},
                     {Shape{cout}, random_array(cout, rng, 0.2)}},
                    1e-3, 25));

    const int rh = 2 + rng.uniform_int(5), rw = 2 + rng.uniform_int(5);
    const int oh = 1 + rng.uniform_int(8), ow = 1 + rng.uniform_int(8);
    auto resize_fn = [&](std::vector<TensorD>& p) {
      TensorD y = resize_bilinear(p[0], oh, ow);
      return mean_all(mul(y, y));
    };
    track("resize_bilinear",
          gradcheck(resize_fn, {{Shape{1, 2, rh, rw}, random_array(2 * rh * rw, rng)}}, 1e-3,
                    25));

    const int uh = 1 + rng.uniform_int(4), uf = 1 + rng.uniform_int(3);
    auto up_fn = [&](std::vector<TensorD>& p) {
      TensorD y = upsample_nearest(p[0], uh * uf, uh * uf);
      return mean_all(mul(y, y));
    };
    track("upsample_nearest",
          gradcheck(up_fn, {{Shape{1, 2, uh, uh}, random_array(2 * uh * uh, rng)}}, 1e-3, 25));

    const int ph = 2 + rng.uniform_int(5);
    auto pool_fn = [&](std::vector<TensorD>& p) {
      TensorD y = avg_pool3(p[0]);
      return mean_all(mul(y, y));
    };
    track("avg_pool3",
          gradcheck(pool_fn, {{Shape{2, 1, ph, ph}, random_array(2 * ph * ph, rng)}}, 1e-3, 25));

    const bool train_mode = rng.bernoulli(0.5);
    auto bn_fn = [&](std::vector<TensorD>& p) {
      auto st = BatchNormState<double>::create(2);
      st.gamma = p[1];
      st.beta = p[2];
      st.running_mean = ArrayX<double>::Constant(2, 0.3);
      st.running_var = ArrayX<double>::Constant(2, 1.4);
      TensorD y = batch_norm(p[0], st, train_mode);
      return mean_all(mul(y, y));
    };
    track("batch_norm", gradcheck(bn_fn,
                                  {{Shape{3, 2, 2, 2}, random_array(24, rng)},
                                   {Shape{2}, random_array(2, rng, 0.4)},
                                   {Shape{2}, random_array(2, rng, 0.4)}},
                                  1e-3, 25));

    for (Act kind : {Act::LeakyRelu01, Act::Relu, Act::Sigmoid}) {
      auto act_fn = [kind](std::vector<TensorD>& p) {
        TensorD y = activation(p[0], kind);
        return mean_all(mul(y, y));
      };
      track("activation", gradcheck(act_fn, {{Shape{2, 2, 2, 2}, shifted(16, 0.05)}}, 1e-3, 25));
    }

    const int din = 2 + rng.uniform_int(5), dout = 1 + rng.uniform_int(4);
    auto dense_fn = [&](std::vector<TensorD>& p) {
      TensorD y = dense(p[0], p[1], p[2]);
      return mean_all(mul(y, y));
    };
    track("dense", gradcheck(dense_fn,
                             {{Shape{2, din}, random_array(2 * din, rng)},
                              {Shape{dout, din}, random_array(dout * din, rng, 0.5)},
                              {Shape{dout}, random_array(dout, rng, 0.2)}},
                             1e-3, 25));

    // corrupt_feature through kept and averaged paths
    CorruptionConfig cc;
    cc.theta = 0.5f;
    Rng mask_rng = rng.split(t);
    const MaskGrid mask = sample_mask(4, 4, cc, mask_rng);
    auto corrupt_fn = [&](std::vector<TensorD>& p) {
      TensorD y = corrupt_feature(p[0], std::vector<MaskGrid>{mask}, cc);
      return mean_all(mul(y, y));
    };
    track("corrupt_feature",
          gradcheck(corrupt_fn, {{Shape{1, 2, 4, 4}, random_array(32, rng)}}, 1e-3, 25));

    // losses
    auto auto_fn = [&](std::vector<TensorD>& p) {
      return loss_auto(p[0], TensorD::zeros(Shape{2, 2, 2, 2}));
    };
    track("loss_auto", gradcheck(auto_fn, {{Shape{2, 2, 2, 2}, random_array(16, rng)}}, 1e-3,
                                 25));
    auto disc_fn = [](std::vector<TensorD>& p) {
      return loss_discriminator_class(p[0], p[1]);
    };
    track("loss_discriminator_class",
          gradcheck(disc_fn, {{Shape{4, 1}, random_array(4, rng, 2.0)},
                              {Shape{4, 1}, random_array(4, rng, 2.0)}},
                    1e-3, 25));
    for (RepairLossVariant v :
         {RepairLossVariant::Saturating, RepairLossVariant::NonSaturating}) {
      auto rep_fn = [v](std::vector<TensorD>& p) { return loss_repair_class(p[0], v); };
      track("loss_repair_class",
            gradcheck(rep_fn, {{Shape{4, 1}, random_array(4, rng, 2.0)}}, 1e-3, 25));
    }
    auto mask_fn = [&](std::vector<TensorD>& p) { return loss_mask(p[0], mask); };
    track("loss_mask", gradcheck(mask_fn, {{Shape{1, 1, 4, 4}, random_array(16, rng, 2.0)}},
                                 1e-3, 25));

    // structural ops
    ArrayX<double> keep(8);
    for (Eigen::Index i = 0; i < 8; ++i) keep[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    auto structural_fn = [&](std::vector<TensorD>& p) {
      TensorD w = where_mask(keep, p[0], p[1]);
      TensorD gAdd = gated_add(w, p[1], keep);
      TensorD cat = concat_channels(gAdd, p[0]);
      TensorD r = reshape(scale(add(cat, cat), 0.5), Shape{1, 16});
      return add(mean_all(mul(r, r)), scale(sum_all(sub(p[0], p[1])), 0.01));
    };
    track("structural",
          gradcheck(structural_fn, {{Shape{1, 2, 2, 2}, random_array(8, rng)},
                                    {Shape{1, 2, 2, 2}, random_array(8, rng)}},
                    1e-3, 25));
  }

  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = worst < 1e-3 && elapsed < 60.0;
  o.detail = std::to_string(instances) + " instances, max rel err " + fmt("%.2e", worst) +
             " (" + worst_op + "), " + fmt("%.1fs", elapsed);
  return o;
}

// -------------------------------------------------------------------------
// 2. gating identity
// -------------------------------------------------------------------------

Outcome criterion_gating() {
  RunConfig rc;
  rc.set("seed", "2002");
  const TrainConfig cfg = TrainConfig::from_run_config(rc);
  Models m = Models::build(cfg);
  Rng rng(2003);
  CorruptionConfig cc;
  cc.theta = 0.5f;

  std::int64_t zero_checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    TensorF x = TensorF::randn(Shape{1, 3, 32, 32}, rng, 0.4f);
    std::vector<MaskGrid> masks{sample_mask(m.mask_h(), m.mask_w(), cc, rng)};
    RepairTrace trace;
    RepairForwardOpts opts;
    forward_damage_repair(m.enc, m.dec, &m.rep, x, masks, cc, opts, nullptr, &trace);
    for (std::size_t s = 0; s < trace.corrections.size(); ++s) {
      const auto& corr = trace.corrections[s].values();
      const auto& keep = trace.keeps[s];
      for (Eigen::Index i = 0; i < corr.size(); ++i)
        if (keep[i] > 0.5f) {
          if (corr[i] != 0.0f)
            return {false, "nonzero correction at a kept site (trial " +
                               std::to_string(trial) + ", stage " + std::to_string(s) + ")"};
          ++zero_checked;
        }
    }
  }

  for (int trial = 0; trial < 50; ++trial) {
    TensorF x = TensorF::randn(Shape{1, 3, 32, 32}, rng, 0.4f);
    TensorF ae = forward_autoencode(m.enc, m.dec, x, false);
    std::vector<MaskGrid> masks{MaskGrid::ones(m.mask_h(), m.mask_w())};
    RepairForwardOpts opts;
    TensorF out = forward_damage_repair(m.enc, m.dec, &m.rep, x, masks, cc, opts);
    for (Eigen::Index i = 0; i < out.size(); ++i)
      if (out.values()[i] != ae.values()[i])
        return {false, "all-ones mask output deviates from the autoencoder at element " +
                           std::to_string(i)};
  }
  return {true, "50 masked trials (" + std::to_string(zero_checked) +
                    " kept sites exactly zero) + 50 bit-identical all-ones passes"};
}

// -------------------------------------------------------------------------
// 3. receptive field
// -------------------------------------------------------------------------

Outcome criterion_receptive_field() {
  std::string out;
  if (run_cli("rf-analyze --spec \"(32)3c1-(64)2c2-(128)2c2-(256)2c2-(512)2c2\"", &out) != 0)
    return {false, "rf-analyze exited nonzero"};
  if (out.find("rf=18 stride=16 overlap=2") == std::string::npos)
    return {false, "paper encoder: expected rf=18 stride=16 overlap=2, got: " + out};

  if (run_cli("rf-analyze --spec \"(32)3c1-(64)3c2-(128)3c2-(256)3c2-(512)3c2\"", &out) != 0)
    return {false, "rf-analyze exited nonzero on the 3x3 stack"};
  if (out.find("rf=33 stride=16 overlap=17") == std::string::npos)
    return {false, "3x3 encoder: expected rf=33 stride=16 overlap=17, got: " + out};
  if (out.find("overlap") == std::string::npos || out.find("#") == std::string::npos)
    return {false, "3x3 encoder output lacks the overlap-accounting note"};

  // empirical perturbation test on a thin built encoder (pattern identical,
  // 48x48 canvas so an interior column's patch avoids the borders)
  Rng rng(3001);
  Encoder enc = build_encoder(parse_conv_stack("(4)3c1-(4)2c2-(4)2c2-(4)2c2-(4)2c2"), 1, rng);
  TensorF x = TensorF::randn(Shape{1, 1, 48, 48}, rng, 0.5f);
  const TensorF base = enc.forward(x, false);
  const int cols = base.shape().w();

  auto col_hit = [&](int px, int col) {
    ArrayX<float> bumped = x.values();
    bumped[24 * 48 + px] += 2.0f;
    const TensorF probe = enc.forward(TensorF::from_array(x.shape(), bumped), false);
    for (int c = 0; c < base.shape().c(); ++c)
      for (int y = 0; y < base.shape().h(); ++y) {
        const Eigen::Index at =
            (static_cast<Eigen::Index>(c) * base.shape().h() + y) * cols + col;
        if (probe.values()[at] != base.values()[at]) return true;
      }
    return false;
  };

  auto span_of = [&](int col) {
    int lo = -1, hi = -1;
    for (int px = 0; px < 48; ++px)
      if (col_hit(px, col)) {
        if (lo < 0) lo = px;
        hi = px;
      }
    return std::make_pair(lo, hi);
  };
  const auto [lo1, hi1] = span_of(1);
  const auto [lo2, hi2] = span_of(2);
  const int rf_measured = hi1 - lo1 + 1;
  const int stride_measured = lo2 - lo1;
  if (std::abs(rf_measured - 18) > 1)
    return {false, "empirical receptive field " + std::to_string(rf_measured) + " vs 18"};
  if (std::abs(stride_measured - 16) > 1)
    return {false, "empirical stride " + std::to_string(stride_measured) + " vs 16"};

  // exit-code contract: missing flag = usage (1), bad spec = runtime (2)
  if (run_cli("rf-analyze", &out) != 1)
    return {false, "missing --spec should exit 1 (usage error)"};
  if (run_cli("rf-analyze --spec \"not-a-stack\"", &out) != 2)
    return {false, "malformed spec should exit 2 (runtime failure)"};
  return {true, "analytic (18,16,2) and (33,16,17) with note; measured rf " +
                    std::to_string(rf_measured) + ", stride " + std::to_string(stride_measured)};
}

// -------------------------------------------------------------------------
// 4. mask statistics
// -------------------------------------------------------------------------

Outcome criterion_mask_statistics() {
  Rng rng(4001);
  std::string detail;
  for (float theta : {0.3f, 0.5f, 0.7f}) {
    CorruptionConfig cc;
    cc.theta = theta;
    std::int64_t dropped = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) dropped += sample_mask(8, 8, cc, rng).dropped_count();
    const double frac = static_cast<double>(dropped) / (trials * 64.0);
    const double sigma = std::sqrt(theta * (1.0 - theta) / (trials * 64.0));
    if (std::fabs(frac - theta) >= 3.0 * sigma)
      return {false, "theta " + fmt("%.1f", theta) + ": empirical " + fmt("%.4f", frac) +
                         " outside 3 sigma"};
    detail += fmt("%.1f", theta) + "->" + fmt("%.4f ", frac);
  }
  return {true, "drop fractions " + detail + "all within 3 sigma of theta (10000 masks each)"};
}

// -------------------------------------------------------------------------
// 5. autoencoder overfit
// -------------------------------------------------------------------------

Outcome criterion_ae_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const ImageDataset data = make_synthetic_shapes(16, 3, 32, 5001);

  RunConfig rc;
  rc.set("seed", "5002");
  rc.set("batch_size", "16");
  TrainConfig cfg = TrainConfig::from_run_config(rc);

  // batch == dataset, so one step per epoch; train in chunks and stop as
  // soon as the inference-mode reconstruction beats the bar
  const int chunk = 100, max_steps = 2000;
  CheckpointBundle bundle;
  double mse = 1e9;
  int steps = 0;
  while (steps < max_steps) {
    cfg.ae_epochs = std::min(steps + chunk, max_steps);
    bundle = pretrain_autoencoder(data, cfg, nullptr, "", steps == 0 ? nullptr : &bundle);
    steps = static_cast<int>(bundle.step);

    Models m = models_from_checkpoint(bundle);
    TensorF x = data.batch(data.all_indices());
    TensorF x_hat = forward_autoencode(m.enc, m.dec, x, false);
    mse = loss_auto(x_hat, x).item();
    if (mse < 0.01) break;
  }
  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = mse < 0.01 && steps <= max_steps && elapsed < 300.0;
  o.detail = "per-pixel MSE " + fmt("%.5f", mse) + " after " + std::to_string(steps) +
             " steps, " + fmt("%.0fs", elapsed);
  return o;
}

// -------------------------------------------------------------------------
// 6. adversarial smoke
// -------------------------------------------------------------------------

Outcome criterion_adversarial_smoke() {
  const auto t0 = std::chrono::steady_clock::now();
  const ImageDataset train = make_synthetic_shapes(500, 3, 32, 6001);
  const ImageDataset heldout = make_synthetic_shapes(200, 3, 32, 6002);

  RunConfig rc;
  rc.set("seed", "6003");
  rc.set("theta", "0.5");
  rc.set("ae_epochs", "40");
  rc.set("adv_epochs", "30");
  TrainConfig cfg = TrainConfig::from_run_config(rc);
  CheckpointBundle ae = pretrain_autoencoder(train, cfg);

  {
    MetricsWriter mw("acc_smoke.jsonl");
    train_adversarial(train, ae, cfg, &mw, &heldout);
  }
  // one held-out evaluation line per epoch
  float class_acc = 0.0f, mask_acc = 0.0f, pass_class = 0.0f, pass_mask = 0.0f;
  int pass_epoch = -1, epoch = -1;
  std::ifstream in("acc_smoke.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.find("\"eval\"") == std::string::npos) continue;
    ++epoch;
    const std::size_t c = line.find("\"class_acc\":"), m = line.find("\"mask_acc\":");
    if (c == std::string::npos || m == std::string::npos) continue;
    class_acc = static_cast<float>(std::atof(line.c_str() + c + 12));
    mask_acc = static_cast<float>(std::atof(line.c_str() + m + 11));
    if (pass_epoch < 0 && class_acc >= 0.75f && mask_acc >= 0.60f) {
      pass_epoch = epoch + 1;
      pass_class = class_acc;
      pass_mask = mask_acc;
    }
  }
  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = pass_epoch > 0 && pass_epoch <= 30 && elapsed < 1800.0;
  if (o.pass)
    o.detail = "held-out class acc " + fmt("%.3f", pass_class) + ", mask acc " +
               fmt("%.3f", pass_mask) + " reached at epoch " + std::to_string(pass_epoch) +
               ", " + fmt("%.0fs", elapsed);
  else
    o.detail = "thresholds not met within 30 epochs (final class acc " +
               fmt("%.3f", class_acc) + ", mask acc " + fmt("%.3f", mask_acc) + "), " +
               fmt("%.0fs", elapsed);
  return o;
}

// -------------------------------------------------------------------------
// 7. transfer rank-order
// -------------------------------------------------------------------------

Outcome criterion_transfer_rank() {
  const ImageDataset train = make_synthetic_shapes(500, 3, 32, 7001);
  const ImageDataset test = make_synthetic_shapes(200, 3, 32, 7002);
  std::vector<int> train_labels, test_labels;
  for (int i = 0; i < train.count(); ++i) train_labels.push_back(train.label(i));
  for (int i = 0; i < test.count(); ++i) test_labels.push_back(test.label(i));

  float trained_sum = 0.0f, random_sum = 0.0f, norepair_sum = 0.0f;
  const std::vector<std::uint64_t> seeds{11, 22, 33};
  for (std::uint64_t seed : seeds) {
    // transfer protocol: dropping rate 0.7, probe on conv4 features
    RunConfig rc;
    rc.set("seed", std::to_string(seed));
    rc.set("theta", "0.7");
    rc.set("ae_epochs", "40");
    rc.set("adv_epochs", "16");
    TrainConfig cfg = TrainConfig::from_run_config(rc);
    ProbeConfig pc = ProbeConfig::from_run_config(rc);

    const CheckpointBundle ae = pretrain_autoencoder(train, cfg);

    auto probe_of = [&](Models& m) {
      const MatX<float> ftr = extract_features(m.disc, train, pc);
      const MatX<float> fte = extract_features(m.disc, test, pc);
      return linear_probe(ftr, train_labels, fte, test_labels, pc).mean;
    };

    CheckpointBundle adv = train_adversarial(train, ae, cfg);
    Models trained = models_from_checkpoint(adv);
    trained_sum += probe_of(trained);

    Models random_init = Models::build(cfg);
    random_sum += probe_of(random_init);

    RunConfig rck = rc;
    rck.set("repair_network", "false");
    const TrainConfig kcfg = TrainConfig::from_run_config(rck);
    CheckpointBundle kadv = train_adversarial(train, ae, kcfg);
    Models norepair = models_from_checkpoint(kadv);
    norepair_sum += probe_of(norepair);
  }
  const float trained = trained_sum / 3.0f, random_acc = random_sum / 3.0f,
              norepair = norepair_sum / 3.0f;
  Outcome o;
  o.pass = trained >= random_acc + 0.05f && trained >= norepair + 0.05f;
  o.detail = "trained " + fmt("%.3f", trained) + " vs random-init " + fmt("%.3f", random_acc) +
             " vs no-repair " + fmt("%.3f", norepair) + " (3-seed means, gaps >= 0.05 required)";
  return o;
}

// -------------------------------------------------------------------------
// 8. ablation harness
// -------------------------------------------------------------------------

Outcome criterion_ablation() {
  const ImageDataset train = make_synthetic_shapes(48, 3, 32, 8001);
  train.save("acc_ablate.imgb");
  std::ofstream cfg("acc_ablate.cfg");
  cfg << "dataset = acc_ablate.imgb\nbatch_size = 8\nae_epochs = 2\nadv_epochs = 2\n"
         "probe_epochs = 20\nprobe_folds = 2\nseed = 8002\n";
  cfg.close();

  const std::string args =
      "ablate --config acc_ablate.cfg --experiments a,g,i,j,k,theta=0.1,theta=0.5,theta=0.7 "
      "--out-records ";
  std::string out1, out2;
  if (run_cli(args + "acc_ablate_1.jsonl", &out1) != 0)
    return {false, "first ablate run exited nonzero: " + out1.substr(0, 400)};
  if (run_cli(args + "acc_ablate_2.jsonl", &out2) != 0)
    return {false, "second ablate run exited nonzero"};

  std::ifstream r1("acc_ablate_1.jsonl"), r2("acc_ablate_2.jsonl");
  std::stringstream s1, s2;
  s1 << r1.rdbuf();
  s2 << r2.rdbuf();
  if (s1.str().empty()) return {false, "ablation records file is empty"};
  if (s1.str() != s2.str())
    return {false, "re-run with recorded seeds did not reproduce the accuracies"};
  int rows = 0;
  for (char c : s1.str()) rows += c == '\n';
  if (rows != 9) return {false, "expected 9 rows (baseline + 8 variants), got " +
                                    std::to_string(rows)};
  return {true, "9 rows over {a,g,i,j,k} + theta {0.1,0.5,0.7}; byte-identical on re-run"};
}

// -------------------------------------------------------------------------
// 9. rendering
// -------------------------------------------------------------------------

Outcome criterion_rendering() {
  // a briefly-trained checkpoint is enough; rendering quality is not scored
  const ImageDataset train = make_synthetic_shapes(32, 3, 32, 9001);
  train.save("acc_render.imgb");
  RunConfig rc;
  rc.set("dataset", "acc_render.imgb");
  rc.set("batch_size", "8");
  rc.set("ae_epochs", "8");
  rc.set("adv_epochs", "2");
  rc.set("seed", "9002");
  rc.set("out", "acc_render.ckpt");
  TrainConfig cfg = TrainConfig::from_run_config(rc);
  CheckpointBundle ae = pretrain_autoencoder(train, cfg);
  train_adversarial(train, ae, cfg, nullptr, nullptr, "acc_render.ckpt");

  const int count = 4;
  for (const char* mode : {"full", "no-repair", "ungated", "double-pass"}) {
    std::string out;
    if (run_cli(std::string("render --ckpt acc_render.ckpt --mode ") + mode + " --out acc_" +
                    mode + ".ppm --count " + std::to_string(count),
                &out) != 0)
      return {false, std::string("render failed for mode ") + mode + ": " + out.substr(0, 300)};
  }
  const RgbImage full = ppm_read("acc_full.ppm");
  const RgbImage norep = ppm_read("acc_no-repair.ppm");
  const RgbImage ungated = ppm_read("acc_ungated.ppm");
  const RgbImage dbl = ppm_read("acc_double-pass.ppm");
  if (full.data.size() != norep.data.size() || full.data.size() != dbl.data.size())
    return {false, "panel geometries differ between modes"};

  // top row (replicated real images) must agree everywhere
  const std::size_t half = full.data.size() / 2;
  for (std::size_t i = 0; i < half; ++i)
    if (full.data[i] != norep.data[i] || full.data[i] != dbl.data[i] ||
        full.data[i] != ungated.data[i])
      return {false, "real-image rows differ between modes"};

  // the masks the render command used, re-derived from the run config
  Rng rng = Rng::derive(cfg.seed, {stream::kEval, 0xBEEF});
  CorruptionConfig cc{cfg.theta, cfg.replacement, cfg.noise_scale};
  std::vector<MaskGrid> masks;
  for (int i = 0; i < count; ++i) masks.push_back(sample_mask(2, 2, cc, rng));

  // bottom row: no-repair must differ from full inside a dropped quadrant
  const int cell = 36, border = 2;  // 32px image + 2px border each side
  auto differs_at_dropped = [&](const RgbImage& a, const RgbImage& b) {
    for (int img = 0; img < count; ++img) {
      const MaskGrid& m = masks[static_cast<std::size_t>(img)];
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          if (m.at(sy, sx) != 0) continue;
          for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
              const int py = cell + border + sy * 16 + y;
              const int px = img * cell + border + sx * 16 + x;
              for (int c = 0; c < 3; ++c)
                if (a.at(py, px, c) != b.at(py, px, c)) return true;
            }
        }
    }
    return false;
  };
  if (!differs_at_dropped(full, norep))
    return {false, "no-repair panel matches full mode at every dropped site"};
  bool dbl_differs = false;
  for (std::size_t i = half; i < full.data.size(); ++i)
    dbl_differs |= full.data[i] != dbl.data[i];
  if (!dbl_differs) return {false, "double-pass panel is identical to the single pass"};
  return {true, "four mode panels written; no-repair differs at dropped sites, double-pass "
                "differs from single-pass"};
}

// -------------------------------------------------------------------------
// 10. persistence
// -------------------------------------------------------------------------

Outcome criterion_persistence() {
  // byte-identical round-trips
  const ImageDataset ds = make_synthetic_shapes(10, 3, 32, 10001);
  ds.save("acc_round.imgb");
  ImageDataset::load("acc_round.imgb").save("acc_round2.imgb");
  {
    std::ifstream a("acc_round.imgb", std::ios::binary), b("acc_round2.imgb", std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    if (sa.str() != sb.str()) return {false, "dataset round-trip is not byte-identical"};
  }

  const ImageDataset train = make_synthetic_shapes(32, 3, 32, 10002);
  RunConfig rc;
  rc.set("seed", "10003");
  rc.set("batch_size", "8");
  rc.set("ae_epochs", "2");
  rc.set("adv_epochs", "4");
  TrainConfig cfg = TrainConfig::from_run_config(rc);
  const CheckpointBundle ae = pretrain_autoencoder(train, cfg);

  // checkpoint round-trip
  ae.save("acc_ae.ckpt");
  CheckpointBundle::load("acc_ae.ckpt").save("acc_ae2.ckpt");
  {
    std::ifstream a("acc_ae.ckpt", std::ios::binary), b("acc_ae2.ckpt", std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    if (sa.str() != sb.str()) return {false, "checkpoint round-trip is not byte-identical"};
  }

  // uninterrupted 4-epoch run vs 2 + resume(2)
  auto losses_of = [&](const std::string& path) {
    std::vector<double> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      const std::size_t at = line.find("\"loss_d\":");
      if (at != std::string::npos) out.push_back(std::atof(line.c_str() + at + 9));
    }
    return out;
  };
  // one uninterrupted 4-epoch run that also drops an epoch-2 snapshot
  {
    MetricsWriter mw("acc_full_run.jsonl");
    TrainConfig snap = cfg;
    snap.checkpoint_every = 2;
    train_adversarial(train, ae, snap, &mw, nullptr, "acc_run.ckpt");
  }
  const CheckpointBundle mid_loaded = CheckpointBundle::load("acc_run.ckpt.epoch2");
  {
    MetricsWriter mw("acc_resumed.jsonl");
    train_adversarial(train, ae, cfg, &mw, nullptr, "", &mid_loaded);
  }
  const std::vector<double> full_losses = losses_of("acc_full_run.jsonl");
  const std::vector<double> resumed = losses_of("acc_resumed.jsonl");
  const std::size_t steps_per_epoch = 4;  // 32 images / batch 8
  const std::size_t first_resumed = 2 * steps_per_epoch;
  if (full_losses.size() != 16 || resumed.size() != 8)
    return {false, "unexpected metrics shape: " + std::to_string(full_losses.size()) + "/" +
                       std::to_string(resumed.size())};
  const double diff = std::fabs(full_losses[first_resumed] - resumed[0]);
  if (diff > 1e-6)
    return {false, "loss at the first resumed step differs by " + fmt("%.2e", diff)};
  double worst = 0.0;
  for (std::size_t i = 0; i < resumed.size(); ++i)
    worst = std::max(worst, std::fabs(full_losses[first_resumed + i] - resumed[i]));
  return {true, "round-trips byte-identical; resumed losses match uninterrupted run (max diff " +
                    fmt("%.2e", worst) + ")"};
}

// -------------------------------------------------------------------------

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) only = std::atoi(argv[++i]);
    if (arg == "--cli" && i + 1 < argc) g_cli = argv[++i];
  }

  const std::vector<Criterion> criteria = {
      {1, "gradient suite vs finite differences", criterion_gradients},
      {2, "gating identity and all-ones equivalence", criterion_gating},
      {3, "receptive-field analysis", criterion_receptive_field},
      {4, "mask drop statistics", criterion_mask_statistics},
      {5, "autoencoder overfit", criterion_ae_overfit},
      {6, "adversarial smoke", criterion_adversarial_smoke},
      {7, "transfer rank-order", criterion_transfer_rank},
      {8, "ablation harness determinism", criterion_ablation},
      {9, "rendering modes", criterion_rendering},
      {10, "persistence and resume", criterion_persistence},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (only != 0 && c.id != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %d: %s — %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
