#include <doctest.h>

#include <cmath>

#include "spot/evaluation.hpp"
#include "spot/synthetic.hpp"

using namespace spot;

namespace {

Discriminator desk_disc(std::uint64_t seed) {
  Rng rng(seed);
  const PresetSpec ps = preset_spec(ScalePreset::Desk32);
  return build_discriminator(parse_conv_stack(ps.disc_trunk), 3, 32, ps.disc_hidden, 2, 2, rng);
}

}  // namespace

TEST_CASE("extract_features: one row per image, deterministic, near the target dim") {
  Discriminator disc = desk_disc(60);
  const ImageDataset data = make_synthetic_shapes(12, 3, 32, 61);
  ProbeConfig pc;
  pc.layer = 5;
  pc.target_dim = 400;
  const MatX<float> f = extract_features(disc, data, pc);
  CHECK(f.rows() == 12);
  // pooled dim within a factor 1.5 of the request
  CHECK(static_cast<double>(f.cols()) <= 1.5 * 400.0);
  CHECK(static_cast<double>(f.cols()) >= 400.0 / 1.5);

  const MatX<float> again = extract_features(disc, data, pc);
  CHECK((f - again).cwiseAbs().maxCoeff() == 0.0f);

  ProbeConfig bad = pc;
  bad.layer = 9;
  CHECK_THROWS_AS(extract_features(disc, data, bad), std::out_of_range);
}

TEST_CASE("extract_features: identical images produce identical rows") {
  Discriminator disc = desk_disc(62);
  ImageDataset data(3, 32, 32);
  std::vector<std::uint8_t> px(3 * 32 * 32, 128);
  data.add(0, px);
  data.add(1, px);
  ProbeConfig pc;
  const MatX<float> f = extract_features(disc, data, pc);
  CHECK((f.row(0) - f.row(1)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("linear_probe: separable features reach accuracy 1.0") {
  const int n = 60;
  MatX<float> x(n, 4);
  std::vector<int> y(static_cast<std::size_t>(n));
  Rng rng(63);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    y[static_cast<std::size_t>(i)] = label;
    for (int d = 0; d < 4; ++d)
      x(i, d) = static_cast<float>(rng.normal() * 0.05 + (label ? 1.0 : -1.0));
  }
  ProbeConfig pc;
  pc.folds = 3;
  pc.epochs = 120;
  const ProbeResult r = linear_probe(x, y, x, y, pc);
  CHECK(r.mean == doctest::Approx(1.0f));
  CHECK(r.fold_accuracy.size() == 3);
}

TEST_CASE("linear_probe: shuffled labels sit at chance level") {
  const int n = 300, k = 3;
  MatX<float> x(n, 6);
  std::vector<int> y(static_cast<std::size_t>(n));
  Rng rng(64);
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = rng.uniform_int(k);  // labels independent of features
    for (int d = 0; d < 6; ++d) x(i, d) = static_cast<float>(rng.normal());
  }
  ProbeConfig pc;
  pc.folds = 2;
  pc.epochs = 80;
  const ProbeResult r = linear_probe(x, y, x, y, pc);
  // chance 1/3; binomial noise over 300 draws has sigma ~ 0.027
  CHECK(std::fabs(r.mean - 1.0f / k) < 0.11f);
}

TEST_CASE("linear_probe: single-class folds are rejected") {
  MatX<float> x(4, 2);
  x.setRandom();
  std::vector<int> y{0, 0, 0, 0};
  ProbeConfig pc;
  CHECK_THROWS_AS(linear_probe(x, y, x, y, pc), TrainError);
}

TEST_CASE("nearest_neighbors: duplicates rank first, one-hot rows are mutually null") {
  MatX<float> f(5, 3);
  f << 1, 0, 0,
      0, 1, 0,
      1, 0, 0,
      0, 0, 1,
      0.5, 0.5, 0;
  const std::vector<int> nn = nearest_neighbors(f, 0, 2);
  CHECK(nn[0] == 2);  // exact duplicate of the query

  MatX<float> onehot = MatX<float>::Identity(3, 3);
  const std::vector<int> nn2 = nearest_neighbors(onehot, 1, 2);
  // all similarities are 0; ties broken by index
  CHECK(nn2[0] == 0);
  CHECK(nn2[1] == 2);

  CHECK_THROWS_AS(nearest_neighbors(f, 0, 5), TrainError);
}

TEST_CASE("nearest_neighbors: matches a brute-force scan and ignores row scale") {
  Rng rng(65);
  const int n = 100;
  MatX<float> f(n, 8);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 8; ++d) f(i, d) = static_cast<float>(rng.normal());
  f.row(7).setZero();  // zero-norm row: similarity 0 by convention

  const int query = 4;
  // brute force O(n^2) route
  std::vector<std::pair<float, int>> brute;
  for (int i = 0; i < n; ++i) {
    if (i == query) continue;
    const float na = f.row(i).norm(), nb = f.row(query).norm();
    const float sim = (na > 0 && nb > 0) ? f.row(i).dot(f.row(query)) / (na * nb) : 0.0f;
    brute.emplace_back(sim, i);
  }
  std::stable_sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const std::vector<int> got = nearest_neighbors(f, query, 10);
  for (int i = 0; i < 10; ++i) CHECK(got[static_cast<std::size_t>(i)] ==
                                     brute[static_cast<std::size_t>(i)].second);

  // positive rescaling of any row leaves the ranking unchanged
  MatX<float> scaled = f;
  scaled.row(2) *= 37.0f;
  scaled.row(11) *= 0.01f;
  const std::vector<int> got2 = nearest_neighbors(scaled, query, 10);
  CHECK(got == got2);
}

TEST_CASE("probe training never mutates the discriminator trunk") {
  Discriminator disc = desk_disc(66);
  const ImageDataset data = make_synthetic_shapes(20, 3, 32, 67);
  std::vector<float> before;
  disc.visit_params([&](const std::string&, TensorF& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) before.push_back(t.values()[i]);
  });

  ProbeConfig pc;
  pc.folds = 2;
  pc.epochs = 30;
  const MatX<float> f = extract_features(disc, data, pc);
  std::vector<int> labels;
  for (int i = 0; i < data.count(); ++i) labels.push_back(data.label(i));
  linear_probe(f, labels, f, labels, pc);

  std::size_t at = 0;
  bool identical = true;
  disc.visit_params([&](const std::string&, TensorF& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) identical &= t.values()[i] == before[at++];
  });
  CHECK(identical);
}

TEST_CASE("run_ablation: baseline-only report, theta sweep rows, exact reruns") {
  // micro-scale run: this exercises the harness wiring, not model quality
  const ImageDataset train = make_synthetic_shapes(16, 3, 32, 68);
  train.save("ablate_train.imgb");
  RunConfig rc;
  rc.set("dataset", "ablate_train.imgb");
  rc.set("batch_size", "8");
  rc.set("ae_epochs", "1");
  rc.set("adv_epochs", "1");
  rc.set("probe_epochs", "10");
  rc.set("probe_folds", "2");
  rc.set("seed", "21");

  const AblationReport empty = run_ablation(rc, {});
  REQUIRE(empty.rows.size() == 1);
  CHECK(empty.rows[0].id == "baseline");

  const std::vector<std::string> sweep{"theta=0.1", "theta=0.3", "theta=0.5", "theta=0.7",
                                       "theta=0.9"};
  const AblationReport report = run_ablation(rc, sweep);
  REQUIRE(report.rows.size() == 6);
  CHECK(report.rows[1].theta == doctest::Approx(0.1f));
  CHECK(report.rows[5].theta == doctest::Approx(0.9f));

  const AblationReport again = run_ablation(rc, sweep);
  for (std::size_t i = 0; i < report.rows.size(); ++i)
    CHECK(report.rows[i].accuracy == again.rows[i].accuracy);

  CHECK_THROWS_AS(run_ablation(rc, {"zz"}), TrainError);
  CHECK(report.table().find("theta") != std::string::npos);
  CHECK(report.records().find("\"id\":\"theta=0.9\"") != std::string::npos);
}

TEST_CASE("run_ablation: architecture variants (b, h, l) run end to end") {
  // (h) retrains the autoencoder with the widened encoder; (l) swaps in the
  // noise generator; (b) stacks the repair blocks at the bottleneck
  const ImageDataset train = make_synthetic_shapes(16, 3, 32, 69);
  train.save("ablate_arch.imgb");
  RunConfig rc;
  rc.set("dataset", "ablate_arch.imgb");
  rc.set("batch_size", "8");
  rc.set("ae_epochs", "1");
  rc.set("adv_epochs", "1");
  rc.set("probe_epochs", "10");
  rc.set("probe_folds", "2");
  rc.set("seed", "22");
  const AblationReport report = run_ablation(rc, {"b", "h", "l"});
  REQUIRE(report.rows.size() == 4);
  CHECK(report.rows[1].id == "b");
  CHECK(report.rows[2].id == "h");
  CHECK(report.rows[3].id == "l");
  for (const AblationRow& row : report.rows) {
    CHECK(row.accuracy >= 0.0f);
    CHECK(row.accuracy <= 1.0f);
  }
}
