#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "tssl/error.hpp"
#include "tssl/evaluation.hpp"
#include "tssl/fusion.hpp"
#include "tssl/ood.hpp"
#include "tssl/reports.hpp"
#include "tssl/trainer.hpp"

using namespace tssl;
using tssl::testing::TempDir;
using tssl::testing::tiny_config;

namespace {

ProbeConfig quick_probe(std::uint64_t seed = 1) {
  ProbeConfig p;
  p.epochs = 40;
  p.batch_size = 16;
  p.seed = seed;
  return p;
}

// Two Gaussian clusters in 2-D centred at (+-2, +-2).
void toy_set(RngStream& rng, std::size_t n, Tensor& x, std::vector<int>& y) {
  x = Tensor(Shape{n, 2});
  y.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    const double c = y[i] ? 2.0 : -2.0;
    x[i * 2] = c + 0.3 * rng.normal();
    x[i * 2 + 1] = c + 0.3 * rng.normal();
  }
}

Tensor gaussian_features(RngStream& rng, std::size_t n, std::size_t d) {
  Tensor t(Shape{n, d});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

ParameterStore silent_heads(const ModelConfig& m, std::uint64_t seed) {
  ParameterStore p = init_parameters(m, seed);
  for (std::size_t t = 0; t < m.factors; ++t) {
    p["evidential.t" + std::to_string(t) + ".weight"].fill(0.0);
    p["evidential.t" + std::to_string(t) + ".bias"].fill(-1000.0);
  }
  return p;
}

}  // namespace

TEST_CASE("linear probe: separable toy set, chance on shuffled labels, seed stability") {
  RngStream rng(1);
  Tensor x, xt;
  std::vector<int> y, yt;
  toy_set(rng, 200, x, y);
  toy_set(rng, 100, xt, yt);
  const ProbeResult r = linear_probe(x, y, xt, yt, quick_probe());
  CHECK(r.accuracy == 100.0);
  CHECK(r.per_class_accuracy == std::vector<double>{100.0, 100.0});
  CHECK(accuracy_percent(r.head, xt, yt) == r.accuracy);

  // Uninformative features with 4 classes.
  const Tensor noise = gaussian_features(rng, 2000, 6), noise_test = gaussian_features(rng, 2000, 6);
  std::vector<int> labels(2000), labels_test(2000);
  for (std::size_t i = 0; i < 2000; ++i) {
    labels[i] = static_cast<int>(rng.uniform_index(4));
    labels_test[i] = static_cast<int>(rng.uniform_index(4));
  }
  const double chance = linear_probe(noise, labels, noise_test, labels_test, quick_probe()).accuracy;
  CHECK(std::abs(chance - 25.0) <= 5.0);

  const std::vector<int> single(200, 1);
  CHECK_THROWS(linear_probe(x, single, xt, yt, quick_probe()));
}

TEST_CASE("linear probe is reproducible for a fixed seed") {
  RngStream rng(2);
  Tensor x, xt;
  std::vector<int> y, yt;
  toy_set(rng, 100, x, y);
  toy_set(rng, 50, xt, yt);
  const ProbeResult a = linear_probe(x, y, xt, yt, quick_probe(3));
  const ProbeResult b = linear_probe(x, y, xt, yt, quick_probe(3));
  CHECK(a.head.weight == b.head.weight);
  CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("corruption grid clean column matches the probe and zero features sit at chance") {
  TempDir dir("grid");
  auto cfg = tiny_config(Variant::kTrustSslAdditive, dir.path());
  cfg.data.test_samples = 40;
  const ParameterStore p = init_parameters(cfg.model, cfg.seed);
  const Dataset train = load_split(cfg, "train"), test = load_split(cfg, "test");
  const Tensor ftr = dataset_features(cfg.model, p, train), fte = dataset_features(cfg.model, p, test);
  const ProbeResult r = linear_probe(ftr, train.manifest.labels, fte, test.manifest.labels, quick_probe());
  const RobustnessGrid g = corruption_grid(cfg.model, p, r.head, test, 5);
  CHECK(g.clean == r.accuracy);
  CHECK(corruption_grid(cfg.model, p, r.head, test, 5).accuracy == g.accuracy);
  for (const auto& row : g.accuracy)
    for (double v : row) {
      CHECK(v >= 0.0);
      CHECK(v <= 100.0);
    }
  const AugmentationFamily fams[] = {AugmentationFamily::kHaze, AugmentationFamily::kOcclusion};
  CHECK(g.mean_at(fams, 5) == doctest::Approx((g.at(fams[0], 5) + g.at(fams[1], 5)) / 2.0));

  ParameterStore zero = p;
  zero["encoder.fc.weight"].fill(0.0);
  const Tensor z0 = dataset_features(cfg.model, zero, train), z1 = dataset_features(cfg.model, zero, test);
  const ProbeResult rz = linear_probe(z0, train.manifest.labels, z1, test.manifest.labels, quick_probe());
  const RobustnessGrid gz = corruption_grid(cfg.model, zero, rz.head, test, 5);
  const double chance = 100.0 / static_cast<double>(cfg.data.num_classes);
  for (const auto& row : gz.accuracy)
    for (double v : row) CHECK(v == doctest::Approx(chance).epsilon(0.05));
}

TEST_CASE("grid CSV round trip and diff") {
  RobustnessGrid g;
  g.clean = 91.25;
  for (std::size_t f = 0; f < kCorruptionCount; ++f)
    for (std::size_t s = 0; s < 5; ++s) g.accuracy[f][s] = 90.0 - 3.0 * static_cast<double>(s) - static_cast<double>(f) * 0.5;
  const RobustnessGrid back = parse_grid_csv(grid_csv(g));
  CHECK(back.clean == g.clean);
  CHECK(back.accuracy == g.accuracy);
  RobustnessGrid h = g;
  h.accuracy[2][4] += 1.5;
  const RobustnessGrid d = parse_grid_csv(grid_diff_csv(g, h));
  CHECK(d.accuracy[2][4] == doctest::Approx(1.5));
  CHECK(d.accuracy[0][0] == 0.0);
  CHECK_THROWS(parse_grid_csv("nonsense\n"));
}

TEST_CASE("K-I trace: baseline, reversal symmetry, variant gate") {
  TempDir dir("ki");
  auto cfg = tiny_config(Variant::kTrustSslAdditive, dir.path());
  const ParameterStore p = init_parameters(cfg.model, cfg.seed);
  const Dataset test = load_split(cfg, "test");
  const AugmentationFamily fams[] = {AugmentationFamily::kBrightnessInversion, AugmentationFamily::kHaze};
  const int up[] = {1, 3, 5}, down[] = {5, 3, 1};
  const KITrace a = ki_trajectory(cfg, p, test, 8, fams, up, 3);
  const KITrace b = ki_trajectory(cfg, p, test, 8, fams, down, 3);
  CHECK(a.baseline.family == "clean");
  CHECK(std::isfinite(a.baseline.mean_conflict));
  CHECK(a.baseline.mean_conflict >= 0.0);
  CHECK(a.baseline.mean_conflict < 1.0);
  CHECK(a.baseline.mean_ignorance <= 1.0);
  REQUIRE(a.rows.size() == 6);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t s = 0; s < 3; ++s) {
      const KIRow& x = a.rows[f * 3 + s];
      const KIRow& y = b.rows[f * 3 + (2 - s)];
      CHECK(x.family == y.family);
      CHECK(x.severity == y.severity);
      CHECK(x.mean_conflict == y.mean_conflict);
      CHECK(x.mean_ignorance == y.mean_ignorance);
    }
  const std::string csv = ki_trace_csv(a);
  CHECK(csv.starts_with("family,severity,mean_conflict,mean_ignorance\nclean,0,"));

  auto cos = tiny_config(Variant::kCosineGate, dir.path());
  CHECK_THROWS_WITH_AS(ki_trajectory(cos, init_parameters(cos.model, 1), test, 8, fams, up, 3),
                       doctest::Contains("no evidential heads"), ConfigError);
}

TEST_CASE("identical views give the self-conflict baseline") {
  TempDir dir("pairs");
  const auto cfg = tiny_config(Variant::kTrustSslAdditive, dir.path());
  const ParameterStore p = init_parameters(cfg.model, 2);
  const Dataset test = load_split(cfg, "test");
  const auto d = pair_diagnostics(cfg, p, test.images, test.images);
  const auto score = ki_pair_score(cfg, p, test.images, test.images);
  const auto swapped = ki_pair_score(cfg, p, test.images, std::vector<ImageTensor>(test.images.rbegin(), test.images.rend()));
  const auto swapped2 = ki_pair_score(cfg, p, std::vector<ImageTensor>(test.images.rbegin(), test.images.rend()), test.images);
  CHECK(swapped == swapped2);
  const std::size_t t = cfg.model.factors;
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < t; ++k) s += d.conflict[i * t + k] + d.ignorance[i * t + k];
    CHECK(score[i] == doctest::Approx(s / static_cast<double>(t)).epsilon(1e-12));
    CHECK(score[i] < 2.0);
  }

  const ParameterStore silent = silent_heads(cfg.model, 2);
  for (double v : native_ki_score(cfg, silent, test.images, 2, 9)) CHECK(v == 1.0);
}

TEST_CASE("Mahalanobis examples and 2x2 oracle") {
  RngStream rng(6);
  // Whitened data: exact identity covariance up to the ridge.
  const std::size_t d = 4;
  Tensor id(Shape{2 * d, d});
  for (std::size_t j = 0; j < d; ++j) {
    id[(2 * j) * d + j] = std::sqrt(static_cast<double>(d));
    id[(2 * j + 1) * d + j] = -std::sqrt(static_cast<double>(d));
  }
  const MahalanobisDetector det(id);
  const double ridge = 1.0 + 1e-3;
  const auto s = det.score(Tensor::matrix(2, 4, {0, 0, 0, 0, 3, 4, 0, 0}));
  CHECK(s[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(25.0 / ridge).epsilon(1e-10));

  // Correlated 2-D Gaussian against the adjugate inverse.
  Tensor x(Shape{500, 2});
  for (std::size_t i = 0; i < 500; ++i) {
    const double a = rng.normal(), b = rng.normal();
    x[i * 2] = 1.0 + 2.0 * a;
    x[i * 2 + 1] = -0.5 + 0.8 * a + 0.6 * b;
  }
  double m0 = 0, m1 = 0;
  for (std::size_t i = 0; i < 500; ++i) m0 += x[i * 2] / 500.0, m1 += x[i * 2 + 1] / 500.0;
  double c00 = 0, c01 = 0, c11 = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    const double u = x[i * 2] - m0, v = x[i * 2 + 1] - m1;
    c00 += u * u / 500.0, c01 += u * v / 500.0, c11 += v * v / 500.0;
  }
  const double r = 1e-3 * (c00 + c11) / 2.0;
  const auto inv = oracle::inverse2(c00 + r, c01, c01, c11 + r);
  const Tensor q = Tensor::matrix(3, 2, {0.0, 0.0, 3.0, 1.0, -2.0, 0.5});
  const auto got = mahalanobis_score(x, q);
  for (std::size_t i = 0; i < 3; ++i) {
    const double u = q[i * 2] - m0, v = q[i * 2 + 1] - m1;
    const double ref = u * (inv[0] * u + inv[1] * v) + v * (inv[2] * u + inv[3] * v);
    CHECK(got[i] == doctest::Approx(ref).epsilon(1e-8));
  }
  CHECK_THROWS(MahalanobisDetector(Tensor(Shape{2, 4})));
}

TEST_CASE("energy and norm scores") {
  CHECK(energy_score(Tensor(Shape{1, 5}))[0] == doctest::Approx(-std::log(5.0)).epsilon(1e-14));
  CHECK(energy_score(Tensor::matrix(1, 2, {10, 0}))[0] == doctest::Approx(-10.0000454).epsilon(1e-9));
  RngStream rng(3);
  for (int i = 0; i < 100; ++i) {
    Tensor h(Shape{1, 4});
    for (double& v : h.values()) v = rng.uniform(-1.0, 1.0);
    h[0] = 1.5;
    Tensor h2 = h;
    for (double& v : h2.values()) v *= 2.0;
    CHECK(energy_score(h2)[0] < energy_score(h)[0]);
  }
  const auto n = feature_norm_score(Tensor::matrix(2, 2, {3, 4, 0, 0}));
  CHECK(n[0] == -5.0);
  CHECK(n[1] == 0.0);

  const Tensor a = gaussian_features(rng, 2000, 3), b = gaussian_features(rng, 2000, 3);
  CHECK(std::abs(auroc(feature_norm_score(a), feature_norm_score(b)) - 0.5) <= 0.02);
}

TEST_CASE("AUROC examples and pair-counting oracle") {
  const std::vector<double> id{0, 1, 2}, ood{1.5, 3};
  CHECK(auroc(id, ood) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(auroc(id, std::vector<double>{5, 6}) == 1.0);
  CHECK(auroc(id, id) == 0.5);
  RngStream rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(1 + rng.uniform_index(40)), b(1 + rng.uniform_index(40));
    for (double& v : a) v = std::round(rng.normal() * 4.0) / 4.0;
    for (double& v : b) v = std::round(rng.normal() * 4.0 + 1.0) / 4.0;
    REQUIRE(std::abs(auroc(a, b) - oracle::auroc_pairs(a, b)) < 1e-12);
  }
  CHECK_THROWS(auroc(std::vector<double>{}, ood));
}

TEST_CASE("OOD shifts and detectors") {
  TempDir dir("ood");
  const auto cfg = tiny_config(Variant::kTrustSslAdditive, dir.path());
  const ParameterStore p = init_parameters(cfg.model, 1);
  const Dataset train = load_split(cfg, "train"), test = load_split(cfg, "test");
  for (OodShift s : kOodShifts) {
    CHECK(shift_from_name(shift_name(s)) == s);
    const auto shifted = apply_shift(test.images, s, 4, 1);
    CHECK(shifted == apply_shift(test.images, s, 4, 1));
    CHECK_FALSE(shifted == test.images);
    for (const auto& img : shifted)
      for (double v : img.values) REQUIRE((v >= 0.0 && v <= 1.0));
  }
  const auto dark = apply_shift(test.images, OodShift::kDarken, 2, 1);
  CHECK(dark[0].values[7] == doctest::Approx(test.images[0].values[7] * 0.7).epsilon(1e-12));
  CHECK_THROWS(shift_from_name("fog"));

  const auto ood = apply_shift(test.images, OodShift::kHaze, 4, 1);
  const OodInputs in{&train.images, &test.images, &ood, "haze"};
  for (Detector d : kDetectors) {
    CHECK(detector_from_name(detector_name(d)) == d);
    const OodScoreSet r = run_detector(d, cfg, p, in);
    CHECK(r.id_scores.size() == test.images.size());
    CHECK(r.auroc == auroc(r.id_scores, r.ood_scores));
  }
  const auto cos = tiny_config(Variant::kCosineGate, dir.path());
  CHECK_THROWS_AS(run_detector(Detector::kNativeKI, cos, init_parameters(cos.model, 1), in), ConfigError);
}

TEST_CASE("manifest inventory and JSON reports") {
  TempDir dir("reports");
  write_text(dir.path() / "b.txt", "x");
  write_text(dir.path() / "sub/a.txt", "y");
  write_text(dir.path() / "manifest.json", "{}");
  CHECK(inventory(dir.path()) == std::vector<std::string>{"b.txt", "sub/a.txt"});
  CHECK(read_text(dir.path() / "b.txt") == "x");
  RunManifest m{"probe", "abc", std::string(artifact_version()), utc_timestamp(), utc_timestamp(), {"b.txt"}};
  const std::string j = manifest_json(m);
  CHECK(j.find("\"config_hash\"") != std::string::npos);
  CHECK(j.find("\"probe\"") != std::string::npos);
}
