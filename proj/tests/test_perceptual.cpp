#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "styleshift/dataset.hpp"
#include "styleshift/perceptual.hpp"

using namespace styleshift;
namespace a = styleshift::ad;

namespace {

FeatureExtractor<double> small_extractor(std::uint64_t seed, int resolution = 8) {
  typename FeatureExtractor<double>::Config cfg;
  cfg.resolution = resolution;
  cfg.channels = {4, 6};
  cfg.classes = 2;
  return FeatureExtractor<double>::random_init(cfg, seed);
}

Tensor<double> random_image(std::uint64_t seed, int r = 8) {
  Rng rng(seed);
  Tensor<double> img({3, r, r});
  for (long i = 0; i < img.numel(); ++i) img[i] = rng.uniform(-1.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("distance axioms: identity, symmetry, non-negativity") {
  auto ex = small_extractor(1);
  DistanceConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_image(100 + trial);
    auto y = random_image(200 + trial);
    const double dxy = combined_distance(x, y, &ex, cfg);
    const double dyx = combined_distance(y, x, &ex, cfg);
    REQUIRE(dxy >= 0.0);
    REQUIRE(dxy == Catch::Approx(dyx).epsilon(1e-12));
    REQUIRE(combined_distance(x, x, &ex, cfg) == 0.0);
    REQUIRE(combined_distance(y, y, &ex, cfg) == 0.0);
  }
}

TEST_CASE("lambda linearity: D(2a) - D(a) equals a * L1 exactly") {
  auto ex = small_extractor(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_image(300 + trial);
    auto y = random_image(400 + trial);
    const double a = 0.5 + trial * 0.37;
    DistanceConfig c1, c2;
    c1.lambda = a;
    c2.lambda = 2 * a;
    double l1 = 0;
    for (long i = 0; i < x.numel(); ++i) l1 += std::abs(x[i] - y[i]);
    const double diff = combined_distance(x, y, &ex, c2) - combined_distance(x, y, &ex, c1);
    REQUIRE(diff == Catch::Approx(a * l1).epsilon(1e-9));
  }
}

TEST_CASE("single-loss degenerations select the right terms") {
  auto ex = small_extractor(3);
  auto x = random_image(7), y = random_image(8);

  double l1 = 0, l2 = 0;
  for (long i = 0; i < x.numel(); ++i) {
    l1 += std::abs(x[i] - y[i]);
    l2 += (x[i] - y[i]) * (x[i] - y[i]);
  }

  REQUIRE(combined_distance(x, y, &ex, DistanceConfig::l1_only()) ==
          Catch::Approx(l1).epsilon(1e-12));
  REQUIRE(combined_distance(x, y, &ex, DistanceConfig::l2_only()) ==
          Catch::Approx(l2).epsilon(1e-12));
  // lambda = 0 leaves the pure perceptual distance.
  auto pcfg = DistanceConfig::perceptual_only();
  REQUIRE(combined_distance(x, y, &ex, pcfg) ==
          Catch::Approx(perceptual_distance(x, y, ex, DistanceConfig{})).epsilon(1e-12));
  // And the full distance decomposes into its parts.
  DistanceConfig full;
  REQUIRE(combined_distance(x, y, &ex, full) ==
          Catch::Approx(perceptual_distance(x, y, ex, full) + full.lambda * l1).epsilon(1e-9));
}

TEST_CASE("miniature single-tap extractor matches the hand-rolled oracle") {
  // 4x4 images, one block with hand-set weights; the perceptual distance must
  // equal a naive-conv recomputation of sum ||f(x) - f(y)||^2.
  typename FeatureExtractor<double>::Config cfg;
  cfg.resolution = 4;
  cfg.channels = {2};
  cfg.classes = 2;

  Tensor<double> w({2, 3, 3, 3});
  for (long i = 0; i < w.numel(); ++i) w[i] = 0.01 * static_cast<double>(i % 17) - 0.05;
  Tensor<double> b({2});
  b[0] = 0.1;
  b[1] = -0.2;
  std::map<std::string, Tensor<double>> params = {
      {"block0.conv.w", w},
      {"block0.conv.b", b},
      {"head.w", Tensor<double>({2, 2})},
      {"head.b", Tensor<double>({2})},
  };
  auto ex = FeatureExtractor<double>::from_parameters(cfg, params);

  auto x = random_image(11, 4), y = random_image(12, 4);
  auto fx = oracle::naive_leaky_relu(
      oracle::naive_conv2d(x.reshaped({1, 3, 4, 4}), w, b, 1, 1), 0.2);
  auto fy = oracle::naive_leaky_relu(
      oracle::naive_conv2d(y.reshaped({1, 3, 4, 4}), w, b, 1, 1), 0.2);
  double want = 0;
  for (long i = 0; i < fx.numel(); ++i) want += (fx[i] - fy[i]) * (fx[i] - fy[i]);

  REQUIRE(perceptual_distance(x, y, ex, DistanceConfig{}) == Catch::Approx(want).epsilon(1e-6));
}

TEST_CASE("distance gradient w.r.t. x matches finite differences") {
  auto ex = small_extractor(4);
  auto y = random_image(21);
  auto x0 = random_image(22);
  DistanceConfig cfg;  // combined: perceptual + 5 * L1

  auto x = a::parameter(x0.reshaped({1, 3, 8, 8}), "x");
  auto yb = a::constant(y.reshaped({1, 3, 8, 8}));
  auto build = [&] { return distance_graph(x, yb, &ex, cfg); };
  auto loss = build();
  a::backward(loss);
  Tensor<double> analytic = x.grad();
  Tensor<double> numeric = oracle::fd_grad(
      x.value(), [&] { return build().value()[0]; }, 1e-6);
  REQUIRE(oracle::grad_rel_err(analytic, numeric) < 1e-3);
}

TEST_CASE("arithmetic of the combined weighting") {
  // perceptual part 0.2 and L1 part 0.1 with lambda = 5 gives 0.7.
  const double total = 0.2 + 5.0 * 0.1;
  REQUIRE(total == Catch::Approx(0.7));
}

TEST_CASE("shape mismatch is an input error") {
  auto ex = small_extractor(5);
  auto x = random_image(31, 8);
  Rng rng(1);
  Tensor<double> y({3, 4, 4});
  REQUIRE_THROWS_AS(combined_distance(x, y, &ex, DistanceConfig{}), InputError);
}

TEST_CASE("invalid configs are rejected with input errors") {
  auto ex = small_extractor(6);
  auto x = random_image(41), y = random_image(42);
  DistanceConfig neg;
  neg.lambda = -1;
  REQUIRE_THROWS_AS(combined_distance(x, y, &ex, neg), InputError);
  DistanceConfig bad_tap;
  bad_tap.tap_layers = {7};
  REQUIRE_THROWS_AS(combined_distance(x, y, &ex, bad_tap), InputError);
  DistanceConfig nothing;
  nothing.use_perceptual = false;
  nothing.lambda = 0;
  REQUIRE_THROWS_AS(combined_distance(x, y, &ex, nothing), InputError);
}

TEST_CASE("extractor training separates procedural attribute classes") {
  // Tiny corpus, skin-tone labels; the trained extractor should beat chance
  // comfortably on held-out faces.
  const int R = 16;
  auto faces = toy_corpus<double>(160, R, 99);
  std::vector<std::pair<Tensor<double>, int>> train, test;
  for (std::size_t i = 0; i < faces.size(); ++i) {
    auto& [img, attrs] = faces[i];
    (i < 128 ? train : test).emplace_back(img, attrs.skin_class);
  }
  typename FeatureExtractor<double>::Config cfg;
  cfg.resolution = R;
  cfg.channels = {8, 12, 16};
  cfg.classes = 4;
  auto ex = train_extractor(train, cfg, 250, 16, 0.002, 17);

  int correct = 0;
  for (const auto& [img, label] : test) {
    auto logits = ex.logits_graph(a::constant(img.reshaped({1, 3, R, R}))).value();
    int argmax = 0;
    for (int k = 1; k < 4; ++k)
      if (logits.at(0, k) > logits.at(0, argmax)) argmax = k;
    correct += (argmax == label);
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
  INFO("held-out accuracy " << acc);
  REQUIRE(acc > 0.6);  // chance is 0.25

  // Determinism: retraining with the same seed gives identical weights.
  auto ex2 = train_extractor(train, cfg, 250, 16, 0.002, 17);
  auto p1 = ex.parameters();
  auto p2 = ex2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    REQUIRE(bit_equal(p1[i].value(), p2[i].value()));
}
