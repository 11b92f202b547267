#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "styleshift/adapt.hpp"
#include "styleshift/dataset.hpp"

using namespace styleshift;

namespace {

struct Fixture {
  GeneratorModel<double> model;
  FeatureExtractor<double> extractor;
  DistanceConfig dcfg;
};

Fixture tiny_fixture(std::uint64_t seed = 5) {
  GeneratorModel<double>::Config gcfg;
  gcfg.resolution = 8;
  gcfg.style_dim = 8;
  gcfg.channels = {8, 6};
  typename FeatureExtractor<double>::Config ecfg;
  ecfg.resolution = 8;
  ecfg.channels = {4, 6};
  ecfg.classes = 2;
  return {GeneratorModel<double>::random_init(gcfg, seed),
          FeatureExtractor<double>::random_init(ecfg, seed + 1), DistanceConfig{}};
}

std::string weights_digest(const GeneratorModel<double>& m) {
  std::string all;
  for (const auto& [name, t] : m.named_parameter_values()) {
    all += name;
    all.append(reinterpret_cast<const char*>(t.data()),
               static_cast<std::size_t>(t.numel()) * sizeof(double));
  }
  return sha256_hex(all);
}

}  // namespace

TEST_CASE("config defaults follow the stated budgets") {
  REQUIRE(ProjectionConfig{}.max_iters == 1000);
  REQUIRE(ShiftConfig{}.param_groups == std::vector<std::string>{"synthesis"});
}

TEST_CASE("config validation rejects bad values") {
  ProjectionConfig p;
  p.max_iters = 0;
  REQUIRE_THROWS_AS(p.validate(), InputError);
  p = {};
  p.step_size = 0;
  REQUIRE_THROWS_AS(p.validate(), InputError);
  ShiftConfig s;
  s.param_groups.clear();
  REQUIRE_THROWS_AS(s.validate(), InputError);
}

TEST_CASE("projection of a target already at the initialization is immediate") {
  auto fx = tiny_fixture();
  const std::uint64_t seed = 42;
  auto noise = fx.model.sample_noise(derive_seed(seed, "projection-noise"));
  auto zero = StyleVector<double>::zeros(fx.model.num_style_layers(), fx.model.style_dim());
  auto target = fx.model.synthesize(zero, noise);

  ProjectionConfig cfg;
  cfg.max_iters = 50;
  auto [style, noise_out, trace] = project(fx.model, target, &fx.extractor, fx.dcfg, cfg, seed);
  REQUIRE(trace[0] == 0.0);
  REQUIRE(trace.size() == 1);  // stopped at once
  for (long i = 0; i < style.layers.numel(); ++i) REQUIRE(style.layers[i] == 0.0);
  for (std::size_t i = 0; i < noise.maps.size(); ++i)
    REQUIRE(bit_equal(noise.maps[i], noise_out.maps[i]));
}

TEST_CASE("projection recovers an in-manifold target") {
  auto fx = tiny_fixture(7);
  const std::uint64_t seed = 9;
  auto noise = fx.model.sample_noise(derive_seed(seed, "projection-noise"));
  Rng rng(3);
  LatentCode<double> z{Tensor<double>::randn({8}, rng)};
  auto s_star = fx.model.map(z);
  auto target = fx.model.synthesize(s_star, noise);

  ProjectionConfig cfg;
  cfg.max_iters = 400;
  auto [style, noise2, trace] = project(fx.model, target, &fx.extractor, fx.dcfg, cfg, seed);
  REQUIRE(trace.size() >= 2);
  const double initial = trace.front();
  double best = initial;
  for (double v : trace) best = std::min(best, v);
  INFO("initial " << initial << " best " << best);
  REQUIRE(best <= 0.1 * initial);

  // Projection never touches the generator weights.
  auto fx2 = tiny_fixture(7);
  REQUIRE(weights_digest(fx.model) == weights_digest(fx2.model));
}

TEST_CASE("projection loss trace has a non-increasing running minimum") {
  auto fx = tiny_fixture(8);
  auto faces = toy_corpus<double>(1, 8, 77);
  ProjectionConfig cfg;
  cfg.max_iters = 100;
  auto [style, noise, trace] = project(fx.model, faces[0].first, &fx.extractor, fx.dcfg, cfg, 1);
  double running = trace[0];
  for (double v : trace) {
    running = std::min(running, v);
    REQUIRE(running <= trace[0]);
  }
  // Returned style is the best-so-far iterate, so its loss equals the minimum.
  BoundDistance<double> dist(&fx.extractor, fx.dcfg, faces[0].first);
  double best = trace[0];
  for (double v : trace) best = std::min(best, v);
  REQUIRE(dist.loss_value(fx.model.synthesize(style, noise)) == Catch::Approx(best));
}

TEST_CASE("projection rejects resolution mismatch and non-finite targets") {
  auto fx = tiny_fixture();
  Tensor<double> wrong({3, 16, 16});
  REQUIRE_THROWS_AS(project(fx.model, wrong, &fx.extractor, fx.dcfg, ProjectionConfig{}, 1),
                    InputError);
  Tensor<double> nan_img({3, 8, 8});
  nan_img[5] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(project(fx.model, nan_img, &fx.extractor, fx.dcfg, ProjectionConfig{}, 1),
                    InputError);
}

TEST_CASE("shift with an already-perfect reconstruction leaves weights unchanged") {
  auto fx = tiny_fixture(11);
  const std::uint64_t seed = 4;
  auto noise = fx.model.sample_noise(seed);
  Rng rng(5);
  LatentCode<double> z{Tensor<double>::randn({8}, rng)};
  auto s = fx.model.map(z);
  auto target = fx.model.synthesize(s, noise);

  ShiftConfig cfg;
  cfg.max_iters = 30;
  std::vector<double> trace;
  auto before = weights_digest(fx.model);
  auto shifted = shift(fx.model, s, noise, target, &fx.extractor, fx.dcfg, cfg, &trace);
  REQUIRE(trace[0] == 0.0);
  REQUIRE(weights_digest(shifted) == before);
}

TEST_CASE("shift improves the reconstruction of an out-of-manifold target") {
  auto fx = tiny_fixture(13);
  const std::uint64_t seed = 21;
  // Color-cast toy face as the out-of-manifold target.
  auto faces = toy_corpus<double>(1, 8, 55);
  auto target = FixtureDomain::named("colorcast").apply(faces[0].first);

  ProjectionConfig pcfg;
  pcfg.max_iters = 250;
  auto [style, noise, ptrace] = project(fx.model, target, &fx.extractor, fx.dcfg, pcfg, seed);
  double post_projection = *std::min_element(ptrace.begin(), ptrace.end());

  ShiftConfig scfg;
  scfg.max_iters = 250;
  std::vector<double> strace;
  auto before = weights_digest(fx.model);
  auto shifted = shift(fx.model, style, noise, target, &fx.extractor, fx.dcfg, scfg, &strace);

  // Input model untouched; loss strictly improved.
  REQUIRE(weights_digest(fx.model) == before);
  double post_shift = *std::min_element(strace.begin(), strace.end());
  INFO("post projection " << post_projection << " post shift " << post_shift);
  REQUIRE(post_shift < post_projection * 0.95);

  // The reconstruction from the shifted model is closer to the target.
  BoundDistance<double> dist(&fx.extractor, fx.dcfg, target);
  double orig_d = dist.loss_value(fx.model.synthesize(style, noise));
  double shift_d = dist.loss_value(shifted.synthesize(style, noise));
  REQUIRE(shift_d < orig_d);
}

TEST_CASE("shift touches only the selected parameter groups") {
  auto fx = tiny_fixture(17);
  auto faces = toy_corpus<double>(1, 8, 66);
  auto target = faces[0].first;
  ProjectionConfig pcfg;
  pcfg.max_iters = 40;
  auto [style, noise, ptrace] = project(fx.model, target, &fx.extractor, fx.dcfg, pcfg, 2);

  ShiftConfig scfg;
  scfg.max_iters = 25;
  scfg.param_groups = {"synthesis.torgb"};
  auto shifted = shift(fx.model, style, noise, target, &fx.extractor, fx.dcfg, scfg);

  bool torgb_moved = false;
  for (const auto& [name, value] : shifted.named_parameter_values()) {
    const auto& original = fx.model.parameter_value(name);
    if (name.rfind("synthesis.torgb", 0) == 0) {
      if (!bit_equal(value, original)) torgb_moved = true;
    } else {
      REQUIRE(bit_equal(value, original));
    }
  }
  REQUIRE(torgb_moved);

  ShiftConfig bad;
  bad.param_groups = {"no.such.prefix"};
  REQUIRE_THROWS_AS(shift(fx.model, style, noise, target, &fx.extractor, fx.dcfg, bad),
                    InputError);
}

TEST_CASE("one-shot adaptation of an in-manifold target is a no-op and reproducible") {
  auto fx = tiny_fixture(19);
  const std::uint64_t seed = 31;
  auto noise = fx.model.sample_noise(derive_seed(seed, "projection-noise"));
  auto zero = StyleVector<double>::zeros(fx.model.num_style_layers(), fx.model.style_dim());
  auto target = fx.model.synthesize(zero, noise);

  ProjectionConfig pcfg;
  pcfg.max_iters = 60;
  ShiftConfig scfg;
  scfg.max_iters = 30;
  auto result = adapt_one_shot(fx.model, target, &fx.extractor, fx.dcfg, pcfg, scfg, seed);
  REQUIRE(weights_digest(result.shifted_model) == weights_digest(fx.model));
  REQUIRE(result.projection_loss_trace[0] == 0.0);
  REQUIRE(result.shift_loss_trace[0] == 0.0);
  REQUIRE(result.target_sha256.size() == 64);

  auto result2 = adapt_one_shot(fx.model, target, &fx.extractor, fx.dcfg, pcfg, scfg, seed);
  REQUIRE(bit_equal(result.projected_style.layers, result2.projected_style.layers));
  REQUIRE(weights_digest(result.shifted_model) == weights_digest(result2.shifted_model));
  REQUIRE(result.projection_loss_trace == result2.projection_loss_trace);
}

TEST_CASE("adaptation persists and reloads") {
  auto fx = tiny_fixture(23);
  auto faces = toy_corpus<double>(1, 8, 88);
  auto target = FixtureDomain::named("colorcast").apply(faces[0].first);
  ProjectionConfig pcfg;
  pcfg.max_iters = 60;
  ShiftConfig scfg;
  scfg.max_iters = 40;
  auto result = adapt_one_shot(fx.model, target, &fx.extractor, fx.dcfg, pcfg, scfg, 3);

  auto dir = std::filesystem::temp_directory_path() / "styleshift_test_adapt";
  std::filesystem::remove_all(dir);
  save_adaptation(result, dir);
  auto loaded = load_adaptation<double>(dir);
  // Weights cross the float32 file boundary, so compare at float precision.
  for (const auto& [name, value] : result.shifted_model.named_parameter_values())
    REQUIRE(max_abs_diff(value, loaded.shifted_model.parameter_value(name)) < 1e-6);
  REQUIRE(max_abs_diff(loaded.projected_style.layers, result.projected_style.layers) < 1e-6);
  REQUIRE(loaded.target_sha256 == result.target_sha256);
  REQUIRE(loaded.projection_loss_trace == result.projection_loss_trace);
  for (std::size_t i = 0; i < result.noise.maps.size(); ++i)
    REQUIRE(bit_equal(loaded.noise.maps[i], result.noise.maps[i]));
  std::filesystem::remove_all(dir);

  // Re-saving produces byte-identical adaptation.json.
  std::filesystem::remove_all(dir);
  save_adaptation(result, dir);
  std::ifstream f1(dir / "adaptation.json", std::ios::binary);
  std::string j1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::filesystem::remove_all(dir);
  save_adaptation(result, dir);
  std::ifstream f2(dir / "adaptation.json", std::ios::binary);
  std::string j2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(j1 == j2);
  std::filesystem::remove_all(dir);
}
