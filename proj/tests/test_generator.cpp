#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "styleshift/generator.hpp"

using namespace styleshift;
namespace a = styleshift::ad;

namespace {

GeneratorModel<float>::Config tiny_config() {
  GeneratorModel<float>::Config cfg;
  cfg.resolution = 8;
  cfg.style_dim = 12;
  cfg.channels = {10, 8};
  return cfg;
}

// Mapping network recomputed with the naive oracles (no Eigen, no autodiff).
template <typename T>
Tensor<T> oracle_mapping(const GeneratorModel<T>& m, const Tensor<T>& z) {
  Tensor<T> h = z.reshaped({1, z.dim(0)});
  for (int i = 0; i < m.config().mapping_layers; ++i) {
    h = oracle::naive_dense(h, m.parameter_value("mapping.fc" + std::to_string(i) + ".w"),
                            m.parameter_value("mapping.fc" + std::to_string(i) + ".b"));
    h = oracle::naive_leaky_relu(h, T(0.2));
  }
  return h.reshaped({z.dim(0)});
}

}  // namespace

TEST_CASE("map broadcasts f(z) to identical layers") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 5);
  LatentCode<float> zero{Tensor<float>({12})};
  auto s = m.map(zero);
  REQUIRE(s.num_layers() == 4);
  REQUIRE(s.dim() == 12);
  for (int l = 1; l < s.num_layers(); ++l)
    for (int d = 0; d < s.dim(); ++d) REQUIRE(s.layers.at(l, d) == s.layers.at(0, d));

  // Same z twice -> identical style vector.
  Rng rng(3);
  LatentCode<float> z{Tensor<float>::randn({12}, rng)};
  auto s1 = m.map(z);
  auto s2 = m.map(z);
  REQUIRE(bit_equal(s1.layers, s2.layers));
}

TEST_CASE("map rejects dimension mismatch") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 5);
  LatentCode<float> bad{Tensor<float>({7})};
  REQUIRE_THROWS_AS(m.map(bad), InputError);
}

TEST_CASE("map agrees with an independent forward-pass oracle over 1000 samples") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 9);
  const int n = 1000, D = 12;

  // Library estimate of E[f(z)] from one stream of z draws, oracle estimate
  // from an independent stream; the two must agree within 3 standard errors.
  Tensor<double> lib_mean({D}), lib_sq({D}), orc_mean({D}), orc_sq({D});
  Rng rng_lib(101), rng_orc(202);
  for (int i = 0; i < n; ++i) {
    LatentCode<float> z{Tensor<float>::randn({D}, rng_lib)};
    auto s = m.map(z);
    for (int d = 0; d < D; ++d) {
      double v = s.layers.at(0, d);
      lib_mean[d] += v;
      lib_sq[d] += v * v;
    }
    Tensor<float> z2 = Tensor<float>::randn({D}, rng_orc);
    Tensor<float> w = oracle_mapping(m, z2);
    for (int d = 0; d < D; ++d) {
      double v = w[d];
      orc_mean[d] += v;
      orc_sq[d] += v * v;
    }
  }
  for (int d = 0; d < D; ++d) {
    double ml = lib_mean[d] / n, mo = orc_mean[d] / n;
    double vl = lib_sq[d] / n - ml * ml, vo = orc_sq[d] / n - mo * mo;
    double se = std::sqrt(vl / n + vo / n);
    INFO("dim " << d << ": lib " << ml << " oracle " << mo << " se " << se);
    REQUIRE(std::abs(ml - mo) <= 3.0 * se + 1e-9);
  }

  // And on identical inputs the two paths agree to numerical precision.
  Rng rng(77);
  LatentCode<float> z{Tensor<float>::randn({D}, rng)};
  auto s = m.map(z);
  Tensor<float> w = oracle_mapping(m, z.z);
  for (int d = 0; d < D; ++d)
    REQUIRE(s.layers.at(0, d) == Catch::Approx(w[d]).margin(1e-5));
}

TEST_CASE("synthesize is deterministic and in range") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 5);
  Rng rng(1);
  LatentCode<float> z{Tensor<float>::randn({12}, rng)};
  auto s = m.map(z);
  auto noise = m.sample_noise(33);
  auto img1 = m.synthesize(s, noise);
  auto img2 = m.synthesize(s, noise);
  REQUIRE(bit_equal(img1, img2));
  REQUIRE(img1.shape() == std::vector<int>{3, 8, 8});
  REQUIRE(img1.min() >= -1.f);
  REQUIRE(img1.max() <= 1.f);
  REQUIRE(img1.all_finite());
}

TEST_CASE("instance normalization yields zero mean unit variance per channel") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 6);
  Rng rng(2);
  LatentCode<float> z{Tensor<float>::randn({12}, rng)};
  auto s = m.map(z);
  auto noise = m.sample_noise(4);
  SynthesisTrace<float> trace;
  m.synthesize(s, noise, &trace);
  REQUIRE(trace.layers.size() == 4);
  for (const auto& layer : trace.layers) {
    for (long i = 0; i < layer.post_norm_mean.numel(); ++i) {
      REQUIRE(std::abs(layer.post_norm_mean[i]) < 1e-4f);
      REQUIRE(std::abs(layer.post_norm_var[i] - 1.f) < 1e-4f);
    }
  }
}

TEST_CASE("output depends on the last style layer and is invariant to a zero edit") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 7);
  Rng rng(3);
  LatentCode<float> z{Tensor<float>::randn({12}, rng)};
  auto s = m.map(z);
  auto noise = m.sample_noise(5);
  auto base = m.synthesize(s, noise);

  auto edited = s;
  const int last = s.num_layers() - 1;
  for (int d = 0; d < s.dim(); ++d) edited.layers.at(last, d) += 0.5f;
  auto changed = m.synthesize(edited, noise);
  REQUIRE(max_abs_diff(base, changed) > 0.f);

  auto zero_edit = s;
  for (int d = 0; d < s.dim(); ++d) zero_edit.layers.at(1, d) += 0.f;
  auto same = m.synthesize(zero_edit, noise);
  REQUIRE(bit_equal(base, same));
}

TEST_CASE("style layer locality: editing layer j leaves other layers' modulation alone") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 8);
  Rng rng(4);
  LatentCode<float> z{Tensor<float>::randn({12}, rng)};
  auto s = m.map(z);
  auto noise = m.sample_noise(6);
  SynthesisTrace<float> before;
  m.synthesize(s, noise, &before);

  const int j = 2;
  auto edited = s;
  for (int d = 0; d < s.dim(); ++d) edited.layers.at(j, d) += 1.f;
  SynthesisTrace<float> after;
  m.synthesize(edited, noise, &after);

  for (int i = 0; i < s.num_layers(); ++i) {
    if (i == j) continue;
    // The modulation parameters of every other layer are untouched.
    REQUIRE(bit_equal(before.layers[i].style_scale, after.layers[i].style_scale));
    REQUIRE(bit_equal(before.layers[i].style_bias, after.layers[i].style_bias));
    // Upstream of the edit the normalized activations are untouched too.
    if (i < j) {
      REQUIRE(bit_equal(before.layers[i].post_norm_mean, after.layers[i].post_norm_mean));
      REQUIRE(bit_equal(before.layers[i].post_norm_var, after.layers[i].post_norm_var));
    }
  }
}

TEST_CASE("sample_random is reproducible and varied") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 10);
  auto s1 = m.sample_random(1, 99);
  auto s2 = m.sample_random(1, 99);
  REQUIRE(bit_equal(s1[0].image, s2[0].image));

  auto batch = m.sample_random(3, 42);
  REQUIRE(batch.size() == 3);
  REQUIRE_FALSE(bit_equal(batch[0].z.z, batch[1].z.z));
  REQUIRE_FALSE(bit_equal(batch[1].z.z, batch[2].z.z));
  REQUIRE_FALSE(bit_equal(batch[0].z.z, batch[2].z.z));

  for (const auto& smp : m.sample_random(100, 7)) {
    REQUIRE(smp.image.all_finite());
    REQUIRE(smp.image.min() >= -1.f);
    REQUIRE(smp.image.max() <= 1.f);
  }
}

TEST_CASE("noise input is reproducible from its seed alone") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 11);
  auto n1 = m.sample_noise(123);
  auto n2 = m.sample_noise(123);
  REQUIRE(n1.maps.size() == 4);
  for (std::size_t i = 0; i < n1.maps.size(); ++i) REQUIRE(bit_equal(n1.maps[i], n2.maps[i]));
  REQUIRE(n1.maps[0].shape() == std::vector<int>{4, 4});
  REQUIRE(n1.maps[2].shape() == std::vector<int>{8, 8});
}

TEST_CASE("save/load round trip is bit exact and synthesis unchanged") {
  auto m = GeneratorModel<float>::random_init(tiny_config(), 12);
  Rng rng(5);
  LatentCode<float> z{Tensor<float>::randn({12}, rng)};
  auto s = m.map(z);
  auto noise = m.sample_noise(7);
  auto before = m.synthesize(s, noise);

  auto dir = std::filesystem::temp_directory_path() / "styleshift_test_gen_ckpt";
  std::filesystem::remove_all(dir);
  m.save(dir);
  auto loaded = GeneratorModel<float>::load(dir);
  for (const auto& [name, value] : m.named_parameter_values())
    REQUIRE(bit_equal(value, loaded.parameter_value(name)));
  auto after = loaded.synthesize(s, noise);
  REQUIRE(bit_equal(before, after));
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthesis gradients w.r.t. styles match finite differences (miniature)") {
  // 8x8, two blocks, double precision.
  GeneratorModel<double>::Config cfg;
  cfg.resolution = 8;
  cfg.style_dim = 6;
  cfg.channels = {6, 5};
  auto m = GeneratorModel<double>::random_init(cfg, 13);
  auto noise = m.sample_noise(8);
  auto noise_batch = m.batch_noise({&noise});
  Rng rng(6);
  Tensor<double> target = Tensor<double>::randn({1, 3, 8, 8}, rng, 0.5);

  std::vector<a::Var<double>> styles;
  Rng srng(7);
  for (int l = 0; l < m.num_style_layers(); ++l)
    styles.push_back(a::parameter(Tensor<double>::randn({1, 6}, srng, 0.3),
                                  "s" + std::to_string(l)));

  auto build = [&] {
    auto img = m.synthesis_forward(styles, noise_batch);
    return a::sum_squares(a::sub(img, a::constant(target)));
  };
  auto loss = build();
  a::backward(loss);
  for (auto& sv : styles) {
    Tensor<double> analytic = sv.grad();
    Tensor<double> numeric =
        oracle::fd_grad(sv.value(), [&] { return build().value()[0]; }, 1e-6);
    INFO(sv.name());
    REQUIRE(oracle::grad_rel_err(analytic, numeric) < 1e-3);
  }
}
