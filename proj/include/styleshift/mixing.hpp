#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "styleshift/adapt.hpp"
#include "styleshift/dataset.hpp"
#include "styleshift/errors.hpp"
#include "styleshift/generator.hpp"

// Style mixing: graft the final k layers of the target's projected style onto
// freshly sampled style vectors, transferring the target's low-level
// statistics onto random outputs of the shifted model.
namespace styleshift {

struct MixConfig {
  int k = 3;      // number of final layers replaced
  int n = 2000;   // dataset size
  std::uint64_t seed = 0;
  std::string label = "adapted";

  void validate(int num_layers) const {
    if (k < 0 || k > num_layers)
      throw InputError("mix k must be in [0," + std::to_string(num_layers) + "], got " +
                       std::to_string(k));
    if (n < 1) throw InputError("mix dataset size must be >= 1");
  }
};

// Layers 0..L-k-1 from s, layers L-k..L-1 from s_I. Inputs are untouched.
template <typename T>
StyleVector<T> mix_styles(const StyleVector<T>& s, const StyleVector<T>& s_target, int k) {
  s.validate();
  s_target.validate();
  if (s.num_layers() != s_target.num_layers() || s.dim() != s_target.dim())
    throw InputError("mix_styles: style shapes differ");
  const int L = s.num_layers(), D = s.dim();
  if (k < 0 || k > L) throw InputError("mix_styles: k out of range");
  Tensor<T> out({L, D});
  for (int l = 0; l < L; ++l) {
    const Tensor<T>& src = (l >= L - k) ? s_target.layers : s.layers;
    for (int d = 0; d < D; ++d) out.at(l, d) = src.at(l, d);
  }
  return StyleVector<T>(std::move(out));
}

// The style/noise used for sample i of a mixed dataset; factored out so tests
// and the manifest's per-image seed can reconstruct any image exactly.
template <typename T>
struct MixedSample {
  std::uint64_t seed;
  StyleVector<T> mixed_style;
  NoiseInput<T> noise;
  Tensor<T> image;
};

template <typename T>
MixedSample<T> synthesize_mixed(const GeneratorModel<T>& model,
                                const StyleVector<T>& target_style, int k,
                                std::uint64_t sample_seed) {
  Rng zrng(derive_seed(sample_seed, "latent"));
  LatentCode<T> z{Tensor<T>::randn({model.style_dim()}, zrng)};
  MixedSample<T> out;
  out.seed = sample_seed;
  out.mixed_style = mix_styles(model.map(z), target_style, k);
  out.noise = model.sample_noise(derive_seed(sample_seed, "noise"));
  out.image = model.synthesize(out.mixed_style, out.noise);
  return out;
}

// n images from the shifted model, each from a fresh seeded latent with the
// final k style layers replaced by the target's. Noise maps are resampled per
// image. Reproducible from (result, config).
template <typename T>
DatasetManifest generate_adapted_dataset(const AdaptationResult<T>& result,
                                         const MixConfig& cfg,
                                         const std::filesystem::path& dir) {
  const GeneratorModel<T>& model = result.shifted_model;
  cfg.validate(model.num_style_layers());
  std::filesystem::create_directories(dir);

  std::vector<ManifestEntry> entries;
  char name[32];
  for (int i = 0; i < cfg.n; ++i) {
    const std::uint64_t sample_seed =
        derive_seed(cfg.seed, "mix-sample", static_cast<std::uint64_t>(i));
    auto sample = synthesize_mixed(model, result.projected_style, cfg.k, sample_seed);
    std::snprintf(name, sizeof name, "img_%06d.png", i);
    const auto path = dir / name;
    save_image_png(path, sample.image);
    ManifestEntry e;
    e.path = name;
    e.sha256 = sha256_file(path);
    e.label = cfg.label;
    e.seed = sample_seed;
    e.k = cfg.k;
    e.source_model_version = kFormatVersion;
    entries.push_back(std::move(e));
  }
  DatasetManifest manifest(dir / "manifest.jsonl", std::move(entries));
  manifest.save();
  return manifest;
}

}  // namespace styleshift
