#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "styleshift/autodiff.hpp"
#include "styleshift/checkpoint.hpp"
#include "styleshift/errors.hpp"
#include "styleshift/rng.hpp"
#include "styleshift/tensor.hpp"

// Toy-scale style-based generator: a small fully connected mapping network
// produces a style vector, and a progressive synthesis network applies it as
// per-layer adaptive instance normalization (normalize, then style-derived
// scale/bias) while mixing in fixed per-layer noise. Resolution blocks run
// from 4x4 up to the configured output size with two style layers per block.
namespace styleshift {

// [L, D] style coordinates. Layer i parameterizes the i-th AdaIN.
template <typename T>
struct StyleVector {
  Tensor<T> layers;  // [L, D]

  StyleVector() = default;
  explicit StyleVector(Tensor<T> t) : layers(std::move(t)) { validate(); }
  static StyleVector zeros(int L, int D) { return StyleVector(Tensor<T>({L, D})); }

  int num_layers() const { return layers.dim(0); }
  int dim() const { return layers.dim(1); }

  void validate() const {
    if (layers.rank() != 2) throw InputError("style vector must be [L,D]");
    const int L = layers.dim(0);
    if (L < 4 || L % 2 != 0)
      throw InputError("style layer count must be even and >= 4, got " + std::to_string(L));
    if (!layers.all_finite()) throw InputError("style vector has non-finite entries");
  }
};

// One single-channel noise map per style layer, matching that layer's spatial
// size. Sampled once from the seed and held fixed thereafter.
template <typename T>
struct NoiseInput {
  std::vector<Tensor<T>> maps;  // per layer, [H, W]
  std::uint64_t seed = 0;

  static NoiseInput sample(const std::vector<int>& spatial_sizes, std::uint64_t seed) {
    NoiseInput n;
    n.seed = seed;
    Rng rng(derive_seed(seed, "noise"));
    for (int s : spatial_sizes) n.maps.push_back(Tensor<T>::randn({s, s}, rng));
    return n;
  }
};

template <typename T>
struct LatentCode {
  Tensor<T> z;  // [D]
};

// Per-layer channel statistics recorded during an instrumented forward pass.
template <typename T>
struct SynthesisTrace {
  struct LayerStats {
    Tensor<T> post_norm_mean, post_norm_var;    // [N, C] after instance norm
    Tensor<T> post_style_mean, post_style_var;  // [N, C] after style modulation
    Tensor<T> style_scale, style_bias;          // [N, C] the modulation itself
  };
  std::vector<LayerStats> layers;
};

template <typename T>
class GeneratorModel {
 public:
  struct Config {
    int resolution = 32;
    int style_dim = 64;
    std::vector<int> channels;  // one entry per resolution block; filled if empty
    int mapping_layers = 3;

    static std::vector<int> default_channels(int blocks) {
      static const int table[] = {48, 32, 24, 16, 12, 8};
      std::vector<int> c;
      for (int b = 0; b < blocks; ++b) c.push_back(table[std::min<std::size_t>(b, 5)]);
      return c;
    }

    int num_blocks() const {
      int r = resolution, b = 0;
      while (r > 4) {
        if (r % 2) throw InputError("resolution must be 4 * 2^k");
        r /= 2;
        ++b;
      }
      if (resolution < 8) throw InputError("resolution must be at least 8");
      return b + 1;
    }
    int num_style_layers() const { return 2 * num_blocks(); }
  };

  GeneratorModel() = default;

  static GeneratorModel random_init(Config cfg, std::uint64_t seed) {
    if (cfg.channels.empty()) cfg.channels = Config::default_channels(cfg.num_blocks());
    if (static_cast<int>(cfg.channels.size()) != cfg.num_blocks())
      throw InputError("channels must have one entry per resolution block");
    GeneratorModel m;
    m.cfg_ = cfg;
    m.creation_seed_ = seed;
    Rng rng(derive_seed(seed, "generator-init"));
    const int D = cfg.style_dim;

    for (int i = 0; i < cfg.mapping_layers; ++i) {
      T std = static_cast<T>(std::sqrt(2.0 / D));
      m.add_param("mapping.fc" + std::to_string(i) + ".w", Tensor<T>::randn({D, D}, rng, std));
      m.add_param("mapping.fc" + std::to_string(i) + ".b", Tensor<T>({D}));
    }

    m.add_param("synthesis.const", Tensor<T>::randn({cfg.channels[0], 4, 4}, rng));
    const int L = cfg.num_style_layers();
    for (int i = 0; i < L; ++i) {
      const int b = i / 2;
      const int ch = cfg.channels[b];
      if (i > 0) {
        const int cin = (i % 2 == 0) ? cfg.channels[b - 1] : ch;
        T std = static_cast<T>(std::sqrt(2.0 / (cin * 9)));
        m.add_param(layer_name(i) + ".conv.w", Tensor<T>::randn({ch, cin, 3, 3}, rng, std));
        m.add_param(layer_name(i) + ".conv.b", Tensor<T>({ch}));
      }
      m.add_param(layer_name(i) + ".noise_strength", Tensor<T>({ch}, T(0.05)));
      T sstd = static_cast<T>(0.5 * std::sqrt(1.0 / D));
      m.add_param(layer_name(i) + ".style.w", Tensor<T>::randn({2 * ch, D}, rng, sstd));
      m.add_param(layer_name(i) + ".style.b", Tensor<T>({2 * ch}));
    }
    const int clast = cfg.channels.back();
    m.add_param("synthesis.torgb.w",
                Tensor<T>::randn({3, clast, 1, 1}, rng, static_cast<T>(std::sqrt(1.0 / clast))));
    m.add_param("synthesis.torgb.b", Tensor<T>({3}));
    return m;
  }

  const Config& config() const { return cfg_; }
  int resolution() const { return cfg_.resolution; }
  int style_dim() const { return cfg_.style_dim; }
  int num_style_layers() const { return cfg_.num_style_layers(); }
  std::uint64_t creation_seed() const { return creation_seed_; }

  // Spatial size of each style layer's feature map (noise map sizes).
  std::vector<int> layer_spatial_sizes() const {
    std::vector<int> s;
    for (int i = 0; i < num_style_layers(); ++i) s.push_back(4 << (i / 2));
    return s;
  }

  NoiseInput<T> sample_noise(std::uint64_t seed) const {
    return NoiseInput<T>::sample(layer_spatial_sizes(), seed);
  }

  // All parameters whose name starts with one of the prefixes (all params if
  // empty). Order is the fixed construction order.
  std::vector<ad::Var<T>> parameters(const std::vector<std::string>& prefixes = {}) {
    std::vector<ad::Var<T>> out;
    for (auto& [name, v] : params_) {
      if (prefixes.empty()) {
        out.push_back(v);
        continue;
      }
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) {
          out.push_back(v);
          break;
        }
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameter_values() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& [name, v] : params_) out.emplace_back(name, v.value());
    return out;
  }

  const Tensor<T>& parameter_value(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v.value();
    throw InputError("no such parameter: " + name);
  }

  // Deep copy: fresh parameter nodes with copied values.
  GeneratorModel clone() const {
    GeneratorModel m;
    m.cfg_ = cfg_;
    m.creation_seed_ = creation_seed_;
    for (const auto& [name, v] : params_) m.add_param(name, v.value());
    return m;
  }

  // ---- mapping network -----------------------------------------------------

  // Maps a batch of latent codes [N, D] to style coordinates [N, D].
  ad::Var<T> mapping_forward(const ad::Var<T>& z) const {
    if (z.value().dim(1) != cfg_.style_dim)
      throw InputError("latent code dimension mismatch: expected " +
                       std::to_string(cfg_.style_dim));
    ad::Var<T> h = z;
    for (int i = 0; i < cfg_.mapping_layers; ++i) {
      h = ad::dense(h, param("mapping.fc" + std::to_string(i) + ".w"),
                    param("mapping.fc" + std::to_string(i) + ".b"));
      h = ad::leaky_relu(h, T(0.2));
    }
    return h;
  }

  // f(z) broadcast to all L layers. Layers start identical; callers may then
  // edit layers independently.
  StyleVector<T> map(const LatentCode<T>& code) const {
    if (code.z.rank() != 1 || code.z.dim(0) != cfg_.style_dim)
      throw InputError("latent code must be [D] with D=" + std::to_string(cfg_.style_dim));
    if (!code.z.all_finite()) throw InputError("latent code has non-finite entries");
    ad::Var<T> z = ad::constant(code.z.reshaped({1, cfg_.style_dim}));
    Tensor<T> w = mapping_forward(z).value();  // [1, D]
    const int L = num_style_layers(), D = cfg_.style_dim;
    Tensor<T> layers({L, D});
    for (int l = 0; l < L; ++l)
      for (int d = 0; d < D; ++d) layers.at(l, d) = w.at(0, d);
    return StyleVector<T>(std::move(layers));
  }

  // ---- synthesis network ---------------------------------------------------

  // Differentiable forward pass. styles: one Var [N, D] per style layer (they
  // may alias the same node); noise: one [N, 1, H, W] tensor per layer.
  ad::Var<T> synthesis_forward(const std::vector<ad::Var<T>>& styles,
                               const std::vector<Tensor<T>>& noise,
                               SynthesisTrace<T>* trace = nullptr) const {
    const int L = num_style_layers();
    if (static_cast<int>(styles.size()) != L || static_cast<int>(noise.size()) != L)
      throw InputError("expected " + std::to_string(L) + " style layers and noise maps");
    const int N = styles[0].value().dim(0);
    if (trace) trace->layers.resize(static_cast<std::size_t>(L));

    ad::Var<T> h = ad::tile_batch(param("synthesis.const"), N);
    for (int i = 0; i < L; ++i) {
      if (styles[static_cast<std::size_t>(i)].value().dim(1) != cfg_.style_dim)
        throw InputError("style layer dimension mismatch");
      if (i > 0) {
        if (i % 2 == 0) h = ad::upsample2_nearest(h);
        h = ad::conv2d(h, param(layer_name(i) + ".conv.w"), param(layer_name(i) + ".conv.b"),
                       1, 1);
      }
      const auto& hs = h.value().shape();
      if (noise[static_cast<std::size_t>(i)].shape() != std::vector<int>{N, 1, hs[2], hs[3]})
        throw InputError("noise map " + std::to_string(i) + " has wrong shape (want " +
                         Tensor<T>::shape_string({N, 1, hs[2], hs[3]}) + ")");
      h = ad::noise_inject(h, param(layer_name(i) + ".noise_strength"),
                           noise[static_cast<std::size_t>(i)]);
      h = ad::leaky_relu(h, T(0.2));
      h = ad::instance_norm(h);
      if (trace) record_stats(h.value(), trace->layers[static_cast<std::size_t>(i)], true);
      ad::Var<T> style_params =
          ad::dense(styles[static_cast<std::size_t>(i)], param(layer_name(i) + ".style.w"),
                    param(layer_name(i) + ".style.b"));
      const int ch = h.value().dim(1);
      ad::Var<T> sc = ad::slice_cols(style_params, 0, ch);
      ad::Var<T> bi = ad::slice_cols(style_params, ch, 2 * ch);
      h = ad::channel_affine(h, sc, bi);
      if (trace) {
        auto& stats = trace->layers[static_cast<std::size_t>(i)];
        record_stats(h.value(), stats, false);
        stats.style_scale = sc.value();
        stats.style_bias = bi.value();
      }
    }
    h = ad::conv2d(h, param("synthesis.torgb.w"), param("synthesis.torgb.b"), 1, 0);
    return ad::tanh_act(h);
  }

  // Batched noise tensors [N,1,H,W] from per-image NoiseInput structs.
  std::vector<Tensor<T>> batch_noise(const std::vector<const NoiseInput<T>*>& noises) const {
    const int L = num_style_layers();
    const int N = static_cast<int>(noises.size());
    auto sizes = layer_spatial_sizes();
    std::vector<Tensor<T>> out;
    for (int i = 0; i < L; ++i) {
      const int s = sizes[static_cast<std::size_t>(i)];
      Tensor<T> t({N, 1, s, s});
      for (int n = 0; n < N; ++n) {
        const auto& m = noises[static_cast<std::size_t>(n)]->maps.at(static_cast<std::size_t>(i));
        if (m.shape() != std::vector<int>{s, s})
          throw InputError("noise input does not match model feature shapes");
        std::copy(m.data(), m.data() + m.numel(),
                  t.data() + static_cast<std::size_t>(n) * s * s);
      }
      out.push_back(std::move(t));
    }
    return out;
  }

  // Per-layer style Vars (batch of one) from a StyleVector value.
  std::vector<ad::Var<T>> style_constants(const StyleVector<T>& s) const {
    s.validate();
    if (s.num_layers() != num_style_layers() || s.dim() != cfg_.style_dim)
      throw InputError("style vector shape mismatch: got " +
                       Tensor<T>::shape_string(s.layers.shape()));
    std::vector<ad::Var<T>> out;
    for (int l = 0; l < s.num_layers(); ++l) {
      Tensor<T> row({1, s.dim()});
      for (int d = 0; d < s.dim(); ++d) row.at(0, d) = s.layers.at(l, d);
      out.push_back(ad::constant(std::move(row)));
    }
    return out;
  }

  // Deterministic single-image synthesis: R x R x 3 in [-1, 1].
  Tensor<T> synthesize(const StyleVector<T>& s, const NoiseInput<T>& noise,
                       SynthesisTrace<T>* trace = nullptr) const {
    auto img = synthesis_forward(style_constants(s), batch_noise({&noise}), trace).value();
    return img.reshaped({3, cfg_.resolution, cfg_.resolution});
  }

  struct Sample {
    LatentCode<T> z;
    StyleVector<T> style;
    NoiseInput<T> noise;
    Tensor<T> image;
  };

  // n reproducible samples. Sample i depends only on (seed, i).
  std::vector<Sample> sample_random(int n, std::uint64_t seed) const {
    if (n < 1) throw InputError("sample count must be >= 1");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng zrng(derive_seed(seed, "latent", static_cast<std::uint64_t>(i)));
      Sample s;
      s.z.z = Tensor<T>::randn({cfg_.style_dim}, zrng);
      s.style = map(s.z);
      s.noise = sample_noise(derive_seed(seed, "noise", static_cast<std::uint64_t>(i)));
      s.image = synthesize(s.style, s.noise);
      out.push_back(std::move(s));
    }
    return out;
  }

  // ---- persistence -----------------------------------------------------------

  void save(const std::filesystem::path& dir) const {
    CheckpointMeta meta;
    meta.kind = "generator";
    meta.resolution = cfg_.resolution;
    meta.num_style_layers = num_style_layers();
    meta.style_dim = cfg_.style_dim;
    meta.creation_seed = creation_seed_;
    meta.extra = {{"channels", cfg_.channels}, {"mapping_layers", cfg_.mapping_layers}};
    save_checkpoint(dir, meta, named_parameter_values());
  }

  static GeneratorModel load(const std::filesystem::path& dir) {
    auto [meta, values] = load_checkpoint<T>(dir);
    if (meta.kind != "generator")
      throw PersistenceError("checkpoint at " + dir.string() + " is not a generator");
    Config cfg;
    cfg.resolution = meta.resolution;
    cfg.style_dim = meta.style_dim;
    cfg.channels = meta.extra.value("channels", std::vector<int>{});
    cfg.mapping_layers = meta.extra.value("mapping_layers", 3);
    GeneratorModel m;
    m.cfg_ = cfg;
    m.creation_seed_ = meta.creation_seed;
    // Reconstruct in canonical order so parameters() ordering is stable.
    GeneratorModel ref = random_init(cfg, 0);
    for (const auto& [name, v] : ref.params_) {
      auto it = values.find(name);
      if (it == values.end()) throw PersistenceError("checkpoint missing parameter " + name);
      if (it->second.shape() != v.value().shape())
        throw PersistenceError("checkpoint parameter " + name + " has wrong shape");
      m.add_param(name, it->second);
    }
    return m;
  }

  static std::string layer_name(int i) { return "synthesis.layer" + std::to_string(i); }

 private:
  void add_param(const std::string& name, Tensor<T> value) {
    params_.emplace_back(name, ad::parameter(std::move(value), name));
  }

  const ad::Var<T>& param(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw InputError("no such parameter: " + name);
  }

  static void record_stats(const Tensor<T>& h, typename SynthesisTrace<T>::LayerStats& stats,
                           bool post_norm) {
    const int N = h.dim(0), C = h.dim(1), HW = h.dim(2) * h.dim(3);
    Tensor<T> mean({N, C}), var({N, C});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T* p = h.data() + (static_cast<std::size_t>(n) * C + c) * HW;
        double m = 0;
        for (int i = 0; i < HW; ++i) m += static_cast<double>(p[i]);
        m /= HW;
        double v = 0;
        for (int i = 0; i < HW; ++i) {
          double d = static_cast<double>(p[i]) - m;
          v += d * d;
        }
        mean.at(n, c) = static_cast<T>(m);
        var.at(n, c) = static_cast<T>(v / HW);
      }
    if (post_norm) {
      stats.post_norm_mean = std::move(mean);
      stats.post_norm_var = std::move(var);
    } else {
      stats.post_style_mean = std::move(mean);
      stats.post_style_var = std::move(var);
    }
  }

  Config cfg_;
  std::uint64_t creation_seed_ = 0;
  std::vector<std::pair<std::string, ad::Var<T>>> params_;
};

}  // namespace styleshift
