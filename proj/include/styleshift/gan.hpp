#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "styleshift/autodiff.hpp"
#include "styleshift/checkpoint.hpp"
#include "styleshift/dataset.hpp"
#include "styleshift/errors.hpp"
#include "styleshift/generator.hpp"
#include "styleshift/optim.hpp"
#include "styleshift/rng.hpp"

// Adversarial training of the base face-manifold model: non-saturating GAN
// loss with an R1 gradient penalty on the discriminator, applied lazily every
// few steps. The penalty gradient is computed as a Hessian-vector product via
// central differences of the discriminator gradient, which avoids a second
// backward pass through the backward graph.
namespace styleshift {

template <typename T>
class Discriminator {
 public:
  struct Config {
    int resolution = 32;
    // One entry per scale: channels after fromRGB, then after each
    // downsampling stage (so size = log2(R/4) + 1).
    std::vector<int> channels;

    static std::vector<int> default_channels(int stages) {
      static const int table[] = {16, 24, 32, 48, 64, 96};
      std::vector<int> c;
      for (int i = 0; i <= stages; ++i) c.push_back(table[std::min(i, 5)]);
      return c;
    }

    int num_stages() const {
      int r = resolution, s = 0;
      while (r > 4) {
        if (r % 2) throw InputError("discriminator resolution must be 4 * 2^k");
        r /= 2;
        ++s;
      }
      return s;
    }
  };

  Discriminator() = default;

  static Discriminator random_init(Config cfg, std::uint64_t seed) {
    const int stages = cfg.num_stages();
    if (cfg.channels.empty()) cfg.channels = Config::default_channels(stages);
    if (static_cast<int>(cfg.channels.size()) != stages + 1)
      throw InputError("discriminator channels must have num_stages + 1 entries");
    Discriminator d;
    d.cfg_ = cfg;
    Rng rng(derive_seed(seed, "discriminator-init"));
    d.add_param("fromrgb.w", Tensor<T>::randn({cfg.channels[0], 3, 1, 1}, rng,
                                              static_cast<T>(std::sqrt(2.0 / 3))));
    d.add_param("fromrgb.b", Tensor<T>({cfg.channels[0]}));
    for (int s = 0; s < stages; ++s) {
      const int cin = cfg.channels[s], cout = cfg.channels[s + 1];
      d.add_param("stage" + std::to_string(s) + ".conv.w",
                  Tensor<T>::randn({cout, cin, 3, 3}, rng,
                                   static_cast<T>(std::sqrt(2.0 / (cin * 9)))));
      d.add_param("stage" + std::to_string(s) + ".conv.b", Tensor<T>({cout}));
    }
    const int clast = cfg.channels.back();
    d.add_param("final.conv.w", Tensor<T>::randn({clast, clast, 3, 3}, rng,
                                                 static_cast<T>(std::sqrt(2.0 / (clast * 9)))));
    d.add_param("final.conv.b", Tensor<T>({clast}));
    d.add_param("final.fc.w", Tensor<T>::randn({clast, clast * 16}, rng,
                                               static_cast<T>(std::sqrt(2.0 / (clast * 16)))));
    d.add_param("final.fc.b", Tensor<T>({clast}));
    d.add_param("final.out.w",
                Tensor<T>::randn({1, clast}, rng, static_cast<T>(std::sqrt(1.0 / clast))));
    d.add_param("final.out.b", Tensor<T>({1}));
    return d;
  }

  // Realness logits [N, 1].
  ad::Var<T> logits_graph(const ad::Var<T>& x) const {
    ad::Var<T> h = ad::leaky_relu(ad::conv2d(x, param("fromrgb.w"), param("fromrgb.b"), 1, 0),
                                  T(0.2));
    for (int s = 0; s < cfg_.num_stages(); ++s) {
      h = ad::conv2d(h, param("stage" + std::to_string(s) + ".conv.w"),
                     param("stage" + std::to_string(s) + ".conv.b"), 1, 1);
      h = ad::leaky_relu(h, T(0.2));
      h = ad::avg_pool2(h);
    }
    h = ad::leaky_relu(ad::conv2d(h, param("final.conv.w"), param("final.conv.b"), 1, 1),
                       T(0.2));
    const int N = h.value().dim(0);
    h = ad::reshape(h, {N, static_cast<int>(h.value().numel() / N)});
    h = ad::leaky_relu(ad::dense(h, param("final.fc.w"), param("final.fc.b")), T(0.2));
    return ad::dense(h, param("final.out.w"), param("final.out.b"));
  }

  std::vector<ad::Var<T>> parameters() {
    std::vector<ad::Var<T>> out;
    for (auto& [name, v] : params_) out.push_back(v);
    return out;
  }

  const typename Discriminator::Config& config() const { return cfg_; }

 private:
  void add_param(const std::string& name, Tensor<T> value) {
    params_.emplace_back(name, ad::parameter(std::move(value), name));
  }
  const ad::Var<T>& param(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw InputError("no such discriminator parameter: " + name);
  }

  Config cfg_;
  std::vector<std::pair<std::string, ad::Var<T>>> params_;
};

struct GanTrainConfig {
  int steps = 5000;
  int batch = 8;
  double lr = 0.002;
  double beta1 = 0.0;  // momentum off, as is usual for GAN training
  double beta2 = 0.99;
  double r1_gamma = 5.0;
  int r1_every = 4;
  double ema_decay = 0.995;  // exponential moving average of generator weights; 0 = off
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty = no intermediate checkpoints
  int checkpoint_every = 0;              // 0 = one epoch (one pass over the corpus)
  int log_every = 0;

  void validate() const {
    if (steps < 1) throw InputError("gan steps must be >= 1");
    if (batch < 1) throw InputError("gan batch must be >= 1");
    if (lr <= 0) throw InputError("gan lr must be > 0");
    if (r1_gamma < 0) throw InputError("r1_gamma must be >= 0");
    if (r1_every < 1) throw InputError("r1_every must be >= 1");
    if (ema_decay < 0 || ema_decay >= 1) throw InputError("ema_decay must be in [0,1)");
  }
};

template <typename T>
struct GanTrainResult {
  GeneratorModel<T> model;
  std::vector<double> d_loss_trace;
  std::vector<double> g_loss_trace;
  std::filesystem::path last_checkpoint;
};

namespace detail {

template <typename T>
Tensor<T> stack_images(const std::vector<Tensor<T>>& images, const std::vector<long>& idx) {
  const int N = static_cast<int>(idx.size());
  const auto& s = images[0].shape();
  Tensor<T> out({N, s[0], s[1], s[2]});
  const long sz = images[0].numel();
  for (int n = 0; n < N; ++n) {
    const auto& img = images[static_cast<std::size_t>(idx[static_cast<std::size_t>(n)])];
    std::copy(img.data(), img.data() + sz, out.data() + static_cast<std::size_t>(n) * sz);
  }
  return out;
}

// R1 penalty gradient accumulated into the discriminator parameters:
// grad_w (gamma/2 * mean_n ||grad_x D(x_n)||^2) via central differences of
// grad_w mean_n D(x_n + t*v_n) at t = +-eps with v = grad_x D(x).
template <typename T>
void accumulate_r1_grads(Discriminator<T>& disc, const Tensor<T>& real, double gamma) {
  const int N = real.dim(0);
  auto x = ad::parameter(real, "r1-input");
  auto logit_sum = ad::sum(disc.logits_graph(x));
  ad::backward(logit_sum);
  Tensor<T> v = x.grad();

  double rms = 0;
  for (long i = 0; i < v.numel(); ++i) rms += static_cast<double>(v[i]) * v[i];
  rms = std::sqrt(rms / static_cast<double>(v.numel()));
  if (rms < 1e-12) return;  // flat discriminator, nothing to penalize
  const double eps = 1e-3 / rms;

  Tensor<T> plus = real, minus = real;
  for (long i = 0; i < v.numel(); ++i) {
    plus[i] += static_cast<T>(eps * static_cast<double>(v[i]));
    minus[i] -= static_cast<T>(eps * static_cast<double>(v[i]));
  }
  const T w = static_cast<T>(gamma / (2.0 * eps * static_cast<double>(N)));
  ad::backward(ad::scale(ad::sum(disc.logits_graph(ad::constant(std::move(plus)))), w));
  ad::backward(ad::scale(ad::sum(disc.logits_graph(ad::constant(std::move(minus)))), -w));
}

}  // namespace detail

// Core adversarial loop over an in-memory corpus; used for base training and
// for fine-tuning an existing model (experiments, collapse proxy).
template <typename T>
GanTrainResult<T> train_gan(const std::vector<Tensor<T>>& corpus, GeneratorModel<T> gen,
                            Discriminator<T> disc, const GanTrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw InputError("gan training corpus is empty");
  const int R = gen.resolution();
  for (const auto& img : corpus)
    if (img.shape() != std::vector<int>{3, R, R})
      throw InputError("corpus resolution mismatch: got " +
                       Tensor<T>::shape_string(img.shape()) + ", model expects [3," +
                       std::to_string(R) + "," + std::to_string(R) + "]");

  const int L = gen.num_style_layers(), D = gen.style_dim(), B = cfg.batch;
  auto sizes = gen.layer_spatial_sizes();
  auto gparams = gen.parameters();
  auto dparams = disc.parameters();
  Adam<T> opt_g(gparams, static_cast<T>(cfg.lr), static_cast<T>(cfg.beta1),
                static_cast<T>(cfg.beta2));
  Adam<T> opt_d(dparams, static_cast<T>(cfg.lr), static_cast<T>(cfg.beta1),
                static_cast<T>(cfg.beta2));

  Rng batch_rng(derive_seed(cfg.seed, "gan-batch"));
  Rng z_rng(derive_seed(cfg.seed, "gan-z"));
  Rng noise_rng(derive_seed(cfg.seed, "gan-noise"));

  const int ckpt_every = cfg.checkpoint_every > 0
                             ? cfg.checkpoint_every
                             : std::max(1, static_cast<int>(corpus.size()) / B);
  GanTrainResult<T> result;

  // Weight-averaged copy of the generator; this is what gets returned.
  GeneratorModel<T> ema = gen.clone();
  auto ema_params = ema.parameters();

  auto sample_noise_batch = [&] {
    std::vector<Tensor<T>> noise;
    for (int l = 0; l < L; ++l)
      noise.push_back(Tensor<T>::randn({B, 1, sizes[static_cast<std::size_t>(l)],
                                        sizes[static_cast<std::size_t>(l)]},
                                       noise_rng));
    return noise;
  };
  auto generate_fakes = [&] {
    Tensor<T> z = Tensor<T>::randn({B, D}, z_rng);
    auto styles_node = gen.mapping_forward(ad::constant(std::move(z)));
    std::vector<ad::Var<T>> styles(static_cast<std::size_t>(L), styles_node);
    return gen.synthesis_forward(styles, sample_noise_batch());
  };

  for (int step = 0; step < cfg.steps; ++step) {
    // Discriminator step (generator outputs detached).
    std::vector<long> idx(static_cast<std::size_t>(B));
    for (auto& i : idx) i = static_cast<long>(batch_rng.below(corpus.size()));
    Tensor<T> real = detail::stack_images(corpus, idx);

    Tensor<T> fake_detached = generate_fakes().value();
    for (auto& p : dparams) p.zero_grad();
    auto d_loss = ad::add(
        ad::mean_all(ad::softplus(ad::scale(disc.logits_graph(ad::constant(real)), T(-1)))),
        ad::mean_all(ad::softplus(disc.logits_graph(ad::constant(std::move(fake_detached))))));
    const double dl = static_cast<double>(d_loss.value()[0]);
    ad::backward(d_loss);
    if (cfg.r1_gamma > 0 && step % cfg.r1_every == 0)
      detail::accumulate_r1_grads(disc, real, cfg.r1_gamma);
    opt_d.step();

    // Generator step.
    for (auto& p : gparams) p.zero_grad();
    auto g_loss =
        ad::mean_all(ad::softplus(ad::scale(disc.logits_graph(generate_fakes()), T(-1))));
    const double gl = static_cast<double>(g_loss.value()[0]);
    ad::backward(g_loss);
    opt_g.step();

    if (cfg.ema_decay > 0) {
      const T d = static_cast<T>(cfg.ema_decay);
      for (std::size_t i = 0; i < gparams.size(); ++i) {
        auto& e = ema_params[i].value();
        const auto& g = gparams[i].value();
        for (long j = 0; j < e.numel(); ++j) e[j] = d * e[j] + (T(1) - d) * g[j];
      }
    }

    result.d_loss_trace.push_back(dl);
    result.g_loss_trace.push_back(gl);
    if (!std::isfinite(dl) || !std::isfinite(gl))
      throw TrainingError("gan training diverged at step " + std::to_string(step),
                          result.last_checkpoint.string());

    if (!cfg.checkpoint_dir.empty() && (step + 1) % ckpt_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d", step + 1);
      (cfg.ema_decay > 0 ? ema : gen).save(cfg.checkpoint_dir / name);
      result.last_checkpoint = cfg.checkpoint_dir / name;
    }
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      std::cout << "gan step " << step + 1 << "/" << cfg.steps << "  d_loss " << dl
                << "  g_loss " << gl << "\n";
  }
  result.model = cfg.ema_decay > 0 ? std::move(ema) : std::move(gen);
  return result;
}

// Trains the base model from scratch on a corpus manifest.
template <typename T>
GanTrainResult<T> train_base(const DatasetManifest& corpus,
                             const typename GeneratorModel<T>::Config& gcfg,
                             const GanTrainConfig& cfg) {
  if (corpus.empty()) throw InputError("train_base: corpus manifest is empty");
  std::vector<Tensor<T>> images;
  images.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) images.push_back(corpus.load_image<T>(i));
  auto gen = GeneratorModel<T>::random_init(gcfg, derive_seed(cfg.seed, "base-gen"));
  typename Discriminator<T>::Config dcfg;
  dcfg.resolution = gcfg.resolution;
  auto disc = Discriminator<T>::random_init(dcfg, derive_seed(cfg.seed, "base-disc"));
  return train_gan(images, std::move(gen), std::move(disc), cfg);
}

// Continues adversarial training of an existing model on a (typically tiny)
// corpus with a fresh discriminator.
template <typename T>
GanTrainResult<T> fine_tune(const GeneratorModel<T>& base, const std::vector<Tensor<T>>& corpus,
                            const GanTrainConfig& cfg) {
  typename Discriminator<T>::Config dcfg;
  dcfg.resolution = base.resolution();
  auto disc = Discriminator<T>::random_init(dcfg, derive_seed(cfg.seed, "finetune-disc"));
  return train_gan(corpus, base.clone(), std::move(disc), cfg);
}

// ---------------------------------------------------------------------------
// Sample-quality and diversity proxies (no discriminator involved).

// Mean per-pixel L1 distance between two images.
template <typename T>
double mean_pixel_distance(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (long i = 0; i < a.numel(); ++i)
    s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return s / static_cast<double>(a.numel());
}

// Mean over samples of the distance to the nearest corpus image.
template <typename T>
double mean_nearest_corpus_distance(const std::vector<Tensor<T>>& samples,
                                    const std::vector<Tensor<T>>& corpus) {
  if (samples.empty() || corpus.empty()) throw InputError("empty sample or corpus set");
  double total = 0;
  for (const auto& s : samples) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : corpus) best = std::min(best, mean_pixel_distance(s, c));
    total += best;
  }
  return total / static_cast<double>(samples.size());
}

// Mean pairwise distance among samples; collapses toward zero when the
// generator mode-collapses.
template <typename T>
double mean_pairwise_distance(const std::vector<Tensor<T>>& samples) {
  if (samples.size() < 2) throw InputError("need at least two samples");
  double total = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      total += mean_pixel_distance(samples[i], samples[j]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

}  // namespace styleshift
