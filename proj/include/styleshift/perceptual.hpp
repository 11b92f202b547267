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
#include "styleshift/dataset.hpp"
#include "styleshift/errors.hpp"
#include "styleshift/optim.hpp"
#include "styleshift/rng.hpp"
#include "styleshift/tensor.hpp"

// The reconstruction distance: a multi-layer perceptual feature distance plus
// a weighted L1 term,
//
//   D(x, y) = sum_l ||f_l(x) - f_l(y)||^2  +  lambda * ||x - y||_1 ,
//
// with f_l the post-activation block outputs of a small frozen convolutional
// classifier. Both reductions are sums (not means) by default; an optional
// squared-error term supports the pure-L2 ablation.
namespace styleshift {

// Frozen multi-scale feature stack. Each block is conv3x3 -> leaky-relu
// (tap) -> avgpool2; a GAP + dense head exists only so the extractor can be
// trained as a classifier before freezing.
template <typename T>
class FeatureExtractor {
 public:
  struct Config {
    int resolution = 32;
    std::vector<int> channels = {16, 24, 32, 48};  // one per block
    int classes = 4;
  };

  FeatureExtractor() = default;

  static FeatureExtractor random_init(const Config& cfg, std::uint64_t seed) {
    FeatureExtractor f;
    f.cfg_ = cfg;
    f.creation_seed_ = seed;
    Rng rng(derive_seed(seed, "extractor-init"));
    int cin = 3;
    for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
      const int ch = cfg.channels[b];
      T std = static_cast<T>(std::sqrt(2.0 / (cin * 9)));
      f.add_param("block" + std::to_string(b) + ".conv.w",
                  Tensor<T>::randn({ch, cin, 3, 3}, rng, std));
      f.add_param("block" + std::to_string(b) + ".conv.b", Tensor<T>({ch}));
      cin = ch;
    }
    f.add_param("head.w", Tensor<T>::randn({cfg.classes, cin}, rng,
                                           static_cast<T>(std::sqrt(1.0 / cin))));
    f.add_param("head.b", Tensor<T>({cfg.classes}));
    return f;
  }

  // Explicit weights, used by tests that hand-set a miniature extractor.
  static FeatureExtractor from_parameters(
      const Config& cfg, const std::map<std::string, Tensor<T>>& values) {
    FeatureExtractor ref = random_init(cfg, 0);
    FeatureExtractor f;
    f.cfg_ = cfg;
    for (const auto& [name, v] : ref.params_) {
      auto it = values.find(name);
      if (it == values.end()) throw InputError("missing extractor parameter " + name);
      if (it->second.shape() != v.value().shape())
        throw InputError("extractor parameter " + name + " has wrong shape");
      f.add_param(name, it->second);
    }
    return f;
  }

  const Config& config() const { return cfg_; }
  int num_blocks() const { return static_cast<int>(cfg_.channels.size()); }

  // Post-activation feature maps of every block for a [N,3,H,W] batch.
  std::vector<ad::Var<T>> features_graph(const ad::Var<T>& x) const {
    if (x.value().rank() != 4 || x.value().dim(1) != 3)
      throw InputError("extractor input must be [N,3,H,W]");
    std::vector<ad::Var<T>> taps;
    ad::Var<T> h = x;
    for (int b = 0; b < num_blocks(); ++b) {
      h = ad::conv2d(h, param("block" + std::to_string(b) + ".conv.w"),
                     param("block" + std::to_string(b) + ".conv.b"), 1, 1);
      h = ad::leaky_relu(h, T(0.2));
      taps.push_back(h);
      h = ad::avg_pool2(h);
    }
    return taps;
  }

  std::vector<Tensor<T>> features(const Tensor<T>& image) const {
    auto taps = features_graph(ad::constant(image.reshaped(
        {1, image.dim(0), image.dim(1), image.dim(2)})));
    std::vector<Tensor<T>> out;
    out.reserve(taps.size());
    for (auto& t : taps) out.push_back(t.value());
    return out;
  }

  ad::Var<T> logits_graph(const ad::Var<T>& x) const {
    auto taps = features_graph(x);
    ad::Var<T> h = ad::avg_pool2(taps.back());
    h = ad::global_avg_pool(h);
    return ad::dense(h, param("head.w"), param("head.b"));
  }

  std::vector<ad::Var<T>> parameters() {
    std::vector<ad::Var<T>> out;
    for (auto& [name, v] : params_) out.push_back(v);
    return out;
  }

  void save(const std::filesystem::path& dir) const {
    CheckpointMeta meta;
    meta.kind = "extractor";
    meta.resolution = cfg_.resolution;
    meta.creation_seed = creation_seed_;
    meta.extra = {{"channels", cfg_.channels}, {"classes", cfg_.classes}};
    std::vector<std::pair<std::string, Tensor<T>>> values;
    for (const auto& [name, v] : params_) values.emplace_back(name, v.value());
    save_checkpoint(dir, meta, values);
  }

  static FeatureExtractor load(const std::filesystem::path& dir) {
    auto [meta, values] = load_checkpoint<T>(dir);
    if (meta.kind != "extractor")
      throw PersistenceError("checkpoint at " + dir.string() + " is not an extractor");
    Config cfg;
    cfg.resolution = meta.resolution;
    cfg.channels = meta.extra.value("channels", std::vector<int>{});
    cfg.classes = meta.extra.value("classes", 4);
    FeatureExtractor f = from_parameters(cfg, std::map<std::string, Tensor<T>>(
                                                  values.begin(), values.end()));
    f.creation_seed_ = meta.creation_seed;
    return f;
  }

 private:
  void add_param(const std::string& name, Tensor<T> value) {
    params_.emplace_back(name, ad::parameter(std::move(value), name));
  }
  const ad::Var<T>& param(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw InputError("no such extractor parameter: " + name);
  }

  Config cfg_;
  std::uint64_t creation_seed_ = 0;
  std::vector<std::pair<std::string, ad::Var<T>>> params_;
};

// Trains the extractor once as a classifier on procedural attribute labels,
// then the caller treats it as frozen.
template <typename T>
FeatureExtractor<T> train_extractor(const std::vector<std::pair<Tensor<T>, int>>& labeled,
                                    const typename FeatureExtractor<T>::Config& cfg,
                                    int steps, int batch, T lr, std::uint64_t seed) {
  if (labeled.empty()) throw InputError("empty extractor training set");
  auto f = FeatureExtractor<T>::random_init(cfg, seed);
  Adam<T> opt(f.parameters(), lr);
  Rng rng(derive_seed(seed, "extractor-train"));
  const int R = cfg.resolution;
  for (int step = 0; step < steps; ++step) {
    Tensor<T> x({batch, 3, R, R});
    std::vector<int> y(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const auto& [img, label] = labeled[rng.below(labeled.size())];
      std::copy(img.data(), img.data() + img.numel(),
                x.data() + static_cast<std::size_t>(b) * img.numel());
      y[static_cast<std::size_t>(b)] = label;
    }
    opt.zero_grad();
    auto loss = ad::softmax_cross_entropy(f.logits_graph(ad::constant(std::move(x))), y);
    if (!loss.value().all_finite())
      throw TrainingError("extractor training diverged at step " + std::to_string(step));
    ad::backward(loss);
    opt.step();
  }
  return f;
}

// ---------------------------------------------------------------------------

struct DistanceConfig {
  double lambda = 5.0;       // weight of the L1 term
  bool use_perceptual = true;
  double l2_weight = 0.0;    // pure squared-error term (ablation only)
  std::vector<int> tap_layers;       // extractor blocks to sum over; empty = all
  bool normalize_per_layer = false;  // divide each tap by its element count
  bool mean_reduction = false;       // mean instead of sum for pixel terms

  static DistanceConfig combined() { return {}; }
  static DistanceConfig l1_only() {
    DistanceConfig c;
    c.use_perceptual = false;
    c.lambda = 1.0;
    return c;
  }
  static DistanceConfig l2_only() {
    DistanceConfig c;
    c.use_perceptual = false;
    c.lambda = 0.0;
    c.l2_weight = 1.0;
    return c;
  }
  static DistanceConfig perceptual_only() {
    DistanceConfig c;
    c.lambda = 0.0;
    return c;
  }

  void validate(int extractor_blocks) const {
    if (lambda < 0) throw InputError("distance lambda must be >= 0");
    if (l2_weight < 0) throw InputError("distance l2_weight must be >= 0");
    if (!use_perceptual && lambda == 0 && l2_weight == 0)
      throw InputError("distance config selects no terms");
    for (int t : tap_layers)
      if (t < 0 || t >= extractor_blocks)
        throw InputError("tap layer " + std::to_string(t) + " out of range");
    if (use_perceptual && extractor_blocks == 0)
      throw InputError("perceptual term requires a feature extractor");
  }

  std::vector<int> resolved_taps(int extractor_blocks) const {
    if (!tap_layers.empty()) return tap_layers;
    std::vector<int> all(static_cast<std::size_t>(extractor_blocks));
    for (int i = 0; i < extractor_blocks; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
};

namespace detail {

template <typename T>
void check_image_pair(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape())
    throw InputError("distance: image shape mismatch " + Tensor<T>::shape_string(x.shape()) +
                     " vs " + Tensor<T>::shape_string(y.shape()));
  if (x.rank() != 3 || x.dim(0) != 3) throw InputError("distance: images must be [3,H,W]");
}

}  // namespace detail

// Differentiable distance between a batched graph image x [N,3,H,W] and the
// matching constant batch y. Feature taps of y may be supplied pre-computed.
template <typename T>
ad::Var<T> distance_graph(const ad::Var<T>& x, const ad::Var<T>& y,
                          const FeatureExtractor<T>* extractor, const DistanceConfig& cfg,
                          const std::vector<ad::Var<T>>* y_taps_cached = nullptr) {
  if (!x.value().same_shape(y.value())) throw InputError("distance: shape mismatch");
  const int blocks = extractor ? extractor->num_blocks() : 0;
  cfg.validate(blocks);
  ad::Var<T> total = ad::constant(Tensor<T>({1}, T(0)));
  if (cfg.use_perceptual) {
    auto xf = extractor->features_graph(x);
    std::vector<ad::Var<T>> yf;
    if (!y_taps_cached) yf = extractor->features_graph(y);
    const auto& yref = y_taps_cached ? *y_taps_cached : yf;
    for (int t : cfg.resolved_taps(blocks)) {
      auto diff = ad::sub(xf[static_cast<std::size_t>(t)], yref[static_cast<std::size_t>(t)]);
      ad::Var<T> term = ad::sum_squares(diff);
      double denom = 1.0;
      if (cfg.normalize_per_layer || cfg.mean_reduction)
        denom = static_cast<double>(diff.value().numel());
      if (denom != 1.0) term = ad::scale(term, static_cast<T>(1.0 / denom));
      total = ad::add(total, term);
    }
  }
  if (cfg.lambda > 0) {
    ad::Var<T> l1 = ad::sum_abs(ad::sub(x, y));
    double w = cfg.lambda;
    if (cfg.mean_reduction) w /= static_cast<double>(x.value().numel());
    total = ad::add(total, ad::scale(l1, static_cast<T>(w)));
  }
  if (cfg.l2_weight > 0) {
    ad::Var<T> l2 = ad::sum_squares(ad::sub(x, y));
    double w = cfg.l2_weight;
    if (cfg.mean_reduction) w /= static_cast<double>(x.value().numel());
    total = ad::add(total, ad::scale(l2, static_cast<T>(w)));
  }
  return total;
}

// Scalar distances between single [3,H,W] images; these run through the same
// graph path the optimizers use.
template <typename T>
double combined_distance(const Tensor<T>& x, const Tensor<T>& y,
                         const FeatureExtractor<T>* extractor, const DistanceConfig& cfg) {
  detail::check_image_pair(x, y);
  auto xb = ad::constant(x.reshaped({1, 3, x.dim(1), x.dim(2)}));
  auto yb = ad::constant(y.reshaped({1, 3, y.dim(1), y.dim(2)}));
  return static_cast<double>(distance_graph(xb, yb, extractor, cfg).value()[0]);
}

template <typename T>
double perceptual_distance(const Tensor<T>& x, const Tensor<T>& y,
                           const FeatureExtractor<T>& extractor, DistanceConfig cfg) {
  cfg.lambda = 0.0;
  cfg.l2_weight = 0.0;
  cfg.use_perceptual = true;
  return combined_distance(x, y, &extractor, cfg);
}

// Distance against a fixed target with the target's feature taps cached; this
// is what the projection/shifting loops evaluate every iteration.
template <typename T>
class BoundDistance {
 public:
  BoundDistance(const FeatureExtractor<T>* extractor, DistanceConfig cfg, Tensor<T> target)
      : extractor_(extractor), cfg_(std::move(cfg)) {
    detail::check_image_pair(target, target);
    cfg_.validate(extractor_ ? extractor_->num_blocks() : 0);
    target_ = ad::constant(target.reshaped({1, 3, target.dim(1), target.dim(2)}));
    if (cfg_.use_perceptual) {
      for (auto& tap : extractor_->features_graph(target_))
        cached_taps_.push_back(ad::constant(tap.value()));
    }
  }

  ad::Var<T> loss(const ad::Var<T>& x) const {
    return distance_graph(x, target_, extractor_, cfg_,
                          cfg_.use_perceptual ? &cached_taps_ : nullptr);
  }

  double loss_value(const Tensor<T>& image) const {
    auto xb = ad::constant(image.reshaped({1, 3, image.dim(1), image.dim(2)}));
    return static_cast<double>(loss(xb).value()[0]);
  }

  const DistanceConfig& config() const { return cfg_; }
  const FeatureExtractor<T>* extractor() const { return extractor_; }

 private:
  const FeatureExtractor<T>* extractor_;
  DistanceConfig cfg_;
  ad::Var<T> target_;
  std::vector<ad::Var<T>> cached_taps_;
};

}  // namespace styleshift
