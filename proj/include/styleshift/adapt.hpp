#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "styleshift/errors.hpp"
#include "styleshift/generator.hpp"
#include "styleshift/hash.hpp"
#include "styleshift/optim.hpp"
#include "styleshift/perceptual.hpp"
#include "styleshift/rng.hpp"

// One-shot adaptation: project the target onto the generator's style manifold
// (optimize the style vector with weights frozen), then shift the manifold
// (optimize the synthesis weights with the projected style frozen). Both are
// first-order Adam loops on the same reconstruction distance, return the
// best-so-far iterate, and stop early when the relative improvement over a
// trailing window falls below tolerance.
namespace styleshift {

struct ProjectionConfig {
  int max_iters = 1000;
  double step_size = 0.01;
  double tolerance = 1e-5;  // relative improvement over the window
  int window = 50;

  void validate() const {
    if (max_iters < 1) throw InputError("projection max_iters must be >= 1");
    if (step_size <= 0) throw InputError("projection step_size must be > 0");
    if (tolerance < 0) throw InputError("projection tolerance must be >= 0");
    if (window < 1) throw InputError("projection window must be >= 1");
  }
};

struct ShiftConfig {
  int max_iters = 400;
  double step_size = 0.001;
  // Parameter-name prefixes to update; everything under "synthesis" by
  // default. The mapping network is not in the computation graph once the
  // style is fixed, so it is never a useful group here.
  std::vector<std::string> param_groups = {"synthesis"};
  double tolerance = 1e-5;
  int window = 50;

  void validate() const {
    if (max_iters < 1) throw InputError("shift max_iters must be >= 1");
    if (step_size <= 0) throw InputError("shift step_size must be > 0");
    if (param_groups.empty()) throw InputError("shift requires at least one parameter group");
    if (tolerance < 0) throw InputError("shift tolerance must be >= 0");
    if (window < 1) throw InputError("shift window must be >= 1");
  }
};

template <typename T>
struct AdaptationResult {
  StyleVector<T> projected_style;  // s_I
  GeneratorModel<T> shifted_model; // g_I
  NoiseInput<T> noise;
  std::vector<double> projection_loss_trace;
  std::vector<double> shift_loss_trace;
  std::string target_sha256;
  std::uint64_t seed = 0;
  ProjectionConfig projection_config;
  ShiftConfig shift_config;
  DistanceConfig distance_config;
};

namespace detail {

// Early-stopping bookkeeping: stop when the running best improved by less
// than tol (relatively) over the last `window` recorded losses.
class ImprovementWindow {
 public:
  ImprovementWindow(int window, double tol) : window_(window), tol_(tol) {}

  // Returns true when it is time to stop.
  bool record(double loss) {
    best_ = std::min(best_, loss);
    history_.push_back(best_);
    if (static_cast<int>(history_.size()) <= window_) return false;
    const double before = history_[history_.size() - 1 - static_cast<std::size_t>(window_)];
    const double rel = (before - best_) / std::max(std::abs(before), 1e-30);
    return rel < tol_;
  }

 private:
  int window_;
  double tol_;
  double best_ = std::numeric_limits<double>::infinity();
  std::vector<double> history_;
};

template <typename T>
std::string tensor_sha256(const Tensor<T>& t) {
  // Hash of the float32 little-endian pixel buffer.
  Tensor<float> f = t.template cast<float>();
  return sha256_hex(f.data(), static_cast<std::size_t>(f.numel()) * sizeof(float));
}

template <typename T>
void check_target(const GeneratorModel<T>& model, const Tensor<T>& target) {
  if (target.rank() != 3 || target.dim(0) != 3 || target.dim(1) != model.resolution() ||
      target.dim(2) != model.resolution())
    throw InputError("target must be [3," + std::to_string(model.resolution()) + "," +
                     std::to_string(model.resolution()) + "], got " +
                     Tensor<T>::shape_string(target.shape()));
  if (!target.all_finite()) throw InputError("target has non-finite values");
  if (static_cast<double>(target.min()) < -1.0 - 1e-6 ||
      static_cast<double>(target.max()) > 1.0 + 1e-6)
    throw InputError("target values must lie in [-1,1]");
}

}  // namespace detail

// Eq. 1: s_I = argmin_s D(g(s), I) with g frozen. The style starts at zero,
// noise is sampled once from the seed and held fixed, and every layer is an
// independent free vector. Returns (best style, noise, loss trace); the trace
// holds the loss before each step plus the final value.
template <typename T>
std::tuple<StyleVector<T>, NoiseInput<T>, std::vector<double>> project(
    const GeneratorModel<T>& model, const Tensor<T>& target,
    const FeatureExtractor<T>* extractor, const DistanceConfig& dcfg,
    const ProjectionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  detail::check_target(model, target);

  NoiseInput<T> noise = model.sample_noise(derive_seed(seed, "projection-noise"));
  auto noise_batch = model.batch_noise({&noise});
  BoundDistance<T> dist(extractor, dcfg, target);

  const int L = model.num_style_layers(), D = model.style_dim();
  std::vector<ad::Var<T>> styles;
  for (int l = 0; l < L; ++l)
    styles.push_back(ad::parameter(Tensor<T>({1, D}), "style" + std::to_string(l)));
  Adam<T> opt(styles, static_cast<T>(cfg.step_size));

  std::vector<double> trace;
  double best_loss = std::numeric_limits<double>::infinity();
  Tensor<T> best_style({L, D});
  detail::ImprovementWindow window(cfg.window, cfg.tolerance);

  for (int iter = 0;; ++iter) {
    auto loss = dist.loss(model.synthesis_forward(styles, noise_batch));
    const double lv = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(lv))
      throw OptimizationError("projection loss became non-finite", iter);
    trace.push_back(lv);
    if (lv < best_loss) {
      best_loss = lv;
      for (int l = 0; l < L; ++l)
        for (int d = 0; d < D; ++d) best_style.at(l, d) = styles[l].value().at(0, d);
    }
    if (iter >= cfg.max_iters || lv == 0.0 || window.record(lv)) break;
    opt.zero_grad();
    ad::backward(loss);
    opt.step();
  }
  return {StyleVector<T>(std::move(best_style)), std::move(noise), std::move(trace)};
}

// Eq. 3: g_I = argmin_g D(g(s_I), I) with s_I and noise frozen. Returns a new
// model; the input model is untouched. Only parameters under the configured
// name prefixes move.
template <typename T>
GeneratorModel<T> shift(const GeneratorModel<T>& model, const StyleVector<T>& projected,
                        const NoiseInput<T>& noise, const Tensor<T>& target,
                        const FeatureExtractor<T>* extractor, const DistanceConfig& dcfg,
                        const ShiftConfig& cfg, std::vector<double>* trace_out = nullptr) {
  cfg.validate();
  detail::check_target(model, target);

  GeneratorModel<T> shifted = model.clone();
  auto params = shifted.parameters(cfg.param_groups);
  if (params.empty())
    throw InputError("shift parameter groups match no parameters");
  auto noise_batch = shifted.batch_noise({&noise});
  auto styles = shifted.style_constants(projected);
  BoundDistance<T> dist(extractor, dcfg, target);
  Adam<T> opt(params, static_cast<T>(cfg.step_size));

  std::vector<double> trace;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Tensor<T>> best_values;
  for (const auto& p : params) best_values.push_back(p.value());
  detail::ImprovementWindow window(cfg.window, cfg.tolerance);

  for (int iter = 0;; ++iter) {
    auto loss = dist.loss(shifted.synthesis_forward(styles, noise_batch));
    const double lv = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(lv)) throw OptimizationError("shift loss became non-finite", iter);
    trace.push_back(lv);
    if (lv < best_loss) {
      best_loss = lv;
      for (std::size_t i = 0; i < params.size(); ++i) best_values[i] = params[i].value();
    }
    if (iter >= cfg.max_iters || lv == 0.0 || window.record(lv)) break;
    opt.zero_grad();
    ad::backward(loss);
    opt.step();
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value() = best_values[i];
  if (trace_out) *trace_out = std::move(trace);
  return shifted;
}

// Steps 2-3 of the pipeline: project, then shift with the shared noise.
template <typename T>
AdaptationResult<T> adapt_one_shot(const GeneratorModel<T>& model, const Tensor<T>& target,
                                   const FeatureExtractor<T>* extractor,
                                   const DistanceConfig& dcfg, const ProjectionConfig& pcfg,
                                   const ShiftConfig& scfg, std::uint64_t seed) {
  AdaptationResult<T> result;
  result.seed = seed;
  result.target_sha256 = detail::tensor_sha256(target);
  result.projection_config = pcfg;
  result.shift_config = scfg;
  result.distance_config = dcfg;

  auto [style, noise, ptrace] = project(model, target, extractor, dcfg, pcfg, seed);
  result.projected_style = std::move(style);
  result.noise = std::move(noise);
  result.projection_loss_trace = std::move(ptrace);
  result.shifted_model = shift(model, result.projected_style, result.noise, target,
                               extractor, dcfg, scfg, &result.shift_loss_trace);
  return result;
}

// ---------------------------------------------------------------------------
// Persistence: checkpoint directory for the shifted model plus
// adaptation.json with the style vector, seeds, traces and provenance.

inline nlohmann::json to_json(const ProjectionConfig& c) {
  return {{"max_iters", c.max_iters},
          {"step_size", c.step_size},
          {"tolerance", c.tolerance},
          {"window", c.window}};
}

inline nlohmann::json to_json(const ShiftConfig& c) {
  return {{"max_iters", c.max_iters},
          {"step_size", c.step_size},
          {"param_groups", c.param_groups},
          {"tolerance", c.tolerance},
          {"window", c.window}};
}

inline nlohmann::json to_json(const DistanceConfig& c) {
  return {{"lambda", c.lambda},
          {"use_perceptual", c.use_perceptual},
          {"l2_weight", c.l2_weight},
          {"tap_layers", c.tap_layers},
          {"normalize_per_layer", c.normalize_per_layer},
          {"mean_reduction", c.mean_reduction}};
}

template <typename T>
void save_adaptation(const AdaptationResult<T>& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  result.shifted_model.save(dir / "model");

  const int L = result.projected_style.num_layers(), D = result.projected_style.dim();
  nlohmann::json style = nlohmann::json::array();
  for (int l = 0; l < L; ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (int d = 0; d < D; ++d) row.push_back(static_cast<double>(result.projected_style.layers.at(l, d)));
    style.push_back(std::move(row));
  }
  nlohmann::json j = {
      {"version", kFormatVersion},
      {"style_vector", std::move(style)},
      {"noise_seed", result.noise.seed},
      {"seed", result.seed},
      {"target_sha256", result.target_sha256},
      {"projection_loss_trace", result.projection_loss_trace},
      {"shift_loss_trace", result.shift_loss_trace},
      {"config",
       {{"projection", to_json(result.projection_config)},
        {"shift", to_json(result.shift_config)},
        {"distance", to_json(result.distance_config)}}},
  };
  std::ofstream out(dir / "adaptation.json", std::ios::trunc);
  if (!out) throw PersistenceError("cannot write adaptation.json under " + dir.string());
  out << j.dump(2) << "\n";
}

template <typename T>
AdaptationResult<T> load_adaptation(const std::filesystem::path& dir) {
  std::ifstream in(dir / "adaptation.json");
  if (!in) throw PersistenceError("missing adaptation.json under " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw PersistenceError(std::string("malformed adaptation.json: ") + e.what());
  }
  AdaptationResult<T> r;
  r.shifted_model = GeneratorModel<T>::load(dir / "model");
  auto style = j.at("style_vector");
  const int L = static_cast<int>(style.size());
  const int D = L ? static_cast<int>(style[0].size()) : 0;
  Tensor<T> layers({L, D});
  for (int l = 0; l < L; ++l)
    for (int d = 0; d < D; ++d)
      layers.at(l, d) = static_cast<T>(style[static_cast<std::size_t>(l)]
                                            [static_cast<std::size_t>(d)].get<double>());
  r.projected_style = StyleVector<T>(std::move(layers));
  r.noise = r.shifted_model.sample_noise(j.at("noise_seed").get<std::uint64_t>());
  r.seed = j.value("seed", std::uint64_t{0});
  r.target_sha256 = j.value("target_sha256", "");
  r.projection_loss_trace = j.value("projection_loss_trace", std::vector<double>{});
  r.shift_loss_trace = j.value("shift_loss_trace", std::vector<double>{});
  return r;
}

}  // namespace styleshift
