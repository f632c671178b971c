#pragma once

// Direct ascent synthesis: the image is a grey base plus half the tanh of a
// sum of bilinearly upscaled trainable components at resolutions
// R, R-20, ... down to the smallest value >= 8. Each optimisation step scores
// a batch of independently shifted and noised copies against the target
// concept direction and takes a clipped momentum-SGD step on all components.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "backend.hpp"
#include "concepts.hpp"
#include "imrep.hpp"
#include "random.hpp"
#include "raster.hpp"

namespace clens {

inline constexpr int kResolutionStep = 20;
inline constexpr int kSmallestResolution = 8;

inline std::vector<int> stack_resolutions(int resolution) {
  if (resolution < kSmallestResolution)
    throw InputError("stack resolution must be at least " + std::to_string(kSmallestResolution));
  std::vector<int> out;
  for (int r = resolution; r >= kSmallestResolution; r -= kResolutionStep) out.push_back(r);
  return out;
}

struct MultiResStack {
  int resolution = 0;               // R, the composed image size
  std::vector<Raster> components;   // descending resolution

  std::vector<int> resolutions() const {
    std::vector<int> out;
    for (const auto& c : components) out.push_back(c.size);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& c : components) n += c.numel();
    return n;
  }
  bool all_finite() const {
    for (const auto& c : components)
      if (!c.all_finite()) return false;
    return true;
  }
};

// Zero-initialised stack over an explicit resolution set (all <= R).
inline MultiResStack make_stack(int resolution, const std::vector<int>& resolutions) {
  if (resolution < kSmallestResolution) throw InputError("stack resolution must be at least 8");
  if (resolutions.empty()) throw InputError("stack needs at least one component");
  MultiResStack s;
  s.resolution = resolution;
  for (int r : resolutions) {
    if (r < 1 || r > resolution) throw InputError("component resolution out of range");
    s.components.emplace_back(r, 0.0);
  }
  return s;
}

// Components start at zero, so the first composed image is exactly the grey
// base. The seed is recorded by callers but does not affect initialisation.
inline MultiResStack init_stack(int resolution, std::uint64_t /*seed*/ = 0) {
  return make_stack(resolution, stack_resolutions(resolution));
}

inline Raster stack_perturbation(const MultiResStack& stack) {
  Raster pert(stack.resolution, 0.0);
  for (const auto& c : stack.components) {
    if (c.size == stack.resolution)
      pert += c;
    else
      Resizer(c.size, stack.resolution).accumulate(c, pert);
  }
  return pert;
}

inline Image compose_from_perturbation(const Raster& pert) {
  Image img(pert.size);
  for (std::size_t i = 0; i < pert.numel(); ++i) img.data[i] = 0.5 + 0.5 * std::tanh(pert.data[i]);
  return img;
}

inline Image compose(const MultiResStack& stack) { return compose_from_perturbation(stack_perturbation(stack)); }

struct AugmentationConfig {
  int max_shift = 56;        // pixels, each direction
  double noise_sigma = 0.1;  // std of additive per-pixel Gaussian noise

  void validate() const {
    if (max_shift < 0) throw InputError("max_shift must be non-negative");
    if (!(noise_sigma >= 0.0)) throw InputError("noise_sigma must be non-negative");
  }
};

struct AugmentSample {
  int dx = 0;
  int dy = 0;
};

namespace detail {

inline int clamp_index(int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

}  // namespace detail

// Upscale to (R + max_shift) square, translate by an independent horizontal
// and vertical shift in [-max_shift, max_shift] (border pixels replicate
// outside the canvas), centre-crop back to R, then add unclamped noise.
// Shifts are drawn before the noise, so the same seed with noise_sigma = 0
// reproduces the shifted-only image.
inline Image augment(const Image& image, const AugmentationConfig& config, std::uint64_t seed,
                     AugmentSample* sample_out = nullptr) {
  config.validate();
  const int r = image.size;
  const int canvas_size = r + config.max_shift;
  const int off = config.max_shift / 2;
  Rng rng(seed);
  AugmentSample s;
  s.dx = static_cast<int>(rng.uniform_int(-config.max_shift, config.max_shift));
  s.dy = static_cast<int>(rng.uniform_int(-config.max_shift, config.max_shift));
  if (sample_out) *sample_out = s;

  const Raster canvas = resize_bilinear(image, canvas_size);
  Image out(r);
  for (int y = 0; y < r; ++y) {
    const int sy = detail::clamp_index(y + off - s.dy, canvas_size);
    for (int x = 0; x < r; ++x) {
      const int sx = detail::clamp_index(x + off - s.dx, canvas_size);
      for (int c = 0; c < kChannels; ++c) out.at(y, x, c) = canvas.at(sy, sx, c);
    }
  }
  if (config.noise_sigma > 0.0)
    for (auto& v : out.data) v += config.noise_sigma * rng.normal();
  return out;
}

// Adjoint of augment with respect to its input image (noise is additive).
inline Image augment_adjoint(const Image& grad_out, const AugmentationConfig& config, AugmentSample s) {
  const int r = grad_out.size;
  const int canvas_size = r + config.max_shift;
  const int off = config.max_shift / 2;
  Raster grad_canvas(canvas_size, 0.0);
  for (int y = 0; y < r; ++y) {
    const int sy = detail::clamp_index(y + off - s.dy, canvas_size);
    for (int x = 0; x < r; ++x) {
      const int sx = detail::clamp_index(x + off - s.dx, canvas_size);
      for (int c = 0; c < kChannels; ++c) grad_canvas.at(sy, sx, c) += grad_out.at(y, x, c);
    }
  }
  if (canvas_size == r) return grad_canvas;
  Image grad(r, 0.0);
  Resizer(r, canvas_size).accumulate_adjoint(grad_canvas, grad);
  return grad;
}

struct OptimizerConfig {
  double learning_rate = 0.15;
  double momentum = 0.9;
  int steps = 600;
  int batch_size = 8;
  double grad_clip_norm = 1.0;
  double sigma_start = 2.0;
  double sigma_end = 16.0;
  double temperature = 0.5;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
    if (steps < 1) throw InputError("steps must be at least 1");
    if (batch_size < 1) throw InputError("batch_size must be at least 1");
    if (!(grad_clip_norm > 0.0)) throw InputError("grad_clip_norm must be positive");
    if (!(sigma_start > 0.0 && sigma_end > 0.0)) throw InputError("sigma schedule must be positive");
    if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  }

  // Linear per-step interpolation from sigma_start (step 0) to sigma_end (last step).
  double sigma_at(int step) const {
    if (steps <= 1) return sigma_start;
    return sigma_start + (sigma_end - sigma_start) * static_cast<double>(step) / (steps - 1);
  }
};

struct SynthesisConfig {
  OptimizerConfig optimizer;
  AugmentationConfig augmentation;
  AggregationMode aggregation = AggregationMode::attention;
  int snapshot_every = 0;  // 0 disables snapshots
  // Whether augmented pixels are clamped to [0,1] before the backend.
  bool clamp_augmented = false;

  AggregationConfig aggregation_at(int step) const {
    AggregationConfig a;
    a.temperature = optimizer.temperature;
    a.prior_sigma = optimizer.sigma_at(step);
    a.mode = aggregation;
    return a;
  }
};

struct LayerPreset {
  double learning_rate;
  double temperature;
};

// Two regimes published for a 34-layer model: layers 10-25 use
// (0.15, 0.5) and the outer layers 1, 5 and 30 use (0.04, 0.005). Unlisted
// layers take the regime of the nearest range: [8, 27] mid, otherwise outer.
inline LayerPreset paper_layer_preset(LayerIndex layer) {
  if (layer.value >= 8 && layer.value <= 27) return {0.15, 0.5};
  return {0.04, 0.005};
}

inline SynthesisConfig paper_synthesis_config(LayerIndex layer) {
  SynthesisConfig c;
  const auto p = paper_layer_preset(layer);
  c.optimizer.learning_rate = p.learning_rate;
  c.optimizer.temperature = p.temperature;
  return c;
}

// Presets for the 64-pixel toy backend. The toy patchifier is linear and so
// far less shift-tolerant than a real vision encoder; shifts of a few pixels
// keep the synthesised patterns recognisable at layer 0.
inline SynthesisConfig toy_synthesis_config() {
  SynthesisConfig c;
  c.optimizer.learning_rate = 0.15;
  c.optimizer.temperature = 0.5;
  c.optimizer.steps = 300;
  c.augmentation.max_shift = 2;
  return c;
}

// Everything the loss needs besides the stack.
struct LossSetup {
  const Backend& backend;
  const ConceptVector& target;
  const ImageBaseline& baseline;
  AggregationConfig aggregation;
  AugmentationConfig augmentation;
  bool clamp_augmented = false;
};

struct LossGradient {
  double value = 0.0;
  std::vector<Raster> grads;  // one per stack component

  double global_norm() const {
    double s = 0.0;
    for (const auto& g : grads)
      for (double v : g.data) s += v * v;
    return std::sqrt(s);
  }
};

namespace detail {

inline void require_gradients(const Backend& backend) {
  if (!backend.supports_gradients())
    throw CapabilityError("backend '" + backend.describe().name + "' cannot be used for synthesis: no gradients");
}

inline std::uint64_t batch_seed(std::uint64_t seed, int element) {
  return mix_seed(seed, static_cast<std::uint64_t>(element));
}

}  // namespace detail

// -cosine(target, rep(augment(compose(stack)))) averaged over `batch_size`
// independent augmentations, with its gradient w.r.t. every component.
inline LossGradient loss_and_gradient(const MultiResStack& stack, const LossSetup& setup, std::uint64_t seed,
                                      int batch_size = 1, bool with_gradient = true) {
  detail::require_gradients(setup.backend);
  if (batch_size < 1) throw InputError("batch_size must be at least 1");
  const auto layer = setup.target.layer;
  const Raster pert = stack_perturbation(stack);
  const Image image = compose_from_perturbation(pert);

  LossGradient out;
  Image grad_image(stack.resolution, 0.0);
  for (int b = 0; b < batch_size; ++b) {
    AugmentSample sample;
    Image aug = augment(image, setup.augmentation, detail::batch_seed(seed, b), &sample);
    std::vector<bool> clamped;
    if (setup.clamp_augmented) {
      clamped.resize(aug.numel());
      for (std::size_t i = 0; i < aug.numel(); ++i) {
        double c = std::clamp(aug.data[i], 0.0, 1.0);
        clamped[i] = c != aug.data[i];
        aug.data[i] = c;
      }
    }
    const auto patches = setup.backend.forward_patches(aug, layer);
    const auto trace = aggregate_traced(patches, setup.baseline, setup.target, setup.aggregation);
    out.value += -cosine(trace.rep.vector, setup.target.direction) / batch_size;
    if (!with_gradient) continue;

    const Vector gv = -cosine_grad(trace.rep.vector, setup.target.direction) / batch_size;
    const Matrix gp = aggregate_backward(trace, setup.target, setup.aggregation, gv);
    Image g_aug = setup.backend.pixel_gradient(aug, layer, gp);
    if (setup.clamp_augmented)
      for (std::size_t i = 0; i < g_aug.numel(); ++i)
        if (clamped[i]) g_aug.data[i] = 0.0;
    grad_image += augment_adjoint(g_aug, setup.augmentation, sample);
  }
  if (!with_gradient) return out;

  Raster grad_pert(stack.resolution);
  for (std::size_t i = 0; i < pert.numel(); ++i) {
    const double t = std::tanh(pert.data[i]);
    grad_pert.data[i] = grad_image.data[i] * 0.5 * (1.0 - t * t);
  }
  for (const auto& c : stack.components) {
    Raster g(c.size, 0.0);
    if (c.size == stack.resolution)
      g = grad_pert;
    else
      Resizer(c.size, stack.resolution).accumulate_adjoint(grad_pert, g);
    out.grads.push_back(std::move(g));
  }
  return out;
}

inline double loss(const MultiResStack& stack, const LossSetup& setup, std::uint64_t seed, int batch_size = 1) {
  return loss_and_gradient(stack, setup, seed, batch_size, false).value;
}

struct Snapshot {
  int step = 0;
  Image image;
};

struct SynthesisRun {
  std::string concept_text;
  LayerIndex layer;
  SynthesisConfig config;
  std::uint64_t seed = 0;
  std::vector<double> loss_trajectory;
  std::vector<Snapshot> snapshots;
  Image final_image;
  double final_cosine = 0.0;  // unaugmented image, aggregation at the final sigma
  std::vector<int> resolutions;
};

using StepCallback = std::function<void(int step, double loss)>;

// Cosine between the target and the aggregated representation of `image`.
inline double representation_cosine(const Backend& backend, const Image& image, const ConceptVector& target,
                                     const ImageBaseline& baseline, const AggregationConfig& agg) {
  const auto patches = backend.forward_patches(image, target.layer);
  return cosine(aggregate(patches, baseline, target, agg).vector, target.direction);
}

inline SynthesisRun synthesize(const ConceptVector& target, const Backend& backend, const ImageBaseline& baseline,
                               const SynthesisConfig& config, std::uint64_t seed,
                               const StepCallback& on_step = nullptr) {
  config.optimizer.validate();
  config.augmentation.validate();
  detail::require_gradients(backend);
  backend.check_layer(target.layer);
  if (baseline.layer != target.layer) throw InputError("image baseline layer does not match target layer");
  const auto& opt = config.optimizer;

  SynthesisRun run;
  run.concept_text = target.concept_text;
  run.layer = target.layer;
  run.config = config;
  run.seed = seed;

  MultiResStack stack = init_stack(backend.describe().image_resolution, seed);
  run.resolutions = stack.resolutions();
  std::vector<Raster> velocity;
  for (const auto& c : stack.components) velocity.emplace_back(c.size, 0.0);

  for (int step = 0; step < opt.steps; ++step) {
    LossSetup setup{backend, target, baseline, config.aggregation_at(step), config.augmentation,
                    config.clamp_augmented};
    LossGradient lg = loss_and_gradient(stack, setup, mix_seed(seed, 0x100000000ULL + step), opt.batch_size);
    const double norm = lg.global_norm();
    if (!std::isfinite(lg.value) || !std::isfinite(norm))
      throw NumericalError("non-finite loss while synthesising '" + target.concept_text + "'",
                           static_cast<std::size_t>(step));
    const double scale = norm > opt.grad_clip_norm ? opt.grad_clip_norm / norm : 1.0;
    for (std::size_t k = 0; k < stack.components.size(); ++k) {
      auto& v = velocity[k].data;
      auto& p = stack.components[k].data;
      const auto& g = lg.grads[k].data;
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = opt.momentum * v[i] + scale * g[i];
        p[i] -= opt.learning_rate * v[i];
      }
    }
    run.loss_trajectory.push_back(lg.value);
    if (on_step) on_step(step, lg.value);
    if (config.snapshot_every > 0 && (step + 1) % config.snapshot_every == 0)
      run.snapshots.push_back({step + 1, compose(stack)});
  }
  run.final_image = compose(stack);
  run.final_cosine =
      representation_cosine(backend, run.final_image, target, baseline, config.aggregation_at(opt.steps - 1));
  return run;
}

}  // namespace clens
