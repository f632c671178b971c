#pragma once

// Image representation from patch activations: grey-image centring, cosine
// scores against the target, a Gaussian spatial prior and a temperature
// softmax over (score + log prior). Mean mode ignores scores and prior.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "backend.hpp"
#include "concepts.hpp"

namespace clens {

struct ImageBaseline {
  Vector mean_patch;
  LayerIndex layer;
};

enum class AggregationMode { attention, mean };

inline std::string to_string(AggregationMode m) { return m == AggregationMode::attention ? "attention" : "mean"; }

inline AggregationMode parse_aggregation_mode(std::string_view s) {
  if (s == "attention") return AggregationMode::attention;
  if (s == "mean") return AggregationMode::mean;
  throw InputError("unknown aggregation mode '" + std::string(s) + "'");
}

struct PriorCenter {
  double x = 0.0;
  double y = 0.0;
};

struct AggregationConfig {
  double temperature = 0.5;
  double prior_sigma = 2.0;               // patch-grid units
  std::optional<PriorCenter> prior_center;  // defaults to the grid centre
  AggregationMode mode = AggregationMode::attention;

  void validate() const {
    if (!(temperature > 0.0)) throw InputError("temperature must be positive");
    if (!(prior_sigma > 0.0)) throw InputError("prior sigma must be positive");
  }
};

struct ImageRepresentation {
  Vector vector;
  std::vector<double> weights;
  std::vector<double> scores;
};

inline PriorCenter grid_center(GridShape grid) { return {(grid.cols - 1) / 2.0, (grid.rows - 1) / 2.0}; }

inline Image grey_image(int resolution) { return Image(resolution, 0.5); }

inline ImageBaseline compute_image_baseline(const Backend& backend, LayerIndex layer) {
  const auto patches = backend.image_patch_activations(grey_image(backend.describe().image_resolution), layer);
  return {patches.patches.colwise().mean().transpose(), layer};
}

// log g_i evaluated analytically so small sigma cannot underflow to log(0).
inline std::vector<double> log_gaussian_prior(const std::vector<PatchCoord>& coords, PriorCenter center,
                                              double sigma) {
  if (!(sigma > 0.0)) throw InputError("prior sigma must be positive");
  std::vector<double> out;
  out.reserve(coords.size());
  for (const auto& c : coords) {
    const double dx = c.x - center.x;
    const double dy = c.y - center.y;
    out.push_back(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  }
  return out;
}

inline std::vector<double> gaussian_prior(const std::vector<PatchCoord>& coords, PriorCenter center, double sigma) {
  auto g = log_gaussian_prior(coords, center, sigma);
  for (auto& v : g) v = std::exp(v);
  return g;
}

inline std::vector<double> gaussian_prior(GridShape grid, PriorCenter center, double sigma) {
  return gaussian_prior(grid_coords(grid), center, sigma);
}

inline void check_dims(const PatchActivations& patches, const Vector& v, const char* what) {
  if (patches.hidden_dim() != v.size())
    throw InputError(std::string(what) + " has dimension " + std::to_string(v.size()) + ", patches have " +
                     std::to_string(patches.hidden_dim()));
}

inline Matrix centred_patches(const PatchActivations& patches, const ImageBaseline& baseline) {
  check_dims(patches, baseline.mean_patch, "image baseline");
  return patches.patches.rowwise() - baseline.mean_patch.transpose();
}

inline std::vector<double> semantic_scores(const PatchActivations& patches, const ImageBaseline& baseline,
                                           const ConceptVector& target) {
  check_dims(patches, target.direction, "target direction");
  const Matrix cent = centred_patches(patches, baseline);
  std::vector<double> s(static_cast<std::size_t>(cent.rows()));
  for (Eigen::Index i = 0; i < cent.rows(); ++i)
    s[static_cast<std::size_t>(i)] = std::clamp(cosine(cent.row(i).transpose(), target.direction), -1.0, 1.0);
  return s;
}

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - m));
  for (auto& v : out) v /= z;
  return out;
}

}  // namespace detail

// Forward pass keeping what the backward pass needs.
struct AggregationTrace {
  Matrix centred;  // N x H
  ImageRepresentation rep;
};

inline AggregationTrace aggregate_traced(const PatchActivations& patches, const ImageBaseline& baseline,
                                         const ConceptVector& target, const AggregationConfig& config) {
  config.validate();
  if (patches.count() < 1) throw InputError("no patches");
  check_dims(patches, target.direction, "target direction");
  AggregationTrace tr;
  tr.centred = centred_patches(patches, baseline);
  const auto n = static_cast<std::size_t>(tr.centred.rows());
  tr.rep.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    tr.rep.scores[i] =
        std::clamp(cosine(tr.centred.row(static_cast<Eigen::Index>(i)).transpose(), target.direction), -1.0, 1.0);

  if (config.mode == AggregationMode::mean) {
    tr.rep.weights.assign(n, 1.0 / static_cast<double>(n));
  } else {
    const PriorCenter center = config.prior_center.value_or(grid_center(patches.grid));
    const auto log_g = log_gaussian_prior(patches.coords, center, config.prior_sigma);
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) logits[i] = (tr.rep.scores[i] + log_g[i]) / config.temperature;
    tr.rep.weights = detail::softmax(logits);
  }
  Eigen::Map<const Vector> w(tr.rep.weights.data(), static_cast<Eigen::Index>(n));
  tr.rep.vector = tr.centred.transpose() * w;
  return tr;
}

inline ImageRepresentation aggregate(const PatchActivations& patches, const ImageBaseline& baseline,
                                     const ConceptVector& target, const AggregationConfig& config) {
  return aggregate_traced(patches, baseline, target, config).rep;
}

// dL/dpatches (N x H) from dL/d(rep.vector).
inline Matrix aggregate_backward(const AggregationTrace& tr, const ConceptVector& target,
                                 const AggregationConfig& config, const Vector& grad_vector) {
  const auto n = tr.centred.rows();
  Matrix grad = Matrix::Zero(n, tr.centred.cols());
  const auto& alpha = tr.rep.weights;
  for (Eigen::Index i = 0; i < n; ++i) grad.row(i) = alpha[static_cast<std::size_t>(i)] * grad_vector.transpose();
  if (config.mode == AggregationMode::mean) return grad;

  // softmax Jacobian: dL/dz_i = a_i (dL/da_i - sum_j a_j dL/da_j), z = (s + log g) / tau
  Vector dalpha = tr.centred * grad_vector;
  double mean_dalpha = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) mean_dalpha += alpha[static_cast<std::size_t>(i)] * dalpha(i);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ds = alpha[static_cast<std::size_t>(i)] * (dalpha(i) - mean_dalpha) / config.temperature;
    if (ds != 0.0) grad.row(i) += ds * cosine_grad(tr.centred.row(i).transpose(), target.direction).transpose();
  }
  return grad;
}

}  // namespace clens
