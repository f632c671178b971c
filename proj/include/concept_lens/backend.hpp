#pragma once

// Model-access contract shared by every stage of the pipeline.
//
// A backend exposes per-layer activations for text (averaged over the token
// positions that belong to the text itself, after chat-template wrapping)
// and per-patch activations for images. Backends that can differentiate the
// image path additionally return pixel gradients pull-style: the caller hands
// in dL/dpatches and receives dL/dpixels.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "raster.hpp"

namespace clens {

struct LayerIndex {
  std::size_t value = 0;
  friend auto operator<=>(const LayerIndex&, const LayerIndex&) = default;
};

using Activation = Vector;

struct GridShape {
  int rows = 0;
  int cols = 0;
  int count() const { return rows * cols; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

struct PatchCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
};

// Row-major patch order: patch i sits at (x = i % cols, y = i / cols).
inline std::vector<PatchCoord> grid_coords(GridShape grid) {
  std::vector<PatchCoord> coords;
  coords.reserve(static_cast<std::size_t>(grid.count()));
  for (int y = 0; y < grid.rows; ++y)
    for (int x = 0; x < grid.cols; ++x) coords.push_back({x, y});
  return coords;
}

struct PatchActivations {
  Matrix patches;  // N x H, one row per patch
  GridShape grid;
  std::vector<PatchCoord> coords;

  int count() const { return static_cast<int>(patches.rows()); }
  int hidden_dim() const { return static_cast<int>(patches.cols()); }
};

struct BackendDescriptor {
  std::string name;
  int hidden_dim = 0;
  int layer_count = 0;
  int image_resolution = 0;
  GridShape patch_grid;
};

struct BackendSpec {
  std::string name = "toy";
  std::string endpoint;      // adapter URL, required for anything but "toy"
  std::string weights_path;  // forwarded to the adapter's /load
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendDescriptor describe() const = 0;

  // Activations at the token positions of `text` inside the chat template,
  // one vector per token, in order.
  virtual std::vector<Activation> token_activations(std::string_view text, LayerIndex layer) const = 0;

  // Forward pass without the [0,1] range check. Augmented images may leave
  // the unit range during synthesis; backends clamp internally only if their
  // preprocessing demands it.
  virtual PatchActivations forward_patches(const Image& image, LayerIndex layer) const = 0;

  virtual bool supports_gradients() const { return false; }

  // dL/dpixels given dL/dpatches (N x H) at the same image and layer.
  virtual Image pixel_gradient(const Image& /*image*/, LayerIndex /*layer*/,
                               const Matrix& /*grad_patches*/) const {
    throw CapabilityError("backend '" + describe().name + "' does not provide gradients");
  }

  Activation text_activations(std::string_view text, LayerIndex layer) const {
    if (text.empty()) throw InputError("text must be non-empty");
    check_layer(layer);
    auto tokens = token_activations(text, layer);
    if (tokens.empty()) throw InputError("text '" + std::string(text) + "' tokenises to zero tokens");
    Activation mean = Activation::Zero(tokens.front().size());
    for (const auto& t : tokens) mean += t;
    return mean / static_cast<double>(tokens.size());
  }

  PatchActivations image_patch_activations(const Image& image, LayerIndex layer) const {
    check_image_shape(image);
    if (!image.within_unit_range()) throw InputError("image pixels must lie in [0, 1]");
    return forward_patches(image, layer);
  }

  void check_layer(LayerIndex layer) const {
    const auto d = describe();
    if (layer.value >= static_cast<std::size_t>(d.layer_count))
      throw RangeError("layer " + std::to_string(layer.value) + " outside [0, " +
                       std::to_string(d.layer_count) + ")");
  }

  void check_image_shape(const Image& image) const {
    const int r = describe().image_resolution;
    if (image.size != r || image.numel() != static_cast<std::size_t>(r) * r * kChannels)
      throw InputError("image must be " + std::to_string(r) + "x" + std::to_string(r) + "x3, got size " +
                       std::to_string(image.size));
  }
};

}  // namespace clens
