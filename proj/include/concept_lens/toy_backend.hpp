#pragma once

// Deterministic differentiable stand-in for a vision-language model.
//
// Image path: a fixed-seed linear patchifier maps each patch into a subspace
// S of the hidden space, followed by two residual tanh blocks per layer whose
// outputs also stay in S. The complement of S is unreachable from images.
//
// Text path: a single planted word activates its unit-norm concept axis plus
// a per-layer common component. Other tokens get small hashed embeddings, and
// tokens after the first in a multi-token text carry a small positional
// offset. Because the same axes are reachable from pixels, ground-truth
// alignment between the two modalities is known.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "backend.hpp"
#include "random.hpp"

namespace clens {

inline const std::vector<std::string>& toy_planted_concepts() {
  static const std::vector<std::string> names = {"apple",  "orange", "frog",   "octopus", "jupiter",
                                                  "kettle", "winter", "tree",   "lion",    "parrot"};
  return names;
}

struct ToyBackendConfig {
  int resolution = 64;
  int patch = 8;
  int hidden_dim = 16;
  int layer_count = 4;
  int extra_axes = 3;  // reachable non-concept directions
  double pattern_gain = 1.0;
  double block_scale = 0.25;
  double position_scale = 0.05;
  double common_norm = 3.0;
  double word_norm = 0.2;
  double offset_scale = 0.01;
  std::uint64_t seed = 20251018;
};

// Whitespace split with punctuation characters as separate tokens.
inline std::vector<std::string> toy_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  flush();
  return out;
}

class ToyBackend final : public Backend {
 public:
  struct Block {
    Matrix in;   // H x H
    Vector bias;
    Matrix out;  // H x H, columns in S
  };

  struct Parameters {
    Matrix basis;              // H x H orthonormal; first |S| columns span S
    Matrix patterns;           // D x |S| orthonormal pixel patterns
    Matrix patchifier;         // H x D
    Vector embed_bias;         // H
    Matrix positions;          // H x N
    std::vector<Block> blocks; // 2 per layer
    Matrix common;             // H x layers
  };

  struct TemplateActivations {
    std::vector<std::string> tokens;
    std::vector<Activation> activations;
    std::size_t text_begin = 0;
    std::size_t text_end = 0;
  };

  explicit ToyBackend(ToyBackendConfig cfg = {}) : cfg_(cfg) {
    const int concepts = static_cast<int>(toy_planted_concepts().size());
    const int reach = concepts + cfg_.extra_axes;
    if (cfg_.resolution % cfg_.patch != 0) throw InputError("toy resolution must be a multiple of the patch size");
    if (cfg_.hidden_dim <= reach) throw InputError("toy hidden_dim must exceed the reachable subspace");
    if (cfg_.patch * cfg_.patch * kChannels < reach) throw InputError("toy patch too small for planted patterns");
    grid_ = {cfg_.resolution / cfg_.patch, cfg_.resolution / cfg_.patch};
    coords_ = grid_coords(grid_);
    build(reach);
  }

  const ToyBackendConfig& config() const { return cfg_; }
  const Parameters& params() const { return p_; }
  int reachable_dim() const { return static_cast<int>(p_.patterns.cols()); }

  BackendDescriptor describe() const override {
    return {"toy", cfg_.hidden_dim, cfg_.layer_count, cfg_.resolution, grid_};
  }

  bool supports_gradients() const override { return true; }

  std::optional<std::size_t> concept_index(std::string_view name) const {
    const auto& names = toy_planted_concepts();
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }

  Vector concept_axis(std::size_t k) const { return p_.basis.col(static_cast<Eigen::Index>(k)); }

  // Unit vector orthogonal to everything the image path can produce.
  Vector null_direction() const { return p_.basis.col(cfg_.hidden_dim - 1); }

  // Token embedding before the common component and positional offset.
  Vector token_embedding(const std::string& token) const {
    if (auto k = concept_index(token)) return concept_axis(*k);
    Rng rng(mix_seed(cfg_.seed, fnv1a64(token)));
    Vector v(cfg_.hidden_dim);
    for (auto& x : v) x = rng.normal();
    return v.normalized() * cfg_.word_norm;
  }

  Vector position_offset(const std::string& token, std::size_t pos_in_text) const {
    if (pos_in_text == 0) return Vector::Zero(cfg_.hidden_dim);
    Rng rng(mix_seed(cfg_.seed ^ 0x5eedULL, fnv1a64(token) + pos_in_text));
    Vector v(cfg_.hidden_dim);
    for (auto& x : v) x = rng.normal();
    return v.normalized() * (cfg_.offset_scale * static_cast<double>(pos_in_text));
  }

  // Chat-template wrapping: every template position with its activation.
  TemplateActivations template_activations(std::string_view text, LayerIndex layer) const {
    check_layer(layer);
    TemplateActivations t;
    t.tokens = {"<bos>", "<start_of_turn>", "user"};
    auto words = toy_tokenize(text);
    t.text_begin = t.tokens.size();
    t.tokens.insert(t.tokens.end(), words.begin(), words.end());
    t.text_end = t.tokens.size();
    for (const char* m : {"<end_of_turn>", "<start_of_turn>", "model"}) t.tokens.emplace_back(m);
    const Vector common = p_.common.col(static_cast<Eigen::Index>(layer.value));
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
      Vector v = token_embedding(t.tokens[i]) + common;
      if (i >= t.text_begin && i < t.text_end) v += position_offset(t.tokens[i], i - t.text_begin);
      t.activations.push_back(std::move(v));
    }
    return t;
  }

  std::vector<Activation> token_activations(std::string_view text, LayerIndex layer) const override {
    auto t = template_activations(text, layer);
    return {t.activations.begin() + static_cast<std::ptrdiff_t>(t.text_begin),
            t.activations.begin() + static_cast<std::ptrdiff_t>(t.text_end)};
  }

  PatchActivations forward_patches(const Image& image, LayerIndex layer) const override {
    check_image_shape(image);
    check_layer(layer);
    Trace tr = run(image, layer);
    PatchActivations out;
    out.patches = tr.states.back().transpose();
    out.grid = grid_;
    out.coords = coords_;
    return out;
  }

  Image pixel_gradient(const Image& image, LayerIndex layer, const Matrix& grad_patches) const override {
    check_image_shape(image);
    check_layer(layer);
    const int n = grid_.count();
    if (grad_patches.rows() != n || grad_patches.cols() != cfg_.hidden_dim)
      throw InputError("patch gradient must be N x H");
    Trace tr = run(image, layer);
    Matrix g = grad_patches.transpose();  // H x N
    for (std::size_t b = tr.pre.size(); b-- > 0;) {
      const Block& blk = p_.blocks[b];
      Matrix dt = blk.out.transpose() * g;
      dt.array() *= 1.0 - tr.pre[b].array().tanh().square();
      g += blk.in.transpose() * dt;
    }
    Matrix gx = p_.patchifier.transpose() * g;  // D x N
    Image grad(cfg_.resolution);
    scatter_patches(gx, grad);
    return grad;
  }

  // A planted-concept image: tiled concept pattern at the given amplitude
  // with per-pixel jitter, clamped to [0,1]. Used for probe corpora.
  Image render_concept(std::size_t k, std::uint64_t seed, double amplitude = 0.35, double jitter = 0.03) const {
    Rng rng(mix_seed(seed, k + 1000));
    Vector pat = p_.patterns.col(static_cast<Eigen::Index>(k));
    pat /= pat.cwiseAbs().maxCoeff();
    const double amp = amplitude * (0.8 + 0.4 * rng.uniform());
    Matrix x = Matrix::Constant(pat.size(), grid_.count(), 0.5);
    for (int i = 0; i < grid_.count(); ++i) x.col(i) += amp * pat;
    Image img(cfg_.resolution);
    scatter_patches(x, img);
    for (auto& v : img.data) v = std::clamp(v + jitter * rng.normal(), 0.0, 1.0);
    return img;
  }

 private:
  struct Trace {
    std::vector<Matrix> states;  // H x N after embedding and each block
    std::vector<Matrix> pre;     // pre-activations of each block
  };

  int patch_dim() const { return cfg_.patch * cfg_.patch * kChannels; }

  Matrix gather_patches(const Image& img) const {
    const int n = grid_.count();
    Matrix x(patch_dim(), n);
    for (int i = 0; i < n; ++i) {
      const auto [px, py] = coords_[static_cast<std::size_t>(i)];
      int d = 0;
      for (int y = 0; y < cfg_.patch; ++y)
        for (int xx = 0; xx < cfg_.patch; ++xx)
          for (int c = 0; c < kChannels; ++c) x(d++, i) = img.at(py * cfg_.patch + y, px * cfg_.patch + xx, c);
    }
    return x;
  }

  void scatter_patches(const Matrix& x, Image& img) const {
    for (int i = 0; i < grid_.count(); ++i) {
      const auto [px, py] = coords_[static_cast<std::size_t>(i)];
      int d = 0;
      for (int y = 0; y < cfg_.patch; ++y)
        for (int xx = 0; xx < cfg_.patch; ++xx)
          for (int c = 0; c < kChannels; ++c) img.at(py * cfg_.patch + y, px * cfg_.patch + xx, c) = x(d++, i);
    }
  }

  Trace run(const Image& img, LayerIndex layer) const {
    Trace tr;
    Matrix h = p_.patchifier * gather_patches(img);
    h.colwise() += p_.embed_bias;
    h += p_.positions;
    tr.states.push_back(h);
    const std::size_t nblocks = 2 * (layer.value + 1);
    for (std::size_t b = 0; b < nblocks; ++b) {
      const Block& blk = p_.blocks[b];
      Matrix pre = blk.in * h;
      pre.colwise() += blk.bias;
      h += blk.out * pre.array().tanh().matrix();
      tr.pre.push_back(std::move(pre));
      tr.states.push_back(h);
    }
    return tr;
  }

  void build(int reach) {
    const int hd = cfg_.hidden_dim;
    const int d = patch_dim();
    Rng rng(cfg_.seed);
    auto gaussian = [&](int r, int c) {
      Matrix m(r, c);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal();
      return m;
    };

    p_.basis = Eigen::HouseholderQR<Matrix>(gaussian(hd, hd)).householderQ() * Matrix::Identity(hd, hd);
    const Matrix s = p_.basis.leftCols(reach);

    // Smooth per-patch basis: low-order polynomials per colour channel, then
    // random mixtures orthonormalised into the planted pixel patterns.
    std::vector<Vector> smooth;
    const int p = cfg_.patch;
    auto coord = [p](int i) { return p == 1 ? 0.0 : 2.0 * i / (p - 1) - 1.0; };
    const std::array<std::array<int, 2>, 6> powers = {{{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 0}, {0, 2}}};
    for (int c = 0; c < kChannels; ++c)
      for (const auto& pw : powers) {
        Vector f = Vector::Zero(d);
        int idx = 0;
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            for (int cc = 0; cc < kChannels; ++cc, ++idx)
              if (cc == c) f(idx) = std::pow(coord(x), pw[0]) * std::pow(coord(y), pw[1]);
        smooth.push_back(f);
      }
    Matrix mix = gaussian(d, reach) * 0.05;
    for (std::size_t j = 0; j < smooth.size(); ++j) {
      const double weight = (j % powers.size()) == 0 ? 1.0 : 0.5;
      mix += smooth[j].normalized() * (weight * gaussian(1, reach));
    }
    p_.patterns = Eigen::HouseholderQR<Matrix>(mix).householderQ() * Matrix::Identity(d, reach);

    p_.patchifier = cfg_.pattern_gain * s * p_.patterns.transpose();
    p_.embed_bias = s * gaussian(reach, 1) * 0.1;
    p_.positions = s.rightCols(cfg_.extra_axes) * gaussian(cfg_.extra_axes, grid_.count()) * cfg_.position_scale;

    const double scale = cfg_.block_scale / std::sqrt(static_cast<double>(hd));
    for (int b = 0; b < 2 * cfg_.layer_count; ++b) {
      Block blk;
      blk.in = gaussian(hd, hd) * scale;
      blk.bias = gaussian(hd, 1) * 0.1;
      blk.out = s * gaussian(reach, hd) * scale;
      p_.blocks.push_back(std::move(blk));
    }

    p_.common.resize(hd, cfg_.layer_count);
    for (int l = 0; l < cfg_.layer_count; ++l)
      p_.common.col(l) = gaussian(hd, 1).normalized() * cfg_.common_norm;
  }

  ToyBackendConfig cfg_;
  GridShape grid_;
  std::vector<PatchCoord> coords_;
  Parameters p_;
};

}  // namespace clens
