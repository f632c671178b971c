#pragma once

// Backends that live in another process (typically a Python process holding
// a real VLM) reached over a small JSON-over-HTTP protocol, plus the lookup
// of backends by configuration name.
//
//   GET  <base>/describe         -> {name, hidden_dim, layer_count, image_resolution,
//                                    patch_grid: [rows, cols], supports_gradients}
//   POST <base>/load             {model, weights_path}
//   POST <base>/tokens           {text, layer} -> {activations: [[...], ...]}
//   POST <base>/patches          {layer, image} -> {rows, cols, data}
//   POST <base>/pixel_gradient   {layer, image, grad_patches} -> {size, data}
//
// Images travel as {size, data} with HWC float64 data; matrices as
// {rows, cols, data} in row-major order. `data` is base64 of little-endian
// float64. Chat-template handling stays on the adapter side: /tokens returns
// only the positions that belong to the text itself.

#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "backend.hpp"
#include "errors.hpp"
#include "http_util.hpp"
#include "toy_backend.hpp"

namespace clens {

namespace wire {

inline nlohmann::json encode_image(const Image& img) {
  return {{"size", img.size}, {"data", http::encode_f64(img.data)}};
}

inline Image decode_image(const nlohmann::json& j) {
  Image img(j.at("size").get<int>());
  auto data = http::decode_f64(j.at("data").get<std::string>());
  if (data.size() != img.numel()) throw InputError("image payload has the wrong length");
  img.data = std::move(data);
  return img;
}

inline nlohmann::json encode_matrix(const Matrix& m) {
  std::vector<double> flat(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", http::encode_f64(flat)}};
}

inline Matrix decode_matrix(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = http::decode_f64(j.at("data").get<std::string>());
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw InputError("matrix payload has the wrong length");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline nlohmann::json encode_descriptor(const BackendDescriptor& d, bool gradients) {
  return {{"name", d.name},
          {"hidden_dim", d.hidden_dim},
          {"layer_count", d.layer_count},
          {"image_resolution", d.image_resolution},
          {"patch_grid", {d.patch_grid.rows, d.patch_grid.cols}},
          {"supports_gradients", gradients}};
}

}  // namespace wire

class RemoteBackend : public Backend {
 public:
  RemoteBackend(const std::string& endpoint, const std::string& model = "", const std::string& weights_path = "",
                int timeout_seconds = 600)
      : url_(http::split_url(endpoint)), timeout_(timeout_seconds) {
    if (!weights_path.empty()) post("/load", {{"model", model}, {"weights_path", weights_path}});
    auto cli = client();
    auto res = cli.Get(url_.path + "/describe");
    const auto j = check(res, "/describe");
    desc_.name = j.at("name").get<std::string>();
    desc_.hidden_dim = j.at("hidden_dim").get<int>();
    desc_.layer_count = j.at("layer_count").get<int>();
    desc_.image_resolution = j.at("image_resolution").get<int>();
    desc_.patch_grid = {j.at("patch_grid").at(0).get<int>(), j.at("patch_grid").at(1).get<int>()};
    gradients_ = j.value("supports_gradients", false);
  }

  BackendDescriptor describe() const override { return desc_; }
  bool supports_gradients() const override { return gradients_; }

  std::vector<Activation> token_activations(std::string_view text, LayerIndex layer) const override {
    const auto j = post("/tokens", {{"text", std::string(text)}, {"layer", layer.value}});
    std::vector<Activation> out;
    for (const auto& row : j.at("activations")) {
      const auto v = row.get<std::vector<double>>();
      if (static_cast<int>(v.size()) != desc_.hidden_dim) throw TransportError("token activation has wrong width");
      out.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    return out;
  }

  PatchActivations forward_patches(const Image& image, LayerIndex layer) const override {
    const auto j = post("/patches", {{"layer", layer.value}, {"image", wire::encode_image(image)}});
    PatchActivations p;
    p.patches = wire::decode_matrix(j);
    p.grid = desc_.patch_grid;
    p.coords = grid_coords(p.grid);
    if (p.count() != p.grid.count() || p.hidden_dim() != desc_.hidden_dim)
      throw TransportError("patch activations do not match the described grid");
    return p;
  }

  Image pixel_gradient(const Image& image, LayerIndex layer, const Matrix& grad_patches) const override {
    if (!gradients_) return Backend::pixel_gradient(image, layer, grad_patches);
    const auto j = post("/pixel_gradient", {{"layer", layer.value},
                                            {"image", wire::encode_image(image)},
                                            {"grad_patches", wire::encode_matrix(grad_patches)}});
    return wire::decode_image(j);
  }

 private:
  httplib::Client client() const {
    httplib::Client cli(url_.origin);
    cli.set_connection_timeout(timeout_, 0);
    cli.set_read_timeout(timeout_, 0);
    cli.set_write_timeout(timeout_, 0);
    return cli;
  }

  static nlohmann::json check(const httplib::Result& res, const std::string& route) {
    if (!res) throw TransportError(route + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
      std::string msg = route + ": HTTP " + std::to_string(res->status);
      if (!res->body.empty()) msg += ": " + res->body.substr(0, 200);
      // 4xx means the adapter rejected the input; surface it as such.
      if (res->status >= 400 && res->status < 500) throw InputError(msg);
      throw TransportError(msg);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(route + ": malformed JSON: " + e.what());
    }
  }

  nlohmann::json post(const std::string& route, const nlohmann::json& body) const {
    auto cli = client();
    auto res = cli.Post(url_.path + route, body.dump(), "application/json");
    return check(res, route);
  }

  http::Url url_;
  int timeout_;
  BackendDescriptor desc_;
  bool gradients_ = false;
};

// Serves any in-process backend over the protocol above. Used to expose the
// toy backend to out-of-process tools and in tests of the client.
inline void serve_backend(httplib::Server& server, const Backend& backend, const std::string& prefix = "") {
  auto guard = [](httplib::Response& res, auto&& fn) {
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const InputError& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    } catch (const RangeError& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(e.what(), "text/plain");
    }
  };
  server.Get(prefix + "/describe", [&backend, guard](const httplib::Request&, httplib::Response& res) {
    guard(res, [&] { return wire::encode_descriptor(backend.describe(), backend.supports_gradients()); });
  });
  server.Post(prefix + "/tokens", [&backend, guard](const httplib::Request& req, httplib::Response& res) {
    guard(res, [&] {
      const auto j = nlohmann::json::parse(req.body);
      const LayerIndex layer{j.at("layer").get<std::size_t>()};
      backend.check_layer(layer);
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& a : backend.token_activations(j.at("text").get<std::string>(), layer))
        rows.push_back(std::vector<double>(a.data(), a.data() + a.size()));
      return nlohmann::json{{"activations", rows}};
    });
  });
  server.Post(prefix + "/patches", [&backend, guard](const httplib::Request& req, httplib::Response& res) {
    guard(res, [&] {
      const auto j = nlohmann::json::parse(req.body);
      const LayerIndex layer{j.at("layer").get<std::size_t>()};
      backend.check_layer(layer);
      const Image img = wire::decode_image(j.at("image"));
      backend.check_image_shape(img);
      return wire::encode_matrix(backend.forward_patches(img, layer).patches);
    });
  });
  server.Post(prefix + "/pixel_gradient", [&backend, guard](const httplib::Request& req, httplib::Response& res) {
    guard(res, [&] {
      const auto j = nlohmann::json::parse(req.body);
      const LayerIndex layer{j.at("layer").get<std::size_t>()};
      backend.check_layer(layer);
      const Image img = wire::decode_image(j.at("image"));
      backend.check_image_shape(img);
      return wire::encode_image(backend.pixel_gradient(img, layer, wire::decode_matrix(j.at("grad_patches"))));
    });
  });
}

// Input resolution each known real adapter must report.
inline int expected_resolution(const std::string& name) {
  if (name == "gemma3-4b" || name == "internvl3-8b") return 448;
  return 0;
}

inline std::unique_ptr<Backend> make_backend(const BackendSpec& spec) {
  if (spec.name == "toy") {
    if (!spec.endpoint.empty()) throw InputError("the toy backend runs in-process and takes no endpoint");
    return std::make_unique<ToyBackend>();
  }
  if (spec.endpoint.empty())
    throw InputError("backend '" + spec.name + "' needs an adapter endpoint (backend.endpoint)");
  auto b = std::make_unique<RemoteBackend>(spec.endpoint, spec.name, spec.weights_path);
  const int want = expected_resolution(spec.name);
  if (want && b->describe().image_resolution != want)
    throw InputError("adapter for '" + spec.name + "' reports resolution " +
                     std::to_string(b->describe().image_resolution) + ", expected " + std::to_string(want));
  return b;
}

}  // namespace clens
