#pragma once

// Experiment configuration: a flat TOML file with per-layer override
// tables. `to_toml` prints the fully resolved configuration, which parses
// back to an identical config.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "backend.hpp"
#include "concepts.hpp"
#include "judge.hpp"
#include "minitoml.hpp"
#include "synth.hpp"

namespace clens {

inline const std::vector<std::size_t>& paper_sweep_layers() {
  static const std::vector<std::size_t> layers{1, 5, 10, 15, 20, 25, 30};
  return layers;
}

inline constexpr const char* kToyCatalogueName = "@toy";

// Groups the toy backend's planted concepts so toy sweeps have categories.
inline ConceptCatalogue toy_catalogue() {
  return parse_catalogue(R"(fruit = ["apple", "orange"]
animals = ["frog", "octopus", "lion", "parrot"]
objects = ["kettle", "tree"]
other = ["jupiter", "winter"]

[hints]
fruit = "fruit"
animals = "animal"
objects = "object"
other = "thing"
)",
                         "toy catalogue");
}

// Per-layer values; unset fields fall back to the shared sections.
struct LayerOverride {
  std::optional<double> learning_rate, temperature, momentum, grad_clip_norm, sigma_start, sigma_end, noise_sigma;
  std::optional<int> steps, batch_size, max_shift;
};

struct RemoteJudgeSettings {
  std::string base_url = "https://api.openai.com/v1";
  std::string token_env = "CONCEPT_LENS_JUDGE_TOKEN";
  std::string describer_model = "gpt-5";
  std::string grader_model = "gpt-5-mini";
  std::optional<double> temperature;
  std::string log = "judge_requests.jsonl";  // relative to the run directory
  double max_requests_per_second = 0.0;
};

struct JudgeSettings {
  bool enabled = false;
  std::string client = "offline";  // offline | remote
  std::vector<ProtocolKind> protocols{ProtocolKind::open, ProtocolKind::hinted};
  int samples = 10;
  QuestionWording wording = QuestionWording::guess;
  double recognition_threshold = 0.5;
  int max_concurrency = 4;
  RemoteJudgeSettings remote;
};

struct ExperimentConfig {
  std::string run_id = "default";
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  int workers = 1;
  BackendSpec backend;
  int resolution = 64;  // must match what the backend reports
  std::vector<LayerIndex> layers;
  std::vector<std::string> categories;  // empty: every catalogue category
  std::vector<std::string> concepts;    // empty: every concept of the chosen categories
  std::string catalogue;                // empty: bundled catalogue; "@toy": planted toy concepts
  std::string baseline_words;           // empty: bundled list
  SynthesisConfig synthesis;            // shared values
  std::map<std::size_t, LayerOverride> layer_overrides;
  JudgeSettings judge;

  SynthesisConfig synthesis_for(LayerIndex layer) const {
    SynthesisConfig c = synthesis;
    auto it = layer_overrides.find(layer.value);
    if (it == layer_overrides.end()) return c;
    const auto& o = it->second;
    auto& opt = c.optimizer;
    if (o.learning_rate) opt.learning_rate = *o.learning_rate;
    if (o.temperature) opt.temperature = *o.temperature;
    if (o.momentum) opt.momentum = *o.momentum;
    if (o.grad_clip_norm) opt.grad_clip_norm = *o.grad_clip_norm;
    if (o.sigma_start) opt.sigma_start = *o.sigma_start;
    if (o.sigma_end) opt.sigma_end = *o.sigma_end;
    if (o.steps) opt.steps = *o.steps;
    if (o.batch_size) opt.batch_size = *o.batch_size;
    if (o.max_shift) c.augmentation.max_shift = *o.max_shift;
    if (o.noise_sigma) c.augmentation.noise_sigma = *o.noise_sigma;
    return c;
  }

  ConceptCatalogue load_catalogue_selection() const {
    if (catalogue.empty()) return default_catalogue();
    if (catalogue == kToyCatalogueName) return toy_catalogue();
    return clens::load_catalogue(catalogue);
  }

  std::vector<std::string> baseline_word_list() const {
    return baseline_words.empty() ? default_baseline_words() : parse_word_list(read_text_file(baseline_words));
  }

  void validate() const {
    if (run_id.empty() || run_id.find('/') != std::string::npos) throw InputError("run_id must be a plain name");
    if (workers < 1) throw InputError("workers must be at least 1");
    if (layers.empty()) throw InputError("at least one layer is required");
    stack_resolutions(resolution);
    for (LayerIndex l : layers) {
      if (!layer_overrides.count(l.value))
        throw InputError("layer " + std::to_string(l.value) + " has no [layer." + std::to_string(l.value) +
                         "] table");
      synthesis_for(l).optimizer.validate();
      synthesis_for(l).augmentation.validate();
    }
    const auto cat = load_catalogue_selection();
    for (const auto& name : categories)
      if (!cat.find(name)) throw InputError("unknown category '" + name + "'");
    for (const auto& c : concepts) {
      bool found = false;
      for (const auto& category : cat.categories)
        if (categories.empty() || std::find(categories.begin(), categories.end(), category.name) != categories.end())
          for (const auto& k : category.concepts) found = found || k == c;
      if (!found) throw InputError("concept '" + c + "' is not in the selected categories");
    }
    if (judge.samples < 1) throw InputError("judge.samples must be at least 1");
    if (judge.client != "offline" && judge.client != "remote") throw InputError("judge.client must be offline or remote");
    if (judge.protocols.empty()) throw InputError("judge.protocols must not be empty");
    if (!(judge.recognition_threshold >= 0.0 && judge.recognition_threshold <= 1.0))
      throw InputError("judge.recognition_threshold must lie in [0, 1]");
    if (judge.max_concurrency < 1) throw InputError("judge.max_concurrency must be at least 1");
  }
};

// Defaults for a named backend. Real backends get the published sweep
// layers with the two per-layer regimes; the toy backend sweeps all four of
// its layers with the toy presets.
inline ExperimentConfig default_experiment_config(const std::string& backend_name = "toy", int resolution = 0) {
  ExperimentConfig c;
  c.backend.name = backend_name;
  if (backend_name == "toy") {
    c.resolution = resolution ? resolution : ToyBackendConfig{}.resolution;
    c.synthesis = toy_synthesis_config();
    c.catalogue = kToyCatalogueName;
    for (std::size_t l = 0; l < static_cast<std::size_t>(ToyBackendConfig{}.layer_count); ++l) {
      c.layers.push_back({l});
      c.layer_overrides[l] = {};
      c.layer_overrides[l].learning_rate = c.synthesis.optimizer.learning_rate;
      c.layer_overrides[l].temperature = c.synthesis.optimizer.temperature;
    }
    return c;
  }
  c.resolution = resolution ? resolution : 448;
  c.synthesis = SynthesisConfig{};
  for (std::size_t l : paper_sweep_layers()) {
    c.layers.push_back({l});
    const auto p = paper_layer_preset({l});
    c.layer_overrides[l].learning_rate = p.learning_rate;
    c.layer_overrides[l].temperature = p.temperature;
  }
  return c;
}

namespace detail {

inline std::string toml_list(const std::vector<std::string>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + toml::quote(v[i]);
  return s + "]";
}

template <typename T>
std::string toml_int_list(const std::vector<T>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

}  // namespace detail

inline std::string to_toml(const ExperimentConfig& c) {
  using toml::format_double;
  using toml::quote;
  std::ostringstream o;
  o << "run_id = " << quote(c.run_id) << "\n";
  o << "output_dir = " << quote(c.output_dir) << "\n";
  o << "seed = " << c.seed << "\n";
  o << "workers = " << c.workers << "\n";
  std::vector<std::size_t> layers;
  for (auto l : c.layers) layers.push_back(l.value);
  o << "layers = " << detail::toml_int_list(layers) << "\n";
  o << "categories = " << detail::toml_list(c.categories) << "\n";
  o << "concepts = " << detail::toml_list(c.concepts) << "\n";
  o << "catalogue = " << quote(c.catalogue) << "\n";
  o << "baseline_words = " << quote(c.baseline_words) << "\n";

  o << "\n[backend]\n";
  o << "name = " << quote(c.backend.name) << "\n";
  o << "endpoint = " << quote(c.backend.endpoint) << "\n";
  o << "weights_path = " << quote(c.backend.weights_path) << "\n";
  o << "resolution = " << c.resolution << "\n";

  const auto& s = c.synthesis;
  o << "\n[synthesis]\n";
  o << "# component resolutions, derived from backend.resolution\n";
  o << "resolutions = " << detail::toml_int_list(stack_resolutions(c.resolution)) << "\n";
  o << "steps = " << s.optimizer.steps << "\n";
  o << "batch_size = " << s.optimizer.batch_size << "\n";
  o << "learning_rate = " << format_double(s.optimizer.learning_rate) << "\n";
  o << "temperature = " << format_double(s.optimizer.temperature) << "\n";
  o << "momentum = " << format_double(s.optimizer.momentum) << "\n";
  o << "grad_clip_norm = " << format_double(s.optimizer.grad_clip_norm) << "\n";
  o << "sigma_start = " << format_double(s.optimizer.sigma_start) << "\n";
  o << "sigma_end = " << format_double(s.optimizer.sigma_end) << "\n";
  o << "aggregation = " << quote(to_string(s.aggregation)) << "\n";
  o << "snapshot_every = " << s.snapshot_every << "\n";
  o << "clamp_augmented = " << (s.clamp_augmented ? "true" : "false") << "\n";

  o << "\n[augmentation]\n";
  o << "max_shift = " << s.augmentation.max_shift << "\n";
  o << "noise_sigma = " << format_double(s.augmentation.noise_sigma) << "\n";

  for (const auto& [layer, ov] : c.layer_overrides) {
    o << "\n[layer." << layer << "]\n";
    auto d = [&](const char* k, const std::optional<double>& v) {
      if (v) o << k << " = " << format_double(*v) << "\n";
    };
    auto i = [&](const char* k, const std::optional<int>& v) {
      if (v) o << k << " = " << *v << "\n";
    };
    d("learning_rate", ov.learning_rate);
    d("temperature", ov.temperature);
    d("momentum", ov.momentum);
    d("grad_clip_norm", ov.grad_clip_norm);
    d("sigma_start", ov.sigma_start);
    d("sigma_end", ov.sigma_end);
    i("steps", ov.steps);
    i("batch_size", ov.batch_size);
    i("max_shift", ov.max_shift);
    d("noise_sigma", ov.noise_sigma);
  }

  const auto& j = c.judge;
  o << "\n[judge]\n";
  o << "enabled = " << (j.enabled ? "true" : "false") << "\n";
  o << "client = " << quote(j.client) << "\n";
  std::vector<std::string> protos;
  for (auto p : j.protocols) protos.push_back(to_string(p));
  o << "protocols = " << detail::toml_list(protos) << "\n";
  o << "samples = " << j.samples << "\n";
  o << "wording = " << quote(to_string(j.wording)) << "\n";
  o << "recognition_threshold = " << format_double(j.recognition_threshold) << "\n";
  o << "max_concurrency = " << j.max_concurrency << "\n";

  o << "\n[judge.remote]\n";
  o << "base_url = " << quote(j.remote.base_url) << "\n";
  o << "token_env = " << quote(j.remote.token_env) << "\n";
  o << "describer_model = " << quote(j.remote.describer_model) << "\n";
  o << "grader_model = " << quote(j.remote.grader_model) << "\n";
  if (j.remote.temperature) o << "temperature = " << format_double(*j.remote.temperature) << "\n";
  o << "log = " << quote(j.remote.log) << "\n";
  o << "max_requests_per_second = " << format_double(j.remote.max_requests_per_second) << "\n";
  return o.str();
}

namespace detail {

// Walks a table, dispatching each key to a handler; unknown keys are errors.
struct KeyReader {
  const toml::Table& table;
  std::map<std::string, std::function<void(const toml::Value&)>> handlers;

  void run() const {
    for (const auto& [k, v] : table.entries) {
      auto it = handlers.find(k);
      if (it == handlers.end())
        v.fail("unknown key '" + k + "'" + (table.name.empty() ? "" : " in [" + table.name + "]"));
      it->second(v);
    }
  }
};

inline int to_int(const toml::Value& v) {
  const auto i = v.as_int();
  if (i < INT32_MIN || i > INT32_MAX) v.fail("integer out of range");
  return static_cast<int>(i);
}

inline std::size_t to_layer(const toml::Value& v) {
  const auto i = v.as_int();
  if (i < 0) v.fail("layer index must be non-negative");
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// Missing keys keep the defaults of the named backend. Layer tables merge
// field by field into the default per-layer presets; every swept layer must
// end up with a table.
inline ExperimentConfig parse_experiment_config(std::string_view text, const std::string& source = "<config>") {
  const auto doc = toml::parse(text, source);
  std::string backend_name = "toy";
  std::optional<int> resolution;
  if (const auto* b = doc.find("backend")) {
    if (const auto* v = b->find("name")) backend_name = v->as_string();
    if (const auto* v = b->find("resolution")) resolution = detail::to_int(*v);
  }
  ExperimentConfig c = default_experiment_config(backend_name, resolution.value_or(0));
  std::optional<std::vector<LayerIndex>> layers;
  std::map<std::size_t, LayerOverride> overrides;

  for (const auto& table : doc.tables) {
    using detail::to_int;
    auto& opt = c.synthesis.optimizer;
    if (table.name.empty()) {
      detail::KeyReader{table,
                        {{"run_id", [&](auto& v) { c.run_id = v.as_string(); }},
                         {"output_dir", [&](auto& v) { c.output_dir = v.as_string(); }},
                         {"seed",
                          [&](auto& v) {
                            if (v.as_int() < 0) v.fail("seed must be non-negative");
                            c.seed = static_cast<std::uint64_t>(v.as_int());
                          }},
                         {"workers", [&](auto& v) { c.workers = to_int(v); }},
                         {"layers",
                          [&](auto& v) {
                            layers.emplace();
                            for (const auto& e : v.as_array()) layers->push_back({detail::to_layer(e)});
                          }},
                         {"categories", [&](auto& v) { c.categories = v.as_string_list(); }},
                         {"concepts", [&](auto& v) { c.concepts = v.as_string_list(); }},
                         {"catalogue", [&](auto& v) { c.catalogue = v.as_string(); }},
                         {"baseline_words", [&](auto& v) { c.baseline_words = v.as_string(); }}}}
          .run();
    } else if (table.name == "backend") {
      detail::KeyReader{table,
                        {{"name", [&](auto&) {}},
                         {"resolution", [&](auto&) {}},
                         {"endpoint", [&](auto& v) { c.backend.endpoint = v.as_string(); }},
                         {"weights_path", [&](auto& v) { c.backend.weights_path = v.as_string(); }}}}
          .run();
    } else if (table.name == "synthesis") {
      detail::KeyReader{
          table,
          {{"resolutions",
            [&](auto& v) {
              std::vector<int> got;
              for (auto i : v.as_int_list()) got.push_back(static_cast<int>(i));
              if (got != stack_resolutions(c.resolution))
                v.fail("resolutions do not match the stack derived from backend.resolution");
            }},
           {"steps", [&](auto& v) { opt.steps = to_int(v); }},
           {"batch_size", [&](auto& v) { opt.batch_size = to_int(v); }},
           {"learning_rate", [&](auto& v) { opt.learning_rate = v.as_double(); }},
           {"temperature", [&](auto& v) { opt.temperature = v.as_double(); }},
           {"momentum", [&](auto& v) { opt.momentum = v.as_double(); }},
           {"grad_clip_norm", [&](auto& v) { opt.grad_clip_norm = v.as_double(); }},
           {"sigma_start", [&](auto& v) { opt.sigma_start = v.as_double(); }},
           {"sigma_end", [&](auto& v) { opt.sigma_end = v.as_double(); }},
           {"aggregation",
            [&](auto& v) {
              try {
                c.synthesis.aggregation = parse_aggregation_mode(v.as_string());
              } catch (const InputError& e) {
                v.fail(e.what());
              }
            }},
           {"snapshot_every", [&](auto& v) { c.synthesis.snapshot_every = to_int(v); }},
           {"clamp_augmented", [&](auto& v) { c.synthesis.clamp_augmented = v.as_bool(); }}}}
          .run();
    } else if (table.name == "augmentation") {
      detail::KeyReader{table,
                        {{"max_shift", [&](auto& v) { c.synthesis.augmentation.max_shift = to_int(v); }},
                         {"noise_sigma", [&](auto& v) { c.synthesis.augmentation.noise_sigma = v.as_double(); }}}}
          .run();
    } else if (table.name.rfind("layer.", 0) == 0) {
      const std::string idx = table.name.substr(6);
      std::size_t layer = 0;
      auto [p, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), layer);
      if (ec != std::errc() || p != idx.data() + idx.size())
        throw ParseError(source, table.line, 1, "bad layer table name [" + table.name + "]");
      auto& o = overrides[layer];
      detail::KeyReader{table,
                        {{"learning_rate", [&](auto& v) { o.learning_rate = v.as_double(); }},
                         {"temperature", [&](auto& v) { o.temperature = v.as_double(); }},
                         {"momentum", [&](auto& v) { o.momentum = v.as_double(); }},
                         {"grad_clip_norm", [&](auto& v) { o.grad_clip_norm = v.as_double(); }},
                         {"sigma_start", [&](auto& v) { o.sigma_start = v.as_double(); }},
                         {"sigma_end", [&](auto& v) { o.sigma_end = v.as_double(); }},
                         {"steps", [&](auto& v) { o.steps = to_int(v); }},
                         {"batch_size", [&](auto& v) { o.batch_size = to_int(v); }},
                         {"max_shift", [&](auto& v) { o.max_shift = to_int(v); }},
                         {"noise_sigma", [&](auto& v) { o.noise_sigma = v.as_double(); }}}}
          .run();
    } else if (table.name == "judge") {
      auto& j = c.judge;
      detail::KeyReader{table,
                        {{"enabled", [&](auto& v) { j.enabled = v.as_bool(); }},
                         {"client", [&](auto& v) { j.client = v.as_string(); }},
                         {"protocols",
                          [&](auto& v) {
                            j.protocols.clear();
                            for (const auto& e : v.as_array()) try {
                                j.protocols.push_back(parse_protocol_kind(e.as_string()));
                              } catch (const InputError& err) {
                                e.fail(err.what());
                              }
                          }},
                         {"samples", [&](auto& v) { j.samples = to_int(v); }},
                         {"wording",
                          [&](auto& v) {
                            try {
                              j.wording = parse_question_wording(v.as_string());
                            } catch (const InputError& e) {
                              v.fail(e.what());
                            }
                          }},
                         {"recognition_threshold", [&](auto& v) { j.recognition_threshold = v.as_double(); }},
                         {"max_concurrency", [&](auto& v) { j.max_concurrency = to_int(v); }}}}
          .run();
    } else if (table.name == "judge.remote") {
      auto& r = c.judge.remote;
      detail::KeyReader{table,
                        {{"base_url", [&](auto& v) { r.base_url = v.as_string(); }},
                         {"token_env", [&](auto& v) { r.token_env = v.as_string(); }},
                         {"describer_model", [&](auto& v) { r.describer_model = v.as_string(); }},
                         {"grader_model", [&](auto& v) { r.grader_model = v.as_string(); }},
                         {"temperature", [&](auto& v) { r.temperature = v.as_double(); }},
                         {"log", [&](auto& v) { r.log = v.as_string(); }},
                         {"max_requests_per_second", [&](auto& v) { r.max_requests_per_second = v.as_double(); }}}}
          .run();
    } else {
      throw ParseError(source, table.line, 1, "unknown section [" + table.name + "]");
    }
  }
  for (const auto& [l, o] : overrides) {
    auto& d = c.layer_overrides[l];
    auto merge = [](auto& dst, const auto& src) {
      if (src) dst = src;
    };
    merge(d.learning_rate, o.learning_rate);
    merge(d.temperature, o.temperature);
    merge(d.momentum, o.momentum);
    merge(d.grad_clip_norm, o.grad_clip_norm);
    merge(d.sigma_start, o.sigma_start);
    merge(d.sigma_end, o.sigma_end);
    merge(d.steps, o.steps);
    merge(d.batch_size, o.batch_size);
    merge(d.max_shift, o.max_shift);
    merge(d.noise_sigma, o.noise_sigma);
  }
  if (layers) {
    c.layers = *layers;
    // default tables for layers the file does not sweep are dropped
    for (auto it = c.layer_overrides.begin(); it != c.layer_overrides.end();) {
      const bool listed = std::find(c.layers.begin(), c.layers.end(), LayerIndex{it->first}) != c.layers.end();
      it = listed || overrides.count(it->first) ? std::next(it) : c.layer_overrides.erase(it);
    }
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_text_file(path), path);
}

}  // namespace clens
