#pragma once

// Baseline-centred textual concept directions and the concept catalogue.

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "backend.hpp"
#include "minitoml.hpp"
#include "random.hpp"
#include "resources.hpp"

namespace clens {

struct LanguageBaseline {
  Vector mean_activation;
  LayerIndex layer;
  std::vector<std::string> words;
  std::string id;
};

struct ConceptVector {
  Vector direction;
  std::string concept_text;
  LayerIndex layer;
  std::string baseline_id;
};

inline std::string word_list_id(const std::vector<std::string>& words) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& w : words) h = fnv1a64(w + "\n", h);
  std::ostringstream os;
  os << "words:" << words.size() << ":" << std::hex << h;
  return os.str();
}

// One word per line; blank lines and '#' comments are ignored. Duplicates
// are kept.
inline std::vector<std::string> parse_word_list(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    auto e = line.find_last_not_of(" \t\r");
    words.push_back(line.substr(b, e - b + 1));
  }
  return words;
}

inline std::vector<std::string> default_baseline_words() { return parse_word_list(resources::kBaselineWords); }

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline LanguageBaseline compute_language_baseline(const Backend& backend, const std::vector<std::string>& words,
                                                  LayerIndex layer) {
  if (words.empty()) throw InputError("baseline word list is empty");
  backend.check_layer(layer);
  LanguageBaseline b;
  b.layer = layer;
  b.words = words;
  b.id = word_list_id(words);
  b.mean_activation = Vector::Zero(backend.describe().hidden_dim);
  for (const auto& w : words) b.mean_activation += backend.text_activations(w, layer);
  b.mean_activation /= static_cast<double>(words.size());
  return b;
}

inline ConceptVector concept_direction(const Backend& backend, std::string_view concept_text, LayerIndex layer,
                                       const LanguageBaseline& baseline) {
  if (baseline.layer != layer)
    throw InputError("baseline computed for layer " + std::to_string(baseline.layer.value) + ", requested layer " +
                     std::to_string(layer.value));
  ConceptVector cv;
  cv.direction = backend.text_activations(concept_text, layer) - baseline.mean_activation;
  cv.concept_text = std::string(concept_text);
  cv.layer = layer;
  cv.baseline_id = baseline.id;
  return cv;
}

struct Category {
  std::string name;
  std::string hint;  // noun used in the hinted question
  std::vector<std::string> concepts;
};

struct ConceptCatalogue {
  std::vector<Category> categories;

  const Category* find(std::string_view name) const {
    for (const auto& c : categories)
      if (c.name == name) return &c;
    return nullptr;
  }
  std::size_t concept_count() const {
    std::size_t n = 0;
    for (const auto& c : categories) n += c.concepts.size();
    return n;
  }
};

// Root keys are categories (string arrays); an optional [hints] table maps
// category -> hint noun. Missing hints fall back to the category name.
inline ConceptCatalogue parse_catalogue(std::string_view text, const std::string& source = "<catalogue>") {
  auto doc = toml::parse(text, source);
  if (doc.empty()) throw ParseError(source, 1, 1, "catalogue is empty");
  ConceptCatalogue cat;
  const toml::Table& root = doc.tables.front();
  for (const auto& [name, value] : root.entries) {
    Category c;
    c.name = name;
    c.hint = name;
    c.concepts = value.as_string_list();
    if (c.concepts.empty()) value.fail("category '" + name + "' has no concepts");
    std::set<std::string> seen;
    for (const auto& s : c.concepts)
      if (!seen.insert(s).second) value.fail("duplicate concept '" + s + "' in category '" + name + "'");
    cat.categories.push_back(std::move(c));
  }
  for (const auto& t : doc.tables) {
    if (t.name.empty()) continue;
    if (t.name != "hints") throw ParseError(source, t.line, 1, "unknown section [" + t.name + "]");
    for (const auto& [name, value] : t.entries) {
      auto it = std::find_if(cat.categories.begin(), cat.categories.end(),
                             [&](const Category& c) { return c.name == name; });
      if (it == cat.categories.end()) value.fail("hint for unknown category '" + name + "'");
      it->hint = value.as_string();
    }
  }
  if (cat.categories.empty()) throw ParseError(source, 1, 1, "catalogue defines no categories");
  return cat;
}

inline ConceptCatalogue default_catalogue() { return parse_catalogue(resources::kCatalogue, "catalogue_default"); }

inline ConceptCatalogue load_catalogue(const std::string& path) { return parse_catalogue(read_text_file(path), path); }

}  // namespace clens
