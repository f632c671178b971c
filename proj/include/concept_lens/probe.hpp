#pragma once

// Layer-wise similarity between concept directions and image corpora.
//
// Two metrics per image: "aggregate" (cosine between the direction and the
// mean of the grey-centred patches) and "max_patch" (largest per-patch
// cosine). Matched pairs are concept/corpus pairs sharing a name; corpora
// whose name matches no concept (e.g. white noise) are controls and do not
// enter the permutation test.

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "backend.hpp"
#include "concepts.hpp"
#include "imrep.hpp"
#include "png_io.hpp"
#include "random.hpp"
#include "stats.hpp"
#include "toy_backend.hpp"

namespace clens {

struct ImageCorpus {
  std::string name;
  std::vector<Image> images;
  std::string source;

  void validate() const {
    if (images.empty()) throw InputError("corpus '" + name + "' is empty");
    for (const auto& img : images)
      if (img.size != images.front().size) throw InputError("corpus '" + name + "' mixes image sizes");
  }
};

enum class SimilarityMetric { aggregate, max_patch };

inline std::string to_string(SimilarityMetric m) { return m == SimilarityMetric::aggregate ? "aggregate" : "max_patch"; }

inline std::vector<SimilarityMetric> parse_metrics(std::string_view s) {
  if (s == "aggregate") return {SimilarityMetric::aggregate};
  if (s == "max_patch") return {SimilarityMetric::max_patch};
  if (s == "both") return {SimilarityMetric::aggregate, SimilarityMetric::max_patch};
  throw InputError("unknown metric '" + std::string(s) + "'");
}

// i.i.d. uniform [0,1] pixels.
inline ImageCorpus make_noise_corpus(int resolution, int count, std::uint64_t seed, std::string name = "noise") {
  if (count < 1) throw InputError("noise corpus needs at least one image");
  ImageCorpus c;
  c.name = std::move(name);
  c.source = "noise(" + std::to_string(seed) + "," + std::to_string(count) + ")";
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    Image img(resolution);
    for (auto& v : img.data) v = rng.uniform();
    c.images.push_back(std::move(img));
  }
  return c;
}

// Rendered images of one planted toy concept.
inline ImageCorpus make_toy_corpus(const ToyBackend& toy, const std::string& concept_text, int count,
                                   std::uint64_t seed) {
  const auto k = toy.concept_index(concept_text);
  if (!k) throw InputError("'" + concept_text + "' is not a planted toy concept");
  if (count < 1) throw InputError("toy corpus needs at least one image");
  ImageCorpus c;
  c.name = concept_text;
  c.source = "toy:" + concept_text;
  for (int i = 0; i < count; ++i) c.images.push_back(toy.render_concept(*k, mix_seed(seed, static_cast<std::uint64_t>(i))));
  return c;
}

// Every *.png under `dir` (sorted by path), resized to the backend resolution.
inline ImageCorpus load_corpus_dir(const std::string& name, const std::filesystem::path& dir, int resolution) {
  if (!std::filesystem::is_directory(dir)) throw InputError("corpus directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ImageCorpus c;
  c.name = name;
  c.source = dir.string();
  for (const auto& f : files) c.images.push_back(load_image(f, resolution));
  c.validate();
  return c;
}

inline double aggregate_similarity(const Matrix& centred, const Vector& direction) {
  return std::clamp(cosine(centred.colwise().mean().transpose(), direction), -1.0, 1.0);
}

inline double max_patch_similarity(const Matrix& centred, const Vector& direction) {
  double best = -1.0;
  for (Eigen::Index i = 0; i < centred.rows(); ++i)
    best = std::max(best, cosine(centred.row(i).transpose(), direction));
  return std::clamp(best, -1.0, 1.0);
}

inline std::vector<double> corpus_similarity(const Backend& backend, const ConceptVector& concept_vec,
                                             const ImageCorpus& corpus, SimilarityMetric metric, LayerIndex layer,
                                             const ImageBaseline& baseline) {
  corpus.validate();
  if (concept_vec.layer != layer || baseline.layer != layer)
    throw InputError("concept direction, image baseline and requested layer disagree");
  const int r = backend.describe().image_resolution;
  if (corpus.images.front().size != r)
    throw InputError("corpus '" + corpus.name + "' has resolution " + std::to_string(corpus.images.front().size) +
                     ", backend expects " + std::to_string(r));
  std::vector<double> out;
  out.reserve(corpus.images.size());
  for (const auto& img : corpus.images) {
    const Matrix cent = centred_patches(backend.image_patch_activations(img, layer), baseline);
    out.push_back(metric == SimilarityMetric::aggregate ? aggregate_similarity(cent, concept_vec.direction)
                                                        : max_patch_similarity(cent, concept_vec.direction));
  }
  return out;
}

inline std::vector<double> corpus_similarity(const Backend& backend, const ConceptVector& concept_vec,
                                             const ImageCorpus& corpus, SimilarityMetric metric, LayerIndex layer) {
  return corpus_similarity(backend, concept_vec, corpus, metric, layer, compute_image_baseline(backend, layer));
}

struct SimilarityRecord {
  std::string concept_text;
  std::string corpus;
  SimilarityMetric metric = SimilarityMetric::aggregate;
  LayerIndex layer;
  bool matched = false;
  bool control = false;  // corpus matches no concept
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> values;
};

struct DiscriminationTest {
  LayerIndex layer;
  SimilarityMetric metric = SimilarityMetric::aggregate;
  double matched_mean = 0.0;
  double mismatched_mean = 0.0;
  double p_value = 1.0;
};

struct SimilarityProfile {
  std::vector<SimilarityRecord> records;
  std::vector<DiscriminationTest> tests;
  std::string baseline_id;
  int permutation_iterations = 0;

  const SimilarityRecord* find(std::string_view concept_text, std::string_view corpus, SimilarityMetric metric,
                               LayerIndex layer) const {
    for (const auto& r : records)
      if (r.concept_text == concept_text && r.corpus == corpus && r.metric == metric && r.layer == layer) return &r;
    return nullptr;
  }
};

struct ProbeOptions {
  std::vector<std::string> baseline_words = default_baseline_words();
  int permutation_iterations = 10000;
  std::uint64_t seed = 0;
};

inline SimilarityProfile profile(const Backend& backend, const std::vector<std::string>& concepts,
                                 const std::vector<ImageCorpus>& corpora, const std::vector<LayerIndex>& layers,
                                 const std::vector<SimilarityMetric>& metrics, const ProbeOptions& opts = {}) {
  SimilarityProfile prof;
  prof.permutation_iterations = opts.permutation_iterations;
  prof.baseline_id = word_list_id(opts.baseline_words);
  for (const auto& c : corpora) c.validate();
  auto is_concept = [&](const std::string& name) {
    return std::find(concepts.begin(), concepts.end(), name) != concepts.end();
  };
  for (LayerIndex layer : layers) {
    const auto lang = compute_language_baseline(backend, opts.baseline_words, layer);
    const auto img = compute_image_baseline(backend, layer);
    std::vector<ConceptVector> dirs;
    for (const auto& c : concepts) dirs.push_back(concept_direction(backend, c, layer, lang));
    for (SimilarityMetric metric : metrics) {
      std::vector<double> matched, mismatched;
      for (const auto& dir : dirs) {
        for (const auto& corpus : corpora) {
          SimilarityRecord rec;
          rec.concept_text = dir.concept_text;
          rec.corpus = corpus.name;
          rec.metric = metric;
          rec.layer = layer;
          rec.control = !is_concept(corpus.name);
          rec.matched = corpus.name == dir.concept_text;
          rec.values = corpus_similarity(backend, dir, corpus, metric, layer, img);
          const Interval ci = normal_ci(rec.values);
          rec.mean = ci.mean;
          rec.ci_low = ci.low;
          rec.ci_high = ci.high;
          if (!rec.control) {
            auto& dst = rec.matched ? matched : mismatched;
            dst.insert(dst.end(), rec.values.begin(), rec.values.end());
          }
          prof.records.push_back(std::move(rec));
        }
      }
      if (!matched.empty() && !mismatched.empty()) {
        DiscriminationTest t;
        t.layer = layer;
        t.metric = metric;
        t.matched_mean = mean_of(matched);
        t.mismatched_mean = mean_of(mismatched);
        t.p_value = permutation_test(matched, mismatched, opts.permutation_iterations,
                                     mix_seed(opts.seed, layer.value * 2 + (metric == SimilarityMetric::max_patch)));
        prof.tests.push_back(t);
      }
    }
  }
  return prof;
}

}  // namespace clens
