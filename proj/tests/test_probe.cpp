#include <catch_amalgamated.hpp>

#include <filesystem>

#include "concept_lens/png_io.hpp"
#include "concept_lens/probe.hpp"
#include "concept_lens/toy_backend.hpp"

using namespace clens;
using Catch::Approx;

namespace {

std::vector<LayerIndex> all_layers() { return {LayerIndex{0}, LayerIndex{1}, LayerIndex{2}, LayerIndex{3}}; }

}  // namespace

TEST_CASE("matched toy corpora separate from mismatched ones", "[probe]") {
  const ToyBackend toy;
  const std::vector<std::string> concepts{"apple", "frog", "kettle"};
  std::vector<ImageCorpus> corpora;
  for (const auto& c : concepts) corpora.push_back(make_toy_corpus(toy, c, 8, 1));
  corpora.push_back(make_noise_corpus(64, 8, 2));
  ProbeOptions opts;
  opts.permutation_iterations = 2000;
  const auto prof = profile(toy, concepts, corpora, all_layers(), parse_metrics("both"), opts);
  REQUIRE(prof.records.size() == 4 * 2 * 3 * 4);
  REQUIRE(prof.tests.size() == 8);
  for (const auto& t : prof.tests) {
    INFO("layer " << t.layer.value << " " << to_string(t.metric));
    REQUIRE(t.matched_mean > t.mismatched_mean);
    REQUIRE(t.p_value < 0.01);
    REQUIRE(t.p_value >= 1.0 / 2001);
  }
  const auto* noise = prof.find("apple", "noise", SimilarityMetric::aggregate, LayerIndex{0});
  REQUIRE(noise != nullptr);
  REQUIRE(noise->control);
  REQUIRE_FALSE(noise->matched);
  REQUIRE(noise->values.size() == 8);
  REQUIRE(noise->ci_low <= noise->mean);
  REQUIRE(noise->mean <= noise->ci_high);
  const auto* m = prof.find("frog", "frog", SimilarityMetric::aggregate, LayerIndex{2});
  REQUIRE(m->matched);
  REQUIRE(m->mean > noise->mean);
}

TEST_CASE("shuffled labels rarely look significant", "[probe]") {
  const ToyBackend toy;
  const std::vector<std::string> concepts{"apple", "frog", "kettle", "lion"};
  std::vector<ImageCorpus> base;
  for (const auto& c : concepts) base.push_back(make_toy_corpus(toy, c, 4, 3));
  Rng rng(9);
  int significant = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    // derangement: no corpus keeps its own name
    std::vector<std::size_t> perm{0, 1, 2, 3};
    do rng.shuffle(perm.begin(), perm.end());
    while (perm[0] == 0 || perm[1] == 1 || perm[2] == 2 || perm[3] == 3);
    auto corpora = base;
    for (std::size_t i = 0; i < corpora.size(); ++i) corpora[i].name = concepts[perm[i]];
    ProbeOptions opts;
    opts.permutation_iterations = 500;
    opts.seed = static_cast<std::uint64_t>(trial);
    const auto prof = profile(toy, concepts, corpora, {LayerIndex{1}}, {SimilarityMetric::aggregate}, opts);
    REQUIRE(prof.tests.size() == 1);
    if (prof.tests[0].p_value < 0.05) ++significant;
  }
  REQUIRE(significant <= 2);
}

TEST_CASE("noise corpus and metrics", "[probe]") {
  const auto a = make_noise_corpus(16, 3, 5);
  const auto b = make_noise_corpus(16, 3, 5);
  REQUIRE(a.images == b.images);
  REQUIRE(a.images.size() == 3);
  for (const auto& img : a.images) REQUIRE(img.within_unit_range());
  REQUIRE_THROWS_AS(make_noise_corpus(16, 0, 5), InputError);
  REQUIRE(parse_metrics("both").size() == 2);
  REQUIRE_THROWS_AS(parse_metrics("median"), InputError);

  Matrix cent(2, 2);
  cent << 1, 0, 0, 1;
  REQUIRE(aggregate_similarity(cent, Vector::Unit(2, 0)) == Approx(std::sqrt(0.5)));
  REQUIRE(max_patch_similarity(cent, Vector::Unit(2, 0)) == Approx(1.0));
}

TEST_CASE("probe input errors", "[probe]") {
  const ToyBackend toy;
  REQUIRE_THROWS_AS(make_toy_corpus(toy, "spaceship", 2, 1), InputError);
  const auto lang = compute_language_baseline(toy, default_baseline_words(), LayerIndex{0});
  const auto dir = concept_direction(toy, "apple", LayerIndex{0}, lang);
  REQUIRE_THROWS_AS(corpus_similarity(toy, dir, make_noise_corpus(32, 2, 1), SimilarityMetric::aggregate, LayerIndex{0}),
                    InputError);
  REQUIRE_THROWS_AS(corpus_similarity(toy, dir, make_noise_corpus(64, 2, 1), SimilarityMetric::aggregate, LayerIndex{1}),
                    InputError);
  ImageCorpus empty{"e", {}, ""};
  REQUIRE_THROWS_AS(empty.validate(), InputError);
  REQUIRE_THROWS_AS(load_corpus_dir("x", "/nonexistent/dir", 64), InputError);
}

TEST_CASE("corpus directories load sorted and resized", "[probe]") {
  const auto dir = std::filesystem::temp_directory_path() / "clens_probe_corpus";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_png(dir / "b.png", Image(32, 0.25));
  write_png(dir / "a.png", Image(32, 0.75));
  const auto c = load_corpus_dir("things", dir, 64);
  REQUIRE(c.images.size() == 2);
  REQUIRE(c.images[0].size == 64);
  REQUIRE(c.images[0].at(10, 10, 0) == Approx(0.75).margin(1.0 / 255));
  std::filesystem::remove_all(dir);
}
