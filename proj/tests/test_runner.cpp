#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "concept_lens/config.hpp"
#include "concept_lens/manifest.hpp"
#include "concept_lens/report.hpp"
#include "concept_lens/sweep.hpp"
#include "concept_lens/toy_backend.hpp"

using namespace clens;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("clens_runner_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ExperimentConfig small_sweep(const fs::path& out) {
  auto c = default_experiment_config("toy");
  c.output_dir = out.string();
  c.run_id = "r";
  c.seed = 17;
  c.layers = {LayerIndex{0}, LayerIndex{2}};
  c.concepts = {"apple", "frog"};
  c.synthesis.optimizer.steps = 12;
  c.synthesis.optimizer.batch_size = 2;
  c.synthesis.snapshot_every = 6;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Json without_timestamps(Json j) {
  for (const char* k : {"created", "updated"}) j.erase(k);
  for (auto& e : j["entries"]) {
    e.erase("started");
    e.erase("finished");
  }
  return j;
}

ManifestEntry fake_entry(const std::string& cat, const std::string& concept_text, std::size_t layer,
                         std::optional<double> rate, double loss, const std::string& image) {
  ManifestEntry e;
  e.category = cat;
  e.concept_text = concept_text;
  e.layer = layer;
  e.status = "done";
  e.image = image;
  e.trajectory = image;
  e.final_loss = loss;
  if (rate) {
    RecognitionRecord r;
    r.concept_text = concept_text;
    r.category = cat;
    r.layer = LayerIndex{layer};
    r.protocol.samples_per_image = 1;
    r.samples.resize(1);
    r.rate = rate;
    e.recognition.push_back(r);
  }
  return e;
}

}  // namespace

TEST_CASE("config round trip", "[config]") {
  for (const auto& [name, res] : std::vector<std::pair<std::string, int>>{{"toy", 0}, {"gemma3-4b", 448}}) {
    const auto c = default_experiment_config(name, res);
    const auto text = to_toml(c);
    const auto back = parse_experiment_config(text, "rt.toml");
    REQUIRE(to_toml(back) == text);
  }
  const auto c = default_experiment_config("gemma3-4b", 448);
  REQUIRE(c.layers.size() == 7);
  REQUIRE(c.synthesis_for(LayerIndex{1}).optimizer.learning_rate == 0.04);
  REQUIRE(c.synthesis_for(LayerIndex{15}).optimizer.temperature == 0.5);
  REQUIRE(c.synthesis_for(LayerIndex{30}).optimizer.temperature == 0.005);
}

TEST_CASE("layer tables override shared values field by field", "[config]") {
  const auto c = parse_experiment_config(R"(layers = [0, 3]
[synthesis]
steps = 40
[layer.0]
temperature = 0.1
[layer.3]
steps = 5
max_shift = 0
)");
  REQUIRE(c.layers.size() == 2);
  REQUIRE(c.synthesis_for(LayerIndex{0}).optimizer.temperature == 0.1);
  REQUIRE(c.synthesis_for(LayerIndex{0}).optimizer.learning_rate == 0.15);
  REQUIRE(c.synthesis_for(LayerIndex{0}).optimizer.steps == 40);
  REQUIRE(c.synthesis_for(LayerIndex{3}).optimizer.steps == 5);
  REQUIRE(c.synthesis_for(LayerIndex{3}).augmentation.max_shift == 0);
  REQUIRE(c.layer_overrides.count(1) == 0);
  c.validate();
}

TEST_CASE("config validation", "[config]") {
  REQUIRE_THROWS_AS(parse_experiment_config("bogus = 1\n"), ParseError);
  REQUIRE_THROWS_AS(parse_experiment_config("[nowhere]\nx = 1\n"), ParseError);
  REQUIRE_THROWS_AS(parse_experiment_config("[synthesis]\nresolutions = [64, 40]\n"), ParseError);
  auto c = default_experiment_config("toy");
  c.layer_overrides.erase(2);
  REQUIRE_THROWS_AS(c.validate(), InputError);
  c = default_experiment_config("toy");
  c.categories = {"planets"};
  REQUIRE_THROWS_AS(c.validate(), InputError);
  c = default_experiment_config("toy");
  c.categories = {"fruit"};
  c.concepts = {"frog"};
  REQUIRE_THROWS_AS(c.validate(), InputError);
  c = default_experiment_config("toy");
  c.run_id = "a/b";
  REQUIRE_THROWS_AS(c.validate(), InputError);
  c = default_experiment_config("toy");
  c.judge.recognition_threshold = 1.5;
  REQUIRE_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("sweep writes one image and trajectory per pair", "[sweep]") {
  const auto out = fresh_dir("basic");
  const ToyBackend toy;
  const auto res = run_sweep(small_sweep(out), toy);
  REQUIRE(res.computed == 4);
  REQUIRE(res.all_done());
  REQUIRE(res.manifest.complete);
  std::size_t pngs = 0, trajectories = 0, manifests = 0, snapshots = 0;
  for (const auto& e : fs::recursive_directory_iterator(out)) {
    const auto name = e.path().filename().string();
    pngs += name == "image.png";
    trajectories += name == "trajectory.json";
    manifests += name == "manifest.json";
    snapshots += name.rfind("snapshot_", 0) == 0;
  }
  REQUIRE(pngs == 4);
  REQUIRE(trajectories == 4);
  REQUIRE(manifests == 1);
  REQUIRE(snapshots == 8);
  REQUIRE(validate_manifest(res.manifest_path).ok());

  const auto m = load_manifest(res.manifest_path);
  REQUIRE(m.entries.size() == 4);
  const auto* e = m.find("fruit/apple@2");
  REQUIRE(e != nullptr);
  REQUIRE(e->image == "fruit/apple/layer2/image.png");
  REQUIRE(e->seed == pair_seed(17, "fruit", "apple", LayerIndex{2}));
  REQUIRE(e->synthesis.at("steps") == 12);
  const auto traj = read_json(res.run_dir / e->trajectory);
  REQUIRE(traj.at("loss").size() == 12);
  REQUIRE(load_image(res.run_dir / e->image, 64).within_unit_range());
}

TEST_CASE("interrupted sweeps resume without recomputing", "[sweep]") {
  const auto out = fresh_dir("resume");
  const ToyBackend toy;
  const auto cfg = small_sweep(out);
  SweepOptions first;
  first.max_new_pairs = 2;
  const auto a = run_sweep(cfg, toy, first);
  REQUIRE(a.computed == 2);
  REQUIRE(a.pending == 2);
  REQUIRE_FALSE(a.manifest.complete);
  REQUIRE(validate_manifest(a.manifest_path).ok());
  const auto before = load_manifest(a.manifest_path);
  REQUIRE(before.entries.size() == 2);

  const auto b = run_sweep(cfg, toy);
  REQUIRE(b.skipped == 2);
  REQUIRE(b.computed == 2);
  REQUIRE(b.manifest.complete);
  const auto after = load_manifest(b.manifest_path);
  REQUIRE(after.created == before.created);
  for (const auto& e : before.entries) {
    const auto* same = after.find(e.key());
    REQUIRE(same != nullptr);
    REQUIRE(same->finished == e.finished);
    REQUIRE(same->started == e.started);
  }

  const auto c = run_sweep(cfg, toy);
  REQUIRE(c.skipped == 4);
  REQUIRE(c.computed == 0);

  auto changed = cfg;
  changed.synthesis.optimizer.steps = 13;
  REQUIRE_THROWS_AS(run_sweep(changed, toy), InputError);
  auto more_workers = cfg;
  more_workers.workers = 2;
  REQUIRE(run_sweep(more_workers, toy).skipped == 4);
}

TEST_CASE("sweeps are deterministic apart from timestamps", "[sweep]") {
  const ToyBackend toy;
  auto c1 = small_sweep(fresh_dir("det1"));
  auto c2 = small_sweep(fresh_dir("det2"));
  c2.workers = 2;
  const auto a = run_sweep(c1, toy);
  const auto b = run_sweep(c2, toy);
  auto ja = without_timestamps(read_json(a.manifest_path));
  auto jb = without_timestamps(read_json(b.manifest_path));
  ja.erase("config");
  jb.erase("config");  // differs in workers only
  REQUIRE(ja == jb);
  for (const auto& e : a.manifest.entries) {
    REQUIRE(slurp(a.run_dir / e.image) == slurp(b.run_dir / e.image));
    REQUIRE(slurp(a.run_dir / e.trajectory) == slurp(b.run_dir / e.trajectory));
  }
}

TEST_CASE("sweep with the offline judge records recognition", "[sweep][judge]") {
  const ToyBackend toy;
  const ToyClassifierJudge judge(toy);
  auto cfg = small_sweep(fresh_dir("judged"));
  cfg.layers = {LayerIndex{0}};
  cfg.judge.enabled = true;
  cfg.judge.samples = 2;
  SweepOptions opts;
  opts.judge = &judge;
  const auto res = run_sweep(cfg, toy, opts);
  REQUIRE(res.all_done());
  for (const auto& e : res.manifest.entries) {
    REQUIRE(e.recognition.size() == 2);
    REQUIRE(e.recognition[1].question == "What " + std::string(e.category == "fruit" ? "fruit" : "animal") +
                                             " is in the image if you had to guess? One word.");
    REQUIRE(e.recognition[0].samples.size() == 2);
  }
  REQUIRE(validate_manifest(res.manifest_path).ok());
  const auto files = report_recognition(res.manifest, res.run_dir / "reports");
  REQUIRE(files.written.size() == 3);
  cfg.judge.enabled = true;
  REQUIRE_THROWS_AS(run_sweep(cfg, toy), InputError);
}

TEST_CASE("manifest validation catches problems", "[manifest]") {
  const auto out = fresh_dir("validate");
  const ToyBackend toy;
  auto cfg = small_sweep(out);
  cfg.layers = {LayerIndex{1}};
  cfg.concepts = {"apple"};
  const auto res = run_sweep(cfg, toy);
  REQUIRE(validate_manifest(res.manifest_path).ok());
  fs::remove(res.run_dir / res.manifest.entries[0].image);
  REQUIRE(validate_manifest(res.manifest_path).missing_files.size() == 1);

  auto j = read_json(res.manifest_path);
  j["entries"][0]["status"] = "maybe";
  j.erase("run_id");
  write_json(out / "broken.json", j);
  REQUIRE(validate_manifest(out / "broken.json").schema_violations.size() >= 2);
  write_text_atomic(out / "garbage.json", "{not json");
  REQUIRE_FALSE(validate_manifest(out / "garbage.json").ok());
}

TEST_CASE("recognition report over seven layers", "[report]") {
  const auto out = fresh_dir("report");
  RunManifest m;
  m.run_id = "rep";
  for (std::size_t layer : paper_sweep_layers()) {
    m.entries.push_back(fake_entry("animals", "frog", layer, layer >= 10 ? 1.0 : 0.2, -0.5, "x.png"));
    m.entries.push_back(fake_entry("animals", "lion", layer, 0.6, -0.5, "x.png"));
  }
  const auto files = report_recognition(m, out);
  REQUIRE(files.gaps.empty());
  const auto j = read_json(out / "recognition.json");
  REQUIRE(j.at("points").size() == 7);
  REQUIRE(j["points"][0]["layer"] == 1);
  REQUIRE(j["points"][0]["proportion"].get<double>() == Approx(0.5));
  REQUIRE(j["points"][6]["proportion"].get<double>() == Approx(1.0));
  const auto svg = slurp(out / "recognition_open.svg");
  REQUIRE(svg.find("<polyline") != std::string::npos);

  // drop one layer for lion and frog: the cell becomes an explicit gap
  m.entries.erase(m.entries.begin() + 2, m.entries.begin() + 4);
  m.entries.push_back(fake_entry("animals", "owl", 5, std::nullopt, -0.5, "x.png"));
  const auto gapped = report_recognition(m, out);
  REQUIRE(gapped.gaps == std::vector<std::string>{"open/animals/layer 5"});
  REQUIRE(slurp(out / "recognition_open.svg").find("missing") != std::string::npos);
}

TEST_CASE("gallery picks the best image per cell", "[report]") {
  const auto out = fresh_dir("gallery");
  write_png(out / "a.png", Image(16, 0.2));
  write_png(out / "b.png", Image(16, 0.8));
  RunManifest m;
  m.run_id = "g";
  m.entries.push_back(fake_entry("animals", "lion", 1, 0.5, -0.9, "a.png"));
  m.entries.push_back(fake_entry("animals", "frog", 1, 0.5, -0.95, "b.png"));  // same rate, lower loss
  m.entries.push_back(fake_entry("animals", "owl", 1, std::nullopt, -0.99, "a.png"));
  m.entries.push_back(fake_entry("animals", "lion", 2, 0.4, -0.5, "a.png"));
  m.entries.push_back(fake_entry("fruit", "apple", 1, std::nullopt, -0.7, "a.png"));
  m.entries.push_back(fake_entry("fruit", "pear", 1, std::nullopt, -0.7, "b.png"));  // tie: name order
  const auto files = report_gallery(m, out, out / "g", 16);
  REQUIRE(files.gaps == std::vector<std::string>{"fruit/layer 2"});
  const auto j = read_json(out / "g" / "gallery.json");
  REQUIRE(j["cells"].size() == 4);
  REQUIRE(j["cells"][0]["concept"] == "frog");
  REQUIRE(j["cells"][1]["concept"] == "lion");
  REQUIRE(j["cells"][2]["concept"] == "apple");
  REQUIRE(j["cells"][3]["concept"].is_null());
  REQUIRE(j["rule"].get<std::string>().find("our convention") != std::string::npos);
  const auto sheet = read_png(out / "g" / "gallery.png");
  REQUIRE(sheet.width == 2 * (16 + 4) + 4);
  REQUIRE(sheet.height == 2 * (16 + 4) + 4);
}
