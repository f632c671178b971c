#pragma once

// The category x layer sweep: one synthesis per (concept, layer), optional
// judging, everything persisted under <output_dir>/<run_id>/ and indexed by
// manifest.json. Re-running with the same configuration resumes: pairs the
// manifest already lists as done (with their files present) are skipped.

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "concepts.hpp"
#include "config.hpp"
#include "imrep.hpp"
#include "judge.hpp"
#include "manifest.hpp"
#include "parallel.hpp"
#include "png_io.hpp"
#include "random.hpp"
#include "synth.hpp"

namespace clens {

// Stable per-pair seed: depends only on the master seed and the pair itself.
inline std::uint64_t pair_seed(std::uint64_t master, const std::string& category, const std::string& concept_text,
                               LayerIndex layer) {
  return mix_seed(master, fnv1a64(category + "/" + concept_text + "@" + std::to_string(layer.value)));
}

struct SweepJob {
  std::string category;
  std::string hint;
  std::string concept_text;
  LayerIndex layer;

  std::string key() const { return category + "/" + concept_text + "@" + std::to_string(layer.value); }
};

inline std::vector<SweepJob> sweep_jobs(const ExperimentConfig& config, const ConceptCatalogue& catalogue) {
  std::vector<SweepJob> jobs;
  for (const auto& cat : catalogue.categories) {
    if (!config.categories.empty() &&
        std::find(config.categories.begin(), config.categories.end(), cat.name) == config.categories.end())
      continue;
    for (const auto& c : cat.concepts) {
      if (!config.concepts.empty() && std::find(config.concepts.begin(), config.concepts.end(), c) == config.concepts.end())
        continue;
      for (LayerIndex l : config.layers) jobs.push_back({cat.name, cat.hint, c, l});
    }
  }
  return jobs;
}

struct SweepOptions {
  const JudgeClient* judge = nullptr;  // required when config.judge.enabled
  RetryPolicy judge_retry;
  // Stop scheduling after this many newly computed pairs (for interruption).
  std::optional<std::size_t> max_new_pairs;
  std::function<void(const ManifestEntry&)> on_entry;
};

struct SweepResult {
  RunManifest manifest;
  std::filesystem::path run_dir;
  std::filesystem::path manifest_path;
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::size_t pending = 0;  // jobs not attempted (interrupted)

  bool all_done() const { return failed == 0 && pending == 0; }
};

namespace detail {

inline std::string comparable_config(const std::string& toml_text) {
  auto c = parse_experiment_config(toml_text, "manifest config");
  c.workers = 1;
  return to_toml(c);
}

}  // namespace detail

inline SweepResult run_sweep(const ExperimentConfig& config, const Backend& backend, const SweepOptions& opts = {}) {
  config.validate();
  const auto desc = backend.describe();
  if (desc.image_resolution != config.resolution)
    throw InputError("backend reports resolution " + std::to_string(desc.image_resolution) + " but the config says " +
                     std::to_string(config.resolution));
  for (LayerIndex l : config.layers) backend.check_layer(l);
  if (config.judge.enabled && !opts.judge) throw InputError("judging is enabled but no judge client was supplied");

  const auto catalogue = config.load_catalogue_selection();
  const auto words = config.baseline_word_list();
  const auto jobs = sweep_jobs(config, catalogue);
  if (jobs.empty()) throw InputError("the configuration selects no (concept, layer) pairs");

  SweepResult result;
  result.run_dir = std::filesystem::path(config.output_dir) / config.run_id;
  result.manifest_path = result.run_dir / "manifest.json";
  std::filesystem::create_directories(result.run_dir);

  RunManifest& m = result.manifest;
  const std::string toml_text = to_toml(config);
  std::map<std::string, ManifestEntry> previous;
  if (std::filesystem::exists(result.manifest_path)) {
    RunManifest old = load_manifest(result.manifest_path);
    if (detail::comparable_config(old.config_toml) != detail::comparable_config(toml_text))
      throw InputError(result.manifest_path.string() +
                       " was written with a different configuration; use a new run_id");
    m.created = old.created;
    for (auto& e : old.entries) previous[e.key()] = std::move(e);
  }
  m.run_id = config.run_id;
  m.config_toml = toml_text;
  m.backend = {{"name", desc.name},
               {"hidden_dim", desc.hidden_dim},
               {"layer_count", desc.layer_count},
               {"image_resolution", desc.image_resolution},
               {"patch_grid", {desc.patch_grid.rows, desc.patch_grid.cols}}};
  m.baseline_id = word_list_id(words);
  if (m.created.empty()) m.created = utc_timestamp();

  // Baselines are shared by every concept at a layer.
  std::map<std::size_t, LanguageBaseline> lang;
  std::map<std::size_t, ImageBaseline> grey;
  for (LayerIndex l : config.layers) {
    lang.emplace(l.value, compute_language_baseline(backend, words, l));
    grey.emplace(l.value, compute_image_baseline(backend, l));
  }

  std::vector<std::optional<ManifestEntry>> slots(jobs.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto it = previous.find(jobs[i].key());
    if (it != previous.end() && it->second.status == "done" &&
        std::filesystem::exists(result.run_dir / it->second.image) &&
        std::filesystem::exists(result.run_dir / it->second.trajectory)) {
      slots[i] = it->second;
      ++result.skipped;
    } else {
      // earlier failures stay listed until the pair is retried
      if (it != previous.end()) slots[i] = it->second;
      todo.push_back(i);
    }
  }

  std::mutex writer;  // serialises manifest writes
  auto write_manifest = [&] {
    m.entries.clear();
    for (const auto& s : slots)
      if (s) m.entries.push_back(*s);
    m.updated = utc_timestamp();
    write_json(result.manifest_path, to_json(m));
  };
  {
    std::lock_guard lock(writer);
    write_manifest();
  }

  std::atomic<std::size_t> started{0};
  std::atomic<std::size_t> computed{0};
  std::atomic<std::size_t> failed{0};
  parallel_for(todo.size(), static_cast<std::size_t>(config.workers), [&](std::size_t t) {
    if (opts.max_new_pairs && started.fetch_add(1) >= *opts.max_new_pairs) return;
    const std::size_t i = todo[t];
    const SweepJob& job = jobs[i];
    ManifestEntry e;
    e.category = job.category;
    e.concept_text = job.concept_text;
    e.layer = job.layer.value;
    e.seed = pair_seed(config.seed, job.category, job.concept_text, job.layer);
    const SynthesisConfig sc = config.synthesis_for(job.layer);
    e.synthesis = to_json(sc);
    e.started = utc_timestamp();
    try {
      const auto target = concept_direction(backend, job.concept_text, job.layer, lang.at(job.layer.value));
      const auto run = synthesize(target, backend, grey.at(job.layer.value), sc, e.seed);
      const std::filesystem::path rel = std::filesystem::path(path_slug(job.category)) /
                                        path_slug(job.concept_text) / ("layer" + std::to_string(job.layer.value));
      std::filesystem::create_directories(result.run_dir / rel);
      write_png(result.run_dir / rel / "image.png", run.final_image);
      for (const auto& s : run.snapshots) {
        const auto name = rel / ("snapshot_" + std::to_string(s.step) + ".png");
        write_png(result.run_dir / name, s.image);
        e.snapshots.push_back(name.generic_string());
      }
      write_json(result.run_dir / rel / "trajectory.json", trajectory_json(run));
      e.image = (rel / "image.png").generic_string();
      e.trajectory = (rel / "trajectory.json").generic_string();
      e.final_loss = run.loss_trajectory.back();
      e.final_cosine = run.final_cosine;

      if (config.judge.enabled) {
        std::vector<JudgeProtocol> protocols;
        for (auto kind : config.judge.protocols)
          protocols.push_back({kind, kind == ProtocolKind::hinted ? job.hint : "", config.judge.samples,
                               config.judge.wording});
        EvaluationOptions eo;
        eo.retry = opts.judge_retry;
        eo.max_concurrency = static_cast<std::size_t>(config.judge.max_concurrency);
        eo.seed = e.seed;
        e.recognition = evaluate_image(run.final_image, {job.key(), job.concept_text, job.category, job.hint, job.layer},
                                       protocols, *opts.judge, eo);
      }
      e.status = "done";
      ++computed;
    } catch (const std::exception& ex) {
      e.status = "failed";
      e.error = ex.what();
      ++failed;
    }
    e.finished = utc_timestamp();
    std::lock_guard lock(writer);
    slots[i] = e;
    write_manifest();
    if (opts.on_entry) opts.on_entry(e);
  });

  result.computed = computed;
  result.failed = failed;
  if (opts.max_new_pairs) result.pending = todo.size() - std::min(todo.size(), *opts.max_new_pairs);
  m.complete = result.all_done();
  write_manifest();
  return result;
}

}  // namespace clens
