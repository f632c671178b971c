// concept-lens command line: extract | synthesize | probe | judge | sweep | report

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "concept_lens/config.hpp"
#include "concept_lens/manifest.hpp"
#include "concept_lens/probe.hpp"
#include "concept_lens/remote_backend.hpp"
#include "concept_lens/remote_judge.hpp"
#include "concept_lens/report.hpp"
#include "concept_lens/sweep.hpp"

namespace fs = std::filesystem;
using namespace clens;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIncomplete = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config_path;
  std::string backend = "toy";
  std::string endpoint;
  std::string weights;
  std::string baseline_words;
  std::string catalogue;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "experiment configuration file");
  app->add_option("--backend", c.backend, "backend name: toy, gemma3-4b, internvl3-8b, ...");
  app->add_option("--endpoint", c.endpoint, "adapter URL for non-toy backends");
  app->add_option("--weights", c.weights, "model weights path handed to the adapter");
  app->add_option("--baseline-words", c.baseline_words, "baseline word list (one per line)");
  app->add_option("--catalogue", c.catalogue, "concept catalogue file");
}

ExperimentConfig resolve_config(const Common& c, std::optional<int> resolution = std::nullopt) {
  ExperimentConfig cfg = c.config_path.empty() ? default_experiment_config(c.backend, resolution.value_or(0))
                                               : load_experiment_config(c.config_path);
  if (!c.config_path.empty() && resolution) cfg.resolution = *resolution;
  if (!c.endpoint.empty()) cfg.backend.endpoint = c.endpoint;
  if (!c.weights.empty()) cfg.backend.weights_path = c.weights;
  if (!c.baseline_words.empty()) cfg.baseline_words = c.baseline_words;
  if (!c.catalogue.empty()) cfg.catalogue = c.catalogue;
  if (c.seed_set) cfg.seed = c.seed;
  return cfg;
}

std::vector<LayerIndex> to_layers(const std::vector<std::size_t>& v) {
  std::vector<LayerIndex> out;
  for (auto l : v) out.push_back({l});
  return out;
}

std::vector<ProtocolKind> parse_protocols(const std::string& s) {
  if (s == "both") return {ProtocolKind::open, ProtocolKind::hinted};
  return {parse_protocol_kind(s)};
}

std::unique_ptr<JudgeClient> make_judge(const ExperimentConfig& cfg, const Backend& backend, const fs::path& log_dir,
                                        const std::map<std::string, std::vector<std::string>>* canned) {
  if (cfg.judge.client == "remote") {
    RemoteJudgeConfig rc;
    rc.base_url = cfg.judge.remote.base_url;
    rc.token_env = cfg.judge.remote.token_env;
    rc.describer_model = cfg.judge.remote.describer_model;
    rc.grader_model = cfg.judge.remote.grader_model;
    rc.temperature = cfg.judge.remote.temperature;
    rc.max_requests_per_second = cfg.judge.remote.max_requests_per_second;
    if (!cfg.judge.remote.log.empty()) rc.log_path = (log_dir / cfg.judge.remote.log).string();
    return std::make_unique<RemoteJudge>(rc);
  }
  if (canned) {
    auto responses = *canned;
    return std::make_unique<KeywordJudge>([responses](const Image&, const std::string&, const SampleContext& ctx) {
      auto it = responses.find(ctx.image_id);
      if (it == responses.end() || it->second.empty()) throw InputError("no scripted responses for " + ctx.image_id);
      return it->second[static_cast<std::size_t>(ctx.sample_index) % it->second.size()];
    });
  }
  if (const auto* toy = dynamic_cast<const ToyBackend*>(&backend)) return std::make_unique<ToyClassifierJudge>(*toy);
  throw InputError("the offline judge needs the toy backend or --responses FILE");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept directions, image synthesis and probing for vision-language models"};
  app.name("concept-lens");
  app.require_subcommand(1);
  Common common;

  // extract
  auto* extract = app.add_subcommand("extract", "compute baseline-centred concept directions");
  add_common(extract, common);
  std::vector<std::string> ex_concepts;
  std::vector<std::size_t> ex_layers;
  std::string ex_output;
  extract->add_option("--concept", ex_concepts, "concept text (repeatable)")->required();
  extract->add_option("--layers", ex_layers, "layers")->required()->delimiter(',');
  extract->add_option("--output", ex_output, "write JSON here instead of stdout");

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "synthesise an image for one concept at one layer");
  add_common(synth, common);
  std::string sy_concept, sy_output = "synth_out", sy_aggregation;
  std::size_t sy_layer = 0;
  std::optional<int> sy_steps, sy_snapshot;
  std::optional<double> sy_lr, sy_tau;
  synth->add_option("--concept", sy_concept, "concept text")->required();
  synth->add_option("--layer", sy_layer, "layer index")->required();
  synth->add_option("--steps", sy_steps, "optimisation steps");
  synth->add_option("--lr", sy_lr, "learning rate");
  synth->add_option("--tau", sy_tau, "attention temperature");
  synth->add_option("--snapshot-every", sy_snapshot, "save an image every K steps");
  synth->add_option("--aggregation", sy_aggregation, "attention | mean");
  synth->add_option("--output", sy_output, "output directory");
  synth->add_option("--seed", common.seed, "seed");

  // probe
  auto* probe = app.add_subcommand("probe", "similarity between concept directions and image corpora");
  add_common(probe, common);
  std::vector<std::string> pr_concepts, pr_corpora;
  std::vector<std::size_t> pr_layers;
  std::string pr_metric = "both", pr_output = "probe.json";
  int pr_noise = 0, pr_toy_count = 20, pr_perms = 10000;
  probe->add_option("--concepts", pr_concepts, "concepts to probe")->required()->delimiter(',');
  probe->add_option("--corpus", pr_corpora, "NAME=DIR or NAME=toy:CONCEPT (repeatable)")->required();
  probe->add_option("--noise", pr_noise, "add a control corpus of N uniform-noise images");
  probe->add_option("--toy-count", pr_toy_count, "images per toy:CONCEPT corpus");
  probe->add_option("--metric", pr_metric, "aggregate | max_patch | both");
  probe->add_option("--layers", pr_layers, "layers")->required()->delimiter(',');
  probe->add_option("--permutations", pr_perms, "permutation test iterations");
  probe->add_option("--output", pr_output, "profile JSON path");
  probe->add_option("--seed", common.seed, "seed");

  // judge
  auto* judge = app.add_subcommand("judge", "ask a judge what is in synthesised images");
  add_common(judge, common);
  std::string jd_images, jd_protocol = "both", jd_client, jd_wording, jd_responses, jd_hint, jd_output;
  std::optional<int> jd_samples;
  std::optional<double> jd_threshold;
  judge->add_option("--images", jd_images, "run directory with manifest.json, or a directory of <concept>.png")
      ->required();
  judge->add_option("--protocol", jd_protocol, "open | hinted | both");
  judge->add_option("--samples", jd_samples, "samples per image");
  judge->add_option("--client", jd_client, "offline | remote");
  judge->add_option("--recognition-threshold", jd_threshold, "mean verdict needed to count as recognised");
  judge->add_option("--wording", jd_wording, "guess | plain");
  judge->add_option("--responses", jd_responses, "JSON map image id -> scripted responses (offline)");
  judge->add_option("--hint", jd_hint, "hint noun for images outside the catalogue");
  judge->add_option("--output", jd_output, "records JSON (directory mode)");
  judge->add_option("--seed", common.seed, "seed");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "synthesise every (concept, layer) pair of a configuration");
  add_common(sweep, common);
  bool sw_print = false, sw_judge = false;
  std::optional<int> sw_resolution, sw_workers, sw_steps;
  std::string sw_run_id, sw_out;
  std::vector<std::size_t> sw_layers;
  std::vector<std::string> sw_categories, sw_concepts;
  sweep->add_flag("--print-config", sw_print, "print the fully resolved configuration and exit");
  sweep->add_option("--resolution", sw_resolution, "backend input resolution (for --print-config)");
  sweep->add_option("--run-id", sw_run_id, "run identifier");
  sweep->add_option("--out", sw_out, "output root directory");
  sweep->add_option("--workers", sw_workers, "concurrent (concept, layer) jobs");
  sweep->add_option("--layers", sw_layers, "layers")->delimiter(',');
  sweep->add_option("--categories", sw_categories, "categories")->delimiter(',');
  sweep->add_option("--concepts", sw_concepts, "concepts")->delimiter(',');
  sweep->add_option("--steps", sw_steps, "steps for every layer");
  sweep->add_flag("--judge", sw_judge, "judge each image after synthesis");
  sweep->add_option("--client", jd_client, "offline | remote");
  sweep->add_option("--seed", common.seed, "master seed");

  // report
  auto* report = app.add_subcommand("report", "plots and galleries from a manifest");
  std::string rp_manifest, rp_kind = "all", rp_out;
  std::optional<double> rp_threshold;
  report->add_option("--manifest", rp_manifest, "manifest.json or probe JSON")->required();
  report->add_option("--kind", rp_kind, "recognition | probe | gallery | all");
  report->add_option("--out", rp_out, "output directory (default: <manifest dir>/report)");
  report->add_option("--recognition-threshold", rp_threshold, "mean verdict needed to count as recognised");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (auto* sc : {synth, probe, judge, sweep})
    if (sc->parsed() && sc->get_option("--seed")->count() > 0) common.seed_set = true;

  try {
    if (extract->parsed()) {
      auto cfg = resolve_config(common);
      auto backend = make_backend(cfg.backend);
      const auto words = cfg.baseline_word_list();
      Json out = {{"backend", backend->describe().name}, {"baseline_id", word_list_id(words)}, {"directions", Json::array()}};
      for (auto layer : to_layers(ex_layers)) {
        const auto base = compute_language_baseline(*backend, words, layer);
        for (const auto& c : ex_concepts) {
          const auto cv = concept_direction(*backend, c, layer, base);
          out["directions"].push_back({{"concept", c},
                                       {"layer", layer.value},
                                       {"norm", cv.direction.norm()},
                                       {"direction", std::vector<double>(cv.direction.data(),
                                                                         cv.direction.data() + cv.direction.size())}});
        }
      }
      if (ex_output.empty())
        std::cout << out.dump(2) << "\n";
      else
        write_json(ex_output, out);
      return kExitOk;
    }

    if (synth->parsed()) {
      auto cfg = resolve_config(common);
      auto backend = make_backend(cfg.backend);
      const LayerIndex layer{sy_layer};
      backend->check_layer(layer);
      SynthesisConfig sc;
      if (!common.config_path.empty())
        sc = cfg.synthesis_for(layer);
      else if (cfg.backend.name == "toy")
        sc = toy_synthesis_config();
      else
        sc = paper_synthesis_config(layer);
      if (sy_steps) sc.optimizer.steps = *sy_steps;
      if (sy_lr) sc.optimizer.learning_rate = *sy_lr;
      if (sy_tau) sc.optimizer.temperature = *sy_tau;
      if (sy_snapshot) sc.snapshot_every = *sy_snapshot;
      if (!sy_aggregation.empty()) sc.aggregation = parse_aggregation_mode(sy_aggregation);
      const auto base = compute_language_baseline(*backend, cfg.baseline_word_list(), layer);
      const auto target = concept_direction(*backend, sy_concept, layer, base);
      const auto run = synthesize(target, *backend, compute_image_baseline(*backend, layer), sc, cfg.seed,
                                  [&](int step, double loss) {
                                    if ((step + 1) % 50 == 0 || step + 1 == sc.optimizer.steps)
                                      std::cerr << "step " << step + 1 << "  loss " << loss << "\n";
                                  });
      fs::create_directories(sy_output);
      write_png(fs::path(sy_output) / "image.png", run.final_image);
      for (const auto& s : run.snapshots)
        write_png(fs::path(sy_output) / ("snapshot_" + std::to_string(s.step) + ".png"), s.image);
      write_json(fs::path(sy_output) / "trajectory.json", trajectory_json(run));
      std::cout << "final cosine " << run.final_cosine << "  image " << (fs::path(sy_output) / "image.png").string()
                << "\n";
      return kExitOk;
    }

    if (probe->parsed()) {
      auto cfg = resolve_config(common);
      auto backend = make_backend(cfg.backend);
      const int res = backend->describe().image_resolution;
      std::vector<ImageCorpus> corpora;
      for (const auto& spec : pr_corpora) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw InputError("--corpus expects NAME=DIR or NAME=toy:CONCEPT");
        const std::string name = spec.substr(0, eq), src = spec.substr(eq + 1);
        if (src.rfind("toy:", 0) == 0) {
          const auto* toy = dynamic_cast<const ToyBackend*>(backend.get());
          if (!toy) throw InputError("toy: corpora need the toy backend");
          auto c = make_toy_corpus(*toy, src.substr(4), pr_toy_count, mix_seed(cfg.seed, fnv1a64(name)));
          c.name = name;
          corpora.push_back(std::move(c));
        } else {
          corpora.push_back(load_corpus_dir(name, src, res));
        }
      }
      if (pr_noise > 0) corpora.push_back(make_noise_corpus(res, pr_noise, mix_seed(cfg.seed, fnv1a64("noise"))));
      ProbeOptions po;
      po.baseline_words = cfg.baseline_word_list();
      po.permutation_iterations = pr_perms;
      po.seed = cfg.seed;
      const auto prof = profile(*backend, pr_concepts, corpora, to_layers(pr_layers), parse_metrics(pr_metric), po);
      write_json(pr_output, {{"tool", kToolName}, {"version", kToolVersion}, {"probe", to_json(prof)}});
      for (const auto& t : prof.tests)
        std::cout << "layer " << t.layer.value << "  " << to_string(t.metric) << "  matched " << t.matched_mean
                  << "  mismatched " << t.mismatched_mean << "  p " << t.p_value << "\n";
      return kExitOk;
    }

    if (judge->parsed()) {
      auto cfg = resolve_config(common);
      if (!jd_client.empty()) cfg.judge.client = jd_client;
      if (jd_samples) cfg.judge.samples = *jd_samples;
      if (jd_threshold) cfg.judge.recognition_threshold = *jd_threshold;
      if (!jd_wording.empty()) cfg.judge.wording = parse_question_wording(jd_wording);
      cfg.judge.protocols = parse_protocols(jd_protocol);
      std::optional<std::map<std::string, std::vector<std::string>>> canned;
      if (!jd_responses.empty())
        canned = read_json(jd_responses).get<std::map<std::string, std::vector<std::string>>>();
      auto backend = make_backend(cfg.backend);
      const fs::path dir = jd_images;
      auto client = make_judge(cfg, *backend, dir, canned ? &*canned : nullptr);
      EvaluationOptions eo;
      eo.max_concurrency = static_cast<std::size_t>(cfg.judge.max_concurrency);
      eo.seed = cfg.seed;
      auto protocols_for = [&](const std::string& hint) {
        std::vector<JudgeProtocol> ps;
        for (auto k : cfg.judge.protocols)
          ps.push_back({k, k == ProtocolKind::hinted ? hint : "", cfg.judge.samples, cfg.judge.wording});
        return ps;
      };
      auto load_for_judge = [&](const fs::path& p) {
        const auto d = read_png(p);
        if (d.width != d.height) throw InputError(p.string() + " is not square");
        return load_image(p, cfg.judge.client == "remote" ? d.width : backend->describe().image_resolution);
      };
      std::vector<RecognitionRecord> all;
      if (fs::exists(dir / "manifest.json")) {
        auto m = load_manifest(dir / "manifest.json");
        const auto cat = parse_experiment_config(m.config_toml).load_catalogue_selection();
        for (auto& e : m.entries) {
          if (e.status != "done") continue;
          const auto* c = cat.find(e.category);
          e.recognition = evaluate_image(load_for_judge(dir / e.image),
                                         {e.key(), e.concept_text, e.category, c ? c->hint : jd_hint, LayerIndex{e.layer}},
                                         protocols_for(c ? c->hint : jd_hint), *client, eo);
          all.insert(all.end(), e.recognition.begin(), e.recognition.end());
        }
        m.updated = utc_timestamp();
        write_json(dir / "manifest.json", to_json(m));
      } else {
        const auto cat = cfg.load_catalogue_selection();
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir))
          if (f.path().extension() == ".png") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw InputError("no PNG images in " + dir.string());
        for (const auto& f : files) {
          std::string concept_text = f.stem().string();
          std::replace(concept_text.begin(), concept_text.end(), '_', ' ');
          std::string category, hint = jd_hint;
          for (const auto& c : cat.categories)
            for (const auto& k : c.concepts)
              if (case_fold(k) == case_fold(concept_text)) category = c.name, hint = hint.empty() ? c.hint : hint;
          const auto recs = evaluate_image(load_for_judge(f), {f.filename().string(), concept_text, category, hint, {}},
                                           protocols_for(hint), *client, eo);
          all.insert(all.end(), recs.begin(), recs.end());
        }
        Json out = Json::array();
        for (const auto& r : all) out.push_back(to_json(r));
        write_json(jd_output.empty() ? dir / "recognition.json" : fs::path(jd_output), out);
      }
      std::size_t missing = 0;
      for (const auto& r : all) {
        std::cout << r.image_id << "  " << to_string(r.protocol.kind) << "  rate "
                  << (r.rate ? std::to_string(*r.rate) : std::string("n/a"))
                  << (is_recognised(r, cfg.judge.recognition_threshold) ? "  recognised" : "") << "\n";
        if (!r.rate) ++missing;
      }
      return missing ? kExitIncomplete : kExitOk;
    }

    if (sweep->parsed()) {
      auto cfg = resolve_config(common, sw_resolution);
      if (!sw_run_id.empty()) cfg.run_id = sw_run_id;
      if (!sw_out.empty()) cfg.output_dir = sw_out;
      if (sw_workers) cfg.workers = *sw_workers;
      if (!sw_categories.empty()) cfg.categories = sw_categories;
      if (!sw_concepts.empty()) cfg.concepts = sw_concepts;
      if (!sw_layers.empty()) {
        cfg.layers = to_layers(sw_layers);
        for (auto l : sw_layers)
          if (!cfg.layer_overrides.count(l)) {
            const auto p = cfg.backend.name == "toy" ? LayerPreset{cfg.synthesis.optimizer.learning_rate,
                                                                   cfg.synthesis.optimizer.temperature}
                                                     : paper_layer_preset({l});
            cfg.layer_overrides[l].learning_rate = p.learning_rate;
            cfg.layer_overrides[l].temperature = p.temperature;
          }
      }
      if (sw_steps) {
        cfg.synthesis.optimizer.steps = *sw_steps;
        for (auto& [l, o] : cfg.layer_overrides) o.steps.reset();
      }
      if (sw_judge) cfg.judge.enabled = true;
      if (!jd_client.empty()) cfg.judge.client = jd_client;
      if (sw_print) {
        cfg.validate();
        std::cout << to_toml(cfg);
        return kExitOk;
      }
      auto backend = make_backend(cfg.backend);
      std::unique_ptr<JudgeClient> client;
      const fs::path run_dir = fs::path(cfg.output_dir) / cfg.run_id;
      if (cfg.judge.enabled) {
        fs::create_directories(run_dir);
        client = make_judge(cfg, *backend, run_dir, nullptr);
      }
      SweepOptions so;
      so.judge = client.get();
      so.on_entry = [](const ManifestEntry& e) {
        std::cerr << e.status << "  " << e.key();
        if (e.final_cosine) std::cerr << "  cosine " << *e.final_cosine;
        if (!e.error.empty()) std::cerr << "  " << e.error;
        std::cerr << "\n";
      };
      const auto result = run_sweep(cfg, *backend, so);
      std::cout << "manifest " << result.manifest_path.string() << "  computed " << result.computed << "  skipped "
                << result.skipped << "  failed " << result.failed << "\n";
      return result.all_done() ? kExitOk : kExitIncomplete;
    }

    if (report->parsed()) {
      const fs::path mpath = rp_manifest;
      const auto m = load_manifest(mpath);
      const fs::path out = rp_out.empty() ? mpath.parent_path() / "report" : fs::path(rp_out);
      double threshold = rp_threshold.value_or(0.5);
      if (!rp_threshold && !m.config_toml.empty())
        threshold = parse_experiment_config(m.config_toml).judge.recognition_threshold;
      std::vector<ReportFiles> produced;
      const bool all = rp_kind == "all";
      if (!all) parse_report_kind(rp_kind);
      if ((all && !m.entries.empty() && !manifest_records(m).empty()) || rp_kind == "recognition")
        produced.push_back(report_recognition(m, out, threshold));
      if ((all && m.probe) || rp_kind == "probe") {
        if (!m.probe) throw InputError("no probe results in " + mpath.string());
        produced.push_back(report_probe(*m.probe, out));
      }
      if ((all && !m.entries.empty()) || rp_kind == "gallery")
        produced.push_back(report_gallery(m, mpath.parent_path(), out));
      if (produced.empty()) throw InputError("nothing to report in " + mpath.string());
      std::size_t gaps = 0;
      for (const auto& f : produced) {
        for (const auto& p : f.written) std::cout << p.string() << "\n";
        for (const auto& g : f.gaps) std::cerr << "gap: " << g << "\n";
        gaps += f.gaps.size();
      }
      return gaps ? kExitIncomplete : kExitOk;
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const RangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIncomplete;
  }
  return kExitUsage;
}
