#pragma once

// JSON forms of results and the on-disk run manifest.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "judge.hpp"
#include "probe.hpp"
#include "synth.hpp"

namespace clens {

inline constexpr const char* kToolName = "concept-lens";
inline constexpr const char* kToolVersion = "0.1.0";

using Json = nlohmann::json;

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline Json to_json(const SynthesisConfig& c) {
  const auto& o = c.optimizer;
  return {{"learning_rate", o.learning_rate},
          {"momentum", o.momentum},
          {"steps", o.steps},
          {"batch_size", o.batch_size},
          {"grad_clip_norm", o.grad_clip_norm},
          {"sigma_start", o.sigma_start},
          {"sigma_end", o.sigma_end},
          {"temperature", o.temperature},
          {"max_shift", c.augmentation.max_shift},
          {"noise_sigma", c.augmentation.noise_sigma},
          {"aggregation", to_string(c.aggregation)},
          {"snapshot_every", c.snapshot_every},
          {"clamp_augmented", c.clamp_augmented}};
}

inline Json to_json(const RecognitionRecord& r) {
  Json samples = Json::array();
  for (const auto& s : r.samples) {
    Json j = {{"attempts", s.attempts}, {"missing", s.missing}};
    j["response"] = s.response ? Json(*s.response) : Json(nullptr);
    j["verdict"] = s.verdict ? Json(*s.verdict) : Json(nullptr);
    if (!s.error.empty()) j["error"] = s.error;
    samples.push_back(j);
  }
  Json j = {{"image_id", r.image_id},
            {"concept", r.concept_text},
            {"category", r.category},
            {"protocol", to_string(r.protocol.kind)},
            {"hint", r.protocol.category},
            {"wording", to_string(r.protocol.wording)},
            {"samples_per_image", r.protocol.samples_per_image},
            {"question", r.question},
            {"samples", samples},
            {"client", r.client}};
  j["layer"] = r.layer ? Json(r.layer->value) : Json(nullptr);
  j["rate"] = r.rate ? Json(*r.rate) : Json(nullptr);
  return j;
}

inline RecognitionRecord recognition_from_json(const Json& j) {
  RecognitionRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.concept_text = j.at("concept").get<std::string>();
  r.category = j.at("category").get<std::string>();
  r.protocol.kind = parse_protocol_kind(j.at("protocol").get<std::string>());
  r.protocol.category = j.value("hint", "");
  r.protocol.wording = parse_question_wording(j.value("wording", "guess"));
  r.protocol.samples_per_image = j.at("samples_per_image").get<int>();
  r.question = j.at("question").get<std::string>();
  if (!j.at("layer").is_null()) r.layer = LayerIndex{j.at("layer").get<std::size_t>()};
  if (!j.at("rate").is_null()) r.rate = j.at("rate").get<double>();
  r.client = j.value("client", std::map<std::string, std::string>{});
  for (const auto& s : j.at("samples")) {
    JudgeSample js;
    js.attempts = s.value("attempts", 0);
    js.missing = s.value("missing", false);
    if (!s.at("response").is_null()) js.response = s.at("response").get<std::string>();
    if (!s.at("verdict").is_null()) js.verdict = s.at("verdict").get<int>();
    js.error = s.value("error", "");
    r.samples.push_back(js);
  }
  return r;
}

inline Json to_json(const SimilarityProfile& p) {
  Json records = Json::array();
  for (const auto& r : p.records)
    records.push_back({{"concept", r.concept_text},
                       {"corpus", r.corpus},
                       {"metric", to_string(r.metric)},
                       {"layer", r.layer.value},
                       {"matched", r.matched},
                       {"control", r.control},
                       {"mean", r.mean},
                       {"ci_low", r.ci_low},
                       {"ci_high", r.ci_high},
                       {"values", r.values}});
  Json tests = Json::array();
  for (const auto& t : p.tests)
    tests.push_back({{"layer", t.layer.value},
                     {"metric", to_string(t.metric)},
                     {"matched_mean", t.matched_mean},
                     {"mismatched_mean", t.mismatched_mean},
                     {"p_value", t.p_value}});
  return {{"baseline_id", p.baseline_id},
          {"permutation_iterations", p.permutation_iterations},
          {"records", records},
          {"tests", tests}};
}

inline SimilarityProfile profile_from_json(const Json& j) {
  SimilarityProfile p;
  p.baseline_id = j.value("baseline_id", "");
  p.permutation_iterations = j.value("permutation_iterations", 0);
  for (const auto& r : j.at("records")) {
    SimilarityRecord rec;
    rec.concept_text = r.at("concept").get<std::string>();
    rec.corpus = r.at("corpus").get<std::string>();
    rec.metric = parse_metrics(r.at("metric").get<std::string>()).front();
    rec.layer = LayerIndex{r.at("layer").get<std::size_t>()};
    rec.matched = r.at("matched").get<bool>();
    rec.control = r.at("control").get<bool>();
    rec.mean = r.at("mean").get<double>();
    rec.ci_low = r.at("ci_low").get<double>();
    rec.ci_high = r.at("ci_high").get<double>();
    rec.values = r.at("values").get<std::vector<double>>();
    p.records.push_back(std::move(rec));
  }
  for (const auto& t : j.at("tests")) {
    DiscriminationTest d;
    d.layer = LayerIndex{t.at("layer").get<std::size_t>()};
    d.metric = parse_metrics(t.at("metric").get<std::string>()).front();
    d.matched_mean = t.at("matched_mean").get<double>();
    d.mismatched_mean = t.at("mismatched_mean").get<double>();
    d.p_value = t.at("p_value").get<double>();
    p.tests.push_back(d);
  }
  return p;
}

inline Json trajectory_json(const SynthesisRun& run) {
  Json snaps = Json::array();
  for (const auto& s : run.snapshots) snaps.push_back(s.step);
  return {{"concept", run.concept_text},
          {"layer", run.layer.value},
          {"seed", run.seed},
          {"config", to_json(run.config)},
          {"resolutions", run.resolutions},
          {"loss", run.loss_trajectory},
          {"final_cosine", run.final_cosine},
          {"snapshot_steps", snaps}};
}

inline std::string path_slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u))
      out.push_back(static_cast<char>(std::tolower(u)));
    else if (c == ' ' || c == '-' || c == '_')
      out.push_back('_');
  }
  return out.empty() ? "_" : out;
}

// One (concept, layer) job's record.
struct ManifestEntry {
  std::string category;
  std::string concept_text;
  std::size_t layer = 0;
  std::uint64_t seed = 0;
  std::string status;  // "done" | "failed"
  std::string error;
  std::string image;       // relative to the run directory
  std::string trajectory;  // relative to the run directory
  std::vector<std::string> snapshots;
  std::optional<double> final_loss;
  std::optional<double> final_cosine;
  Json synthesis;  // resolved hyperparameters
  std::vector<RecognitionRecord> recognition;
  std::string started;
  std::string finished;

  std::string key() const { return category + "/" + concept_text + "@" + std::to_string(layer); }
};

inline Json to_json(const ManifestEntry& e) {
  Json rec = Json::array();
  for (const auto& r : e.recognition) rec.push_back(to_json(r));
  Json j = {{"category", e.category},     {"concept", e.concept_text}, {"layer", e.layer},
            {"seed", e.seed},             {"status", e.status},        {"image", e.image},
            {"trajectory", e.trajectory}, {"snapshots", e.snapshots},  {"synthesis", e.synthesis},
            {"recognition", rec},         {"started", e.started},      {"finished", e.finished}};
  j["final_loss"] = e.final_loss ? Json(*e.final_loss) : Json(nullptr);
  j["final_cosine"] = e.final_cosine ? Json(*e.final_cosine) : Json(nullptr);
  if (!e.error.empty()) j["error"] = e.error;
  return j;
}

inline ManifestEntry entry_from_json(const Json& j) {
  ManifestEntry e;
  e.category = j.at("category").get<std::string>();
  e.concept_text = j.at("concept").get<std::string>();
  e.layer = j.at("layer").get<std::size_t>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.status = j.at("status").get<std::string>();
  e.error = j.value("error", "");
  e.image = j.value("image", "");
  e.trajectory = j.value("trajectory", "");
  e.snapshots = j.value("snapshots", std::vector<std::string>{});
  if (j.contains("final_loss") && !j["final_loss"].is_null()) e.final_loss = j["final_loss"].get<double>();
  if (j.contains("final_cosine") && !j["final_cosine"].is_null()) e.final_cosine = j["final_cosine"].get<double>();
  e.synthesis = j.value("synthesis", Json::object());
  for (const auto& r : j.value("recognition", Json::array())) e.recognition.push_back(recognition_from_json(r));
  e.started = j.value("started", "");
  e.finished = j.value("finished", "");
  return e;
}

struct RunManifest {
  std::string run_id;
  std::string config_toml;
  Json backend;
  std::string baseline_id;
  std::string created;
  std::string updated;
  bool complete = false;
  std::vector<ManifestEntry> entries;
  std::optional<SimilarityProfile> probe;

  const ManifestEntry* find(const std::string& key) const {
    for (const auto& e : entries)
      if (e.key() == key) return &e;
    return nullptr;
  }
};

inline Json to_json(const RunManifest& m) {
  Json entries = Json::array();
  for (const auto& e : m.entries) entries.push_back(to_json(e));
  Json j = {{"tool", kToolName}, {"version", kToolVersion},       {"run_id", m.run_id},
            {"config", m.config_toml}, {"backend", m.backend}, {"baseline_id", m.baseline_id},
            {"created", m.created},    {"updated", m.updated}, {"complete", m.complete},
            {"entries", entries}};
  if (m.probe) j["probe"] = to_json(*m.probe);
  return j;
}

inline RunManifest manifest_from_json(const Json& j) {
  RunManifest m;
  m.run_id = j.value("run_id", "");
  m.config_toml = j.value("config", "");
  m.backend = j.value("backend", Json::object());
  m.baseline_id = j.value("baseline_id", "");
  m.created = j.value("created", "");
  m.updated = j.value("updated", "");
  m.complete = j.value("complete", false);
  for (const auto& e : j.value("entries", Json::array())) m.entries.push_back(entry_from_json(e));
  if (j.contains("probe")) m.probe = profile_from_json(j["probe"]);
  return m;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp + "'");
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

inline Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text_file(path.string()));
  } catch (const Json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline RunManifest load_manifest(const std::filesystem::path& path) {
  try {
    return manifest_from_json(read_json(path));
  } catch (const Json::exception& e) {
    throw InputError(path.string() + ": schema violation: " + e.what());
  }
}

struct ManifestCheck {
  std::vector<std::string> missing_files;
  std::vector<std::string> schema_violations;
  bool ok() const { return missing_files.empty() && schema_violations.empty(); }
};

// Re-validates a manifest on disk: required fields and types, and that every
// referenced file exists relative to the manifest's directory.
inline ManifestCheck validate_manifest(const std::filesystem::path& path) {
  ManifestCheck check;
  Json j;
  try {
    j = read_json(path);
  } catch (const std::exception& e) {
    check.schema_violations.push_back(e.what());
    return check;
  }
  const auto root = path.parent_path();
  auto need = [&](const Json& obj, const char* key, Json::value_t type, const std::string& where) {
    if (!obj.contains(key)) {
      check.schema_violations.push_back(where + ": missing '" + key + "'");
      return false;
    }
    const auto t = obj[key].type();
    const bool numeric_ok = type == Json::value_t::number_float &&
                            (t == Json::value_t::number_integer || t == Json::value_t::number_unsigned);
    const bool unsigned_ok = type == Json::value_t::number_integer && t == Json::value_t::number_unsigned;
    if (t != type && !numeric_ok && !unsigned_ok) {
      check.schema_violations.push_back(where + ": '" + key + "' has the wrong type");
      return false;
    }
    return true;
  };
  for (const char* k : {"tool", "version", "run_id", "config", "created", "updated"})
    need(j, k, Json::value_t::string, "manifest");
  need(j, "complete", Json::value_t::boolean, "manifest");
  if (!need(j, "entries", Json::value_t::array, "manifest")) return check;
  std::size_t i = 0;
  for (const auto& e : j["entries"]) {
    const std::string where = "entries[" + std::to_string(i++) + "]";
    for (const char* k : {"category", "concept", "status", "image", "trajectory", "started", "finished"})
      need(e, k, Json::value_t::string, where);
    need(e, "layer", Json::value_t::number_integer, where);
    need(e, "seed", Json::value_t::number_integer, where);
    need(e, "synthesis", Json::value_t::object, where);
    need(e, "recognition", Json::value_t::array, where);
    const std::string status = e.value("status", "");
    if (status != "done" && status != "failed") check.schema_violations.push_back(where + ": bad status");
    if (status == "done") {
      for (const char* k : {"image", "trajectory"}) {
        const std::string rel = e.value(k, "");
        if (rel.empty() || !std::filesystem::exists(root / rel)) check.missing_files.push_back(where + ": " + rel);
      }
      for (const auto& s : e.value("snapshots", Json::array()))
        if (!std::filesystem::exists(root / s.get<std::string>()))
          check.missing_files.push_back(where + ": " + s.get<std::string>());
      if (!e.contains("final_loss") || !e["final_loss"].is_number())
        check.schema_violations.push_back(where + ": done entry without final_loss");
      for (const auto& r : e.value("recognition", Json::array())) {
        try {
          const auto rec = recognition_from_json(r);
          if (static_cast<int>(rec.samples.size()) != rec.protocol.samples_per_image)
            check.schema_violations.push_back(where + ": sample count differs from samples_per_image");
          if (rec.rate && (*rec.rate < 0.0 || *rec.rate > 1.0))
            check.schema_violations.push_back(where + ": rate outside [0, 1]");
        } catch (const std::exception& ex) {
          check.schema_violations.push_back(where + ": recognition record: " + ex.what());
        }
      }
    }
  }
  if (j.contains("probe")) {
    try {
      profile_from_json(j["probe"]);
    } catch (const std::exception& ex) {
      check.schema_violations.push_back(std::string("probe: ") + ex.what());
    }
  }
  return check;
}

}  // namespace clens
