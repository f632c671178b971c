#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "concept_lens/concepts.hpp"
#include "concept_lens/manifest.hpp"

using namespace clens;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; returns exit status and stdout.
Run cli(const std::string& args) {
  Run r;
  const std::string cmd = std::string("\"") + CLENS_CLI + "\" " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("clens_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("print-config matches the golden file", "[cli]") {
  const auto r = cli("sweep --backend gemma3-4b --resolution 448 --print-config");
  REQUIRE(r.status == 0);
  REQUIRE(r.out == read_text_file(std::string(CLENS_SOURCE_DIR) + "/tests/golden/print_config_448.toml"));
}

TEST_CASE("printed configs load back", "[cli]") {
  const auto dir = fresh_dir("config");
  const auto r = cli("sweep --print-config --layers 0,2 --steps 7");
  REQUIRE(r.status == 0);
  std::ofstream(dir / "c.toml") << r.out;
  const auto again = cli("sweep --print-config --config " + (dir / "c.toml").string());
  REQUIRE(again.status == 0);
  REQUIRE(again.out == r.out);
  REQUIRE(r.out.find("layers = [0, 2]") != std::string::npos);
  REQUIRE(r.out.find("steps = 7") != std::string::npos);
}

TEST_CASE("usage and input errors exit with status 2", "[cli]") {
  REQUIRE(cli("").status == 2);
  REQUIRE(cli("frobnicate").status == 2);
  REQUIRE(cli("synthesize --layer 1").status == 2);
  REQUIRE(cli("--help").status == 0);
  REQUIRE(cli("synthesize --concept apple --layer 9 --output /tmp/clens_cli_nowhere").status == 2);
  REQUIRE(cli("sweep --backend gemma3-4b --categories nosuch --print-config").status == 2);
  REQUIRE(cli("sweep --backend gemma3-4b").status == 2);  // no adapter endpoint
  REQUIRE(cli("report --manifest /nonexistent/manifest.json").status == 2);
  REQUIRE(cli("sweep --config /nonexistent/config.toml").status == 2);
}

TEST_CASE("synthesize writes an image and a trajectory", "[cli]") {
  const auto dir = fresh_dir("synth");
  const auto r = cli("synthesize --concept apple --layer 1 --steps 10 --snapshot-every 5 --output " + dir.string());
  REQUIRE(r.status == 0);
  REQUIRE(fs::exists(dir / "image.png"));
  REQUIRE(fs::exists(dir / "snapshot_5.png"));
  REQUIRE(read_json(dir / "trajectory.json").at("loss").size() == 10);
}

TEST_CASE("extract prints directions", "[cli]") {
  const auto r = cli("extract --concept frog --concept lion --layers 0,3");
  REQUIRE(r.status == 0);
  const auto j = Json::parse(r.out);
  REQUIRE(j.at("directions").size() == 4);
  REQUIRE(j["directions"][3]["layer"] == 3);
}

TEST_CASE("sweep, judge and report end to end", "[cli]") {
  const auto dir = fresh_dir("sweep");
  const std::string common = " --out " + dir.string() + " --run-id r --concepts apple,frog --layers 0,1 --steps 20";
  REQUIRE(cli("sweep --judge" + common).status == 0);
  const auto mpath = dir / "r" / "manifest.json";
  REQUIRE(validate_manifest(mpath).ok());
  const auto m = load_manifest(mpath);
  REQUIRE(m.complete);
  REQUIRE(m.entries.size() == 4);
  REQUIRE(m.entries[0].recognition.size() == 2);
  // resuming a finished run recomputes nothing
  const auto again = cli("sweep --judge" + common);
  REQUIRE(again.status == 0);
  REQUIRE(again.out.find("computed 0  skipped 4") != std::string::npos);

  const auto rep = cli("report --manifest " + mpath.string());
  REQUIRE(rep.status == 0);
  for (const char* f : {"recognition_open.svg", "recognition_hinted.svg", "recognition.json", "gallery.png",
                        "gallery.svg", "gallery.json"})
    REQUIRE(fs::exists(dir / "r" / "report" / f));

  // re-judge in place with a scripted offline client
  std::ofstream(dir / "responses.json") << R"({"fruit/apple@0": ["Apple"], "fruit/apple@1": ["pear"],
    "animals/frog@0": ["frog"], "animals/frog@1": ["a frog", "toad"]})";
  const auto j = cli("judge --images " + (dir / "r").string() + " --samples 2 --responses " +
                     (dir / "responses.json").string());
  REQUIRE(j.status == 0);
  const auto judged = load_manifest(mpath);
  REQUIRE(*judged.find("fruit/apple@1")->recognition[0].rate == 0.0);
  REQUIRE(*judged.find("animals/frog@1")->recognition[0].rate == 0.5);
}

TEST_CASE("probe and probe report", "[cli]") {
  const auto dir = fresh_dir("probe");
  const auto out = dir / "probe.json";
  const auto r = cli("probe --concepts apple,orange --corpus apple=toy:apple --corpus orange=toy:orange --noise 5 "
                     "--toy-count 6 --layers 0,1,2,3 --metric both --permutations 500 --output " +
                     out.string());
  REQUIRE(r.status == 0);
  const auto j = read_json(out);
  REQUIRE(j.at("probe").at("tests").size() == 8);
  const auto rep = cli("report --kind probe --manifest " + out.string() + " --out " + (dir / "rep").string());
  REQUIRE(rep.status == 0);
  const auto pj = read_json(dir / "rep" / "probe.json");
  REQUIRE(fs::exists(dir / "rep" / "probe_aggregate.svg"));
  REQUIRE(fs::exists(dir / "rep" / "probe_max_patch.svg"));
  for (const auto& t : pj.at("tests")) REQUIRE(t.at("separated") == true);
}

TEST_CASE("judge a directory of named images", "[cli]") {
  const auto dir = fresh_dir("judgedir");
  const auto synth = fresh_dir("judgedir_synth");
  REQUIRE(cli("synthesize --concept lion --layer 0 --steps 60 --output " + synth.string()).status == 0);
  fs::copy_file(synth / "image.png", dir / "lion.png");
  const auto r = cli("judge --images " + dir.string() + " --protocol open --samples 3");
  REQUIRE(r.status == 0);
  const auto j = read_json(dir / "recognition.json");
  REQUIRE(j.size() == 1);
  REQUIRE(j[0].at("concept") == "lion");
}
