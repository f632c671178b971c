#include <catch_amalgamated.hpp>

#include <atomic>

#include "concept_lens/judge.hpp"
#include "concept_lens/resources.hpp"
#include "concept_lens/synth.hpp"
#include "concept_lens/toy_backend.hpp"

using namespace clens;
using Catch::Approx;

namespace {

std::string golden(const std::string& name) {
  return read_text_file(std::string(CLENS_SOURCE_DIR) + "/tests/golden/" + name);
}

KeywordJudge canned(std::vector<std::string> answers) {
  return KeywordJudge([answers](const Image&, const std::string&, const SampleContext& ctx) {
    return answers[static_cast<std::size_t>(ctx.sample_index) % answers.size()];
  });
}

EvaluationOptions fast_retry() {
  EvaluationOptions o;
  o.retry.base_delay = std::chrono::milliseconds(0);
  return o;
}

RecognitionRecord record(const std::string& cat, std::size_t layer, double rate) {
  RecognitionRecord r;
  r.category = cat;
  r.layer = LayerIndex{layer};
  r.rate = rate;
  return r;
}

}  // namespace

TEST_CASE("question wording", "[judge]") {
  JudgeProtocol open;
  REQUIRE(build_question(open) == "What is in the image if you had to guess? One word.");
  JudgeProtocol hinted{ProtocolKind::hinted, "animal", 10, QuestionWording::guess};
  REQUIRE(build_question(hinted) == "What animal is in the image if you had to guess? One word.");
  hinted.wording = QuestionWording::plain;
  REQUIRE(build_question(hinted) == "What animal is in the image? One word.");
  open.wording = QuestionWording::plain;
  REQUIRE(build_question(open) == "What is in the image? One word.");
  REQUIRE_THROWS_AS(build_question(JudgeProtocol{ProtocolKind::hinted, "", 10, QuestionWording::guess}), InputError);
  REQUIRE_THROWS_AS(build_question(JudgeProtocol{ProtocolKind::open, "", 0, QuestionWording::guess}), InputError);
  REQUIRE(parse_protocol_kind("hinted") == ProtocolKind::hinted);
  REQUIRE_THROWS_AS(parse_protocol_kind("closed"), InputError);
  REQUIRE(parse_question_wording("plain") == QuestionWording::plain);
}

TEST_CASE("rubric template is bundled verbatim", "[judge]") {
  REQUIRE(std::string(resources::kRubricTemplate) == golden("rubric_template.txt"));
}

TEST_CASE("rubric substitution", "[judge]") {
  const auto filled =
      build_rubric("What animal is in the image if you had to guess? One word.", "Frog. (Maybe a {concept} placeholder?)", "frog");
  REQUIRE(filled == golden("rubric_filled_frog.txt"));
}

TEST_CASE("rubric verdict parsing", "[judge]") {
  REQUIRE(parse_rubric_verdict("The model says frog.\nResult: 1") == 1);
  REQUIRE(parse_rubric_verdict("Result: 1\n... on reflection\nResult: 0") == 0);
  REQUIRE(parse_rubric_verdict("**Result:** 1") == 1);
  REQUIRE_FALSE(parse_rubric_verdict("no verdict here").has_value());
  REQUIRE_FALSE(parse_rubric_verdict("Result: maybe").has_value());
}

TEST_CASE("keyword grading", "[judge]") {
  REQUIRE(keyword_verdict("A FROG on a leaf", "frog") == 1);
  REQUIRE(keyword_verdict("a toad", "frog") == 0);
  REQUIRE(keyword_verdict("Spring (season)!", "spring (season)") == 1);
}

TEST_CASE("recognition rate from canned responses", "[judge]") {
  const Image img(8, 0.5);
  const ImageToJudge item{"img", "frog", "animals", "animal", LayerIndex{3}};
  const std::vector<JudgeProtocol> protocols{{ProtocolKind::open, "", 10, QuestionWording::guess},
                                             {ProtocolKind::hinted, "", 10, QuestionWording::guess}};
  {
    const auto recs = evaluate_image(img, item, protocols, canned({"Frog"}), fast_retry());
    REQUIRE(recs.size() == 2);
    REQUIRE(*recs[0].rate == 1.0);
    REQUIRE(recs[1].protocol.category == "animal");
    REQUIRE(recs[1].question == "What animal is in the image if you had to guess? One word.");
    REQUIRE(recs[0].raw_responses().size() == 10);
    REQUIRE(recs[0].client.at("grader") == "keyword");
  }
  {
    const auto recs = evaluate_image(
        img, item, {protocols[0]},
        canned({"frog", "toad", "leaf", "frog", "pond", "lizard", "frog", "newt", "rock", "water"}), fast_retry());
    REQUIRE(*recs[0].rate == Approx(0.3));
    REQUIRE(recs[0].verdicts().size() == 10);
  }
}

TEST_CASE("transient failures are retried and persistent ones go missing", "[judge]") {
  struct Flaky : JudgeClient {
    mutable std::atomic<int> calls{0};
    std::string describe_image(const Image&, const std::string&, const SampleContext& ctx) const override {
      ++calls;
      if (ctx.sample_index == 0) throw TransportError("down");
      if (ctx.sample_index == 1 && calls.load() % 2 == 1) throw TransportError("blip");
      return "frog";
    }
    int grade(const std::string&, const std::string& r, const std::string& c) const override {
      return keyword_verdict(r, c);
    }
    std::map<std::string, std::string> identity() const override { return {}; }
  } flaky;
  EvaluationOptions opts = fast_retry();
  opts.retry.max_attempts = 4;
  const ImageToJudge item{"img", "frog", "animals", "animal", std::nullopt};
  const auto recs = evaluate_image(Image(8, 0.5), item, {JudgeProtocol{ProtocolKind::open, "", 3, QuestionWording::guess}},
                                   flaky, opts);
  const auto& r = recs[0];
  REQUIRE(r.samples[0].missing);
  REQUIRE(r.samples[0].error == "down");
  REQUIRE_FALSE(r.samples[1].missing);
  REQUIRE_FALSE(r.samples[2].missing);
  REQUIRE(r.verdicts().size() == 2);
  REQUIRE(*r.rate == 1.0);

  struct Dead : JudgeClient {
    std::string describe_image(const Image&, const std::string&, const SampleContext&) const override {
      throw TransportError("gone");
    }
    int grade(const std::string&, const std::string&, const std::string&) const override { return 0; }
    std::map<std::string, std::string> identity() const override { return {}; }
  } dead;
  const auto none = evaluate_image(Image(8, 0.5), item, {JudgeProtocol{}}, dead, opts);
  REQUIRE_FALSE(none[0].rate.has_value());
  REQUIRE(none[0].samples.size() == 10);
}

TEST_CASE("recognition curves", "[judge]") {
  std::vector<RecognitionRecord> recs{record("animals", 5, 1.0), record("animals", 5, 0.9), record("animals", 5, 0.5),
                                      record("animals", 5, 0.4), record("animals", 10, 1.0), record("animals", 10, 0.7),
                                      record("fruit", 5, 0.0)};
  recs.push_back(record("fruit", 5, 0.0));
  recs.back().rate.reset();
  const auto curves = recognition_curves(recs, 0.5);
  REQUIRE(curves.points.size() == 3);
  const auto& a5 = curves.points[0];
  REQUIRE(a5.category == "animals");
  REQUIRE(a5.layer->value == 5);
  REQUIRE(a5.images == 4);
  REQUIRE(a5.proportion == Approx(0.75));
  const double half = 1.959963984540054 * std::sqrt(0.75 * 0.25 / 4);
  REQUIRE(a5.ci_low == Approx(0.75 - half));
  REQUIRE(a5.ci_high == Approx(1.0));  // 0.75 + 0.424 clipped
  const auto& a10 = curves.points[1];
  REQUIRE(a10.proportion == 1.0);
  REQUIRE(a10.ci_low == 1.0);
  REQUIRE(a10.ci_high == 1.0);
  REQUIRE(curves.points[2].proportion == 0.0);
  REQUIRE(curves.points[2].images == 1);
  REQUIRE(curves.warnings.size() == 1);
  REQUIRE_THROWS_AS(recognition_curves({}), InputError);
}

TEST_CASE("toy classifier names rendered concepts", "[judge]") {
  const ToyBackend toy;
  const ToyClassifierJudge judge(toy);
  for (std::size_t k = 0; k < toy_planted_concepts().size(); ++k)
    REQUIRE(judge.classify(toy.render_concept(k, 3)).label == toy_planted_concepts()[k]);
  REQUIRE(judge.classify(grey_image(64)).label == "noise");
}
