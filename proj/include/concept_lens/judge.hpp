#pragma once

// Recognition evaluation of synthesised images.
//
// A judge client answers a one-word question about an image (open, or
// hinted with the concept's category) and grades each answer against the
// concept with a binary rubric. Each image is sampled several times; its
// rate is the mean verdict over the samples that did not fail in transport.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "errors.hpp"
#include "imrep.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "resources.hpp"
#include "stats.hpp"
#include "toy_backend.hpp"

namespace clens {

enum class ProtocolKind { open, hinted };

// `guess` is the wording used for the reported results; `plain` is the
// shorter variant printed alongside the rubric. Both are kept selectable.
enum class QuestionWording { guess, plain };

inline std::string to_string(ProtocolKind k) { return k == ProtocolKind::open ? "open" : "hinted"; }
inline std::string to_string(QuestionWording w) { return w == QuestionWording::guess ? "guess" : "plain"; }

inline ProtocolKind parse_protocol_kind(std::string_view s) {
  if (s == "open") return ProtocolKind::open;
  if (s == "hinted") return ProtocolKind::hinted;
  throw InputError("unknown protocol '" + std::string(s) + "'");
}

inline QuestionWording parse_question_wording(std::string_view s) {
  if (s == "guess") return QuestionWording::guess;
  if (s == "plain") return QuestionWording::plain;
  throw InputError("unknown question wording '" + std::string(s) + "'");
}

struct JudgeProtocol {
  ProtocolKind kind = ProtocolKind::open;
  std::string category;  // hint noun; required iff hinted
  int samples_per_image = 10;
  QuestionWording wording = QuestionWording::guess;

  void validate() const {
    if (samples_per_image < 1) throw InputError("samples_per_image must be at least 1");
    if (kind == ProtocolKind::hinted && category.empty()) throw InputError("hinted protocol requires a category");
  }
};

inline std::string build_question(const JudgeProtocol& p) {
  p.validate();
  const std::string subject = p.kind == ProtocolKind::open ? "What" : "What " + p.category;
  const std::string tail =
      p.wording == QuestionWording::guess ? " is in the image if you had to guess? One word." : " is in the image? One word.";
  return subject + tail;
}

// Single pass over the template, so placeholder-like text inside the
// substituted values is left alone.
inline std::string build_rubric(std::string_view request, std::string_view response, std::string_view concept_text) {
  const std::string_view tpl = resources::kRubricTemplate;
  std::string out;
  out.reserve(tpl.size() + request.size() + response.size() + 4 * concept_text.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      auto close = tpl.find('}', i);
      if (close != std::string_view::npos) {
        auto key = tpl.substr(i + 1, close - i - 1);
        const std::string_view* value = key == "request"    ? &request
                                        : key == "response" ? &response
                                        : key == "concept"  ? &concept_text
                                                            : nullptr;
        if (value) {
          out.append(*value);
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tpl[i++]);
  }
  return out;
}

// Parses the grader's trailing "Result: 0" / "Result: 1"; the last
// occurrence wins.
inline std::optional<int> parse_rubric_verdict(std::string_view text) {
  const std::string_view key = "Result:";
  std::optional<int> verdict;
  for (auto pos = text.find(key); pos != std::string_view::npos; pos = text.find(key, pos + 1)) {
    auto j = pos + key.size();
    while (j < text.size() && (text[j] == ' ' || text[j] == '*')) ++j;
    if (j < text.size() && (text[j] == '0' || text[j] == '1')) verdict = text[j] - '0';
  }
  return verdict;
}

inline std::string case_fold(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// 1 iff the case-folded concept occurs in the case-folded response.
inline int keyword_verdict(std::string_view response, std::string_view concept_text) {
  return case_fold(response).find(case_fold(concept_text)) != std::string::npos ? 1 : 0;
}

struct SampleContext {
  std::string image_id;
  int sample_index = 0;
  std::uint64_t seed = 0;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string describe_image(const Image& image, const std::string& question,
                                     const SampleContext& ctx) const = 0;
  virtual int grade(const std::string& request, const std::string& response,
                    const std::string& concept_text) const = 0;
  // Model identifiers recorded alongside results.
  virtual std::map<std::string, std::string> identity() const = 0;
};

// Offline client: answers come from a caller-supplied function (canned
// responses in tests), grading is the keyword rule.
class KeywordJudge : public JudgeClient {
 public:
  using Describe = std::function<std::string(const Image&, const std::string&, const SampleContext&)>;
  explicit KeywordJudge(Describe describe) : describe_(std::move(describe)) {}

  std::string describe_image(const Image& image, const std::string& question, const SampleContext& ctx) const override {
    return describe_(image, question, ctx);
  }
  int grade(const std::string&, const std::string& response, const std::string& concept_text) const override {
    return keyword_verdict(response, concept_text);
  }
  std::map<std::string, std::string> identity() const override {
    return {{"describer", "scripted"}, {"grader", "keyword"}};
  }

 private:
  Describe describe_;
};

// Offline client for toy-backend images: names the planted concept whose
// axis best matches the mean of the grey-centred layer-0 patches, or
// "noise" when nothing matches well. Graded by the keyword rule.
class ToyClassifierJudge : public JudgeClient {
 public:
  explicit ToyClassifierJudge(const ToyBackend& toy, double min_cosine = 0.3)
      : toy_(toy), min_cosine_(min_cosine), baseline_(compute_image_baseline(toy, LayerIndex{0})) {}

  struct Classification {
    std::string label;
    double cosine = 0.0;
  };

  Classification classify(const Image& image) const {
    const auto patches = toy_.forward_patches(image, LayerIndex{0});
    const Vector rep = centred_patches(patches, baseline_).colwise().mean().transpose();
    Classification best{"noise", -1.0};
    if (rep.norm() < 1e-9) return {"noise", 0.0};  // grey, or indistinguishable from it
    const auto& names = toy_planted_concepts();
    for (std::size_t k = 0; k < names.size(); ++k) {
      const double c = cosine(rep, toy_.concept_axis(k));
      if (c > best.cosine) best = {names[k], c};
    }
    if (best.cosine < min_cosine_) best.label = "noise";
    return best;
  }

  std::string describe_image(const Image& image, const std::string&, const SampleContext&) const override {
    return classify(image).label;
  }
  int grade(const std::string&, const std::string& response, const std::string& concept_text) const override {
    return keyword_verdict(response, concept_text);
  }
  std::map<std::string, std::string> identity() const override {
    return {{"describer", "toy-classifier"}, {"grader", "keyword"}};
  }

 private:
  const ToyBackend& toy_;
  double min_cosine_;
  ImageBaseline baseline_;
};

struct JudgeSample {
  std::optional<std::string> response;
  std::optional<int> verdict;
  bool missing = false;  // transport kept failing; excluded from the rate
  std::string error;
  int attempts = 0;
};

struct RecognitionRecord {
  std::string image_id;
  std::string concept_text;
  std::string category;
  std::optional<LayerIndex> layer;
  JudgeProtocol protocol;
  std::string question;
  std::vector<JudgeSample> samples;
  std::optional<double> rate;  // empty when every sample is missing
  std::map<std::string, std::string> client;

  std::vector<std::string> raw_responses() const {
    std::vector<std::string> out;
    for (const auto& s : samples)
      if (s.response) out.push_back(*s.response);
    return out;
  }
  std::vector<int> verdicts() const {
    std::vector<int> out;
    for (const auto& s : samples)
      if (s.verdict) out.push_back(*s.verdict);
    return out;
  }
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
};

struct EvaluationOptions {
  RetryPolicy retry;
  std::size_t max_concurrency = 1;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename F>
auto with_retry(const RetryPolicy& policy, int& attempts, F&& f) -> decltype(f()) {
  for (int a = 0;; ++a) {
    attempts = a + 1;
    try {
      return f();
    } catch (const TransportError&) {
      if (a + 1 >= policy.max_attempts) throw;
      std::this_thread::sleep_for(policy.base_delay * (1 << std::min(a, 10)));
    }
  }
}

}  // namespace detail

struct ImageToJudge {
  std::string image_id;
  std::string concept_text;
  std::string category;  // catalogue category name
  std::string hint;      // noun for the hinted question
  std::optional<LayerIndex> layer;
};

inline std::vector<RecognitionRecord> evaluate_image(const Image& image, const ImageToJudge& item,
                                                     const std::vector<JudgeProtocol>& protocols,
                                                     const JudgeClient& client, const EvaluationOptions& opts = {}) {
  std::vector<RecognitionRecord> records;
  for (std::size_t pi = 0; pi < protocols.size(); ++pi) {
    JudgeProtocol proto = protocols[pi];
    if (proto.kind == ProtocolKind::hinted && proto.category.empty()) proto.category = item.hint;
    RecognitionRecord rec;
    rec.image_id = item.image_id;
    rec.concept_text = item.concept_text;
    rec.category = item.category;
    rec.layer = item.layer;
    rec.protocol = proto;
    rec.question = build_question(proto);
    rec.client = client.identity();
    rec.samples.resize(static_cast<std::size_t>(proto.samples_per_image));
    parallel_for(rec.samples.size(), opts.max_concurrency, [&](std::size_t i) {
      JudgeSample& s = rec.samples[i];
      SampleContext ctx{item.image_id, static_cast<int>(i),
                        mix_seed(opts.seed, fnv1a64(item.image_id + "|" + to_string(proto.kind)) + i)};
      try {
        int attempts = 0;
        s.response = detail::with_retry(opts.retry, attempts,
                                        [&] { return client.describe_image(image, rec.question, ctx); });
        s.attempts = attempts;
        s.verdict = detail::with_retry(opts.retry, attempts,
                                       [&] { return client.grade(rec.question, *s.response, item.concept_text); });
        s.attempts += attempts;
        if (*s.verdict != 0 && *s.verdict != 1) throw InputError("grader returned a non-binary verdict");
      } catch (const TransportError& e) {
        s.missing = true;
        s.verdict.reset();
        s.error = e.what();
        s.attempts = opts.retry.max_attempts;
      }
    });
    const auto v = rec.verdicts();
    if (!v.empty()) rec.rate = mean_of(std::vector<double>(v.begin(), v.end()));
    records.push_back(std::move(rec));
  }
  return records;
}

inline bool is_recognised(const RecognitionRecord& r, double threshold) { return r.rate && *r.rate >= threshold; }

struct RecognitionPoint {
  std::string category;
  std::optional<LayerIndex> layer;
  ProtocolKind protocol = ProtocolKind::open;
  std::size_t images = 0;
  std::size_t recognised = 0;
  double proportion = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct RecognitionCurves {
  std::vector<RecognitionPoint> points;  // sorted by (protocol, category, layer)
  std::vector<std::string> warnings;
};

// Proportion of images (one per concept per cell) recognised, per
// (protocol, category, layer), with a normal-approximation 95% interval.
// Records without a usable rate are dropped with a warning.
inline RecognitionCurves recognition_curves(const std::vector<RecognitionRecord>& records, double threshold = 0.5) {
  if (records.empty()) throw InputError("no recognition records");
  using Key = std::tuple<int, std::string, long long>;
  std::map<Key, std::pair<std::size_t, std::size_t>> cells;
  std::map<Key, std::size_t> dropped;
  for (const auto& r : records) {
    Key k{static_cast<int>(r.protocol.kind), r.category,
          r.layer ? static_cast<long long>(r.layer->value) : -1LL};
    if (!r.rate) {
      ++dropped[k];
      continue;
    }
    auto& c = cells[k];
    ++c.first;
    c.second += is_recognised(r, threshold) ? 1 : 0;
  }
  RecognitionCurves out;
  for (const auto& [k, n] : dropped) {
    const auto& [proto, cat, layer] = k;
    out.warnings.push_back(std::to_string(n) + " record(s) without usable samples in " +
                           to_string(static_cast<ProtocolKind>(proto)) + "/" + cat + "/layer " +
                           std::to_string(layer));
  }
  for (const auto& [k, c] : cells) {
    const auto& [proto, cat, layer] = k;
    const Interval ci = proportion_ci(c.second, c.first);
    RecognitionPoint p;
    p.category = cat;
    if (layer >= 0) p.layer = LayerIndex{static_cast<std::size_t>(layer)};
    p.protocol = static_cast<ProtocolKind>(proto);
    p.images = c.first;
    p.recognised = c.second;
    p.proportion = ci.mean;
    p.ci_low = ci.low;
    p.ci_high = ci.high;
    out.points.push_back(p);
  }
  return out;
}

}  // namespace clens
