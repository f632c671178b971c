#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "concept_lens/http_util.hpp"
#include "concept_lens/linalg.hpp"
#include "concept_lens/minitoml.hpp"
#include "concept_lens/plot.hpp"
#include "concept_lens/random.hpp"
#include "concept_lens/raster.hpp"
#include "concept_lens/stats.hpp"

using namespace clens;
using Catch::Approx;

namespace {

// Straightforward per-pixel bilinear resize with half-pixel centres.
double oracle_sample(const Raster& src, double sy, double sx, int c) {
  const int n = src.size;
  sy = std::clamp(sy, 0.0, n - 1.0);
  sx = std::clamp(sx, 0.0, n - 1.0);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
  const double wy = sy - y0, wx = sx - x0;
  return (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
         wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
}

Raster random_raster(int size, Rng& rng, double scale = 1.0) {
  Raster r(size);
  for (auto& v : r.data) v = scale * (2.0 * rng.uniform() - 1.0);
  return r;
}

double dot(const Raster& a, const Raster& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace

TEST_CASE("bilinear resize matches a per-pixel oracle", "[raster]") {
  Rng rng(1);
  for (auto [in, out] : std::vector<std::pair<int, int>>{{8, 64}, {28, 64}, {64, 64}, {64, 72}, {72, 64}, {5, 3}}) {
    const Raster src = random_raster(in, rng);
    const Raster got = resize_bilinear(src, out);
    const double scale = static_cast<double>(in) / out;
    for (int y = 0; y < out; ++y)
      for (int x = 0; x < out; ++x)
        for (int c = 0; c < kChannels; ++c)
          REQUIRE(got.at(y, x, c) == Approx(oracle_sample(src, (y + 0.5) * scale - 0.5, (x + 0.5) * scale - 0.5, c))
                                         .margin(1e-12));
  }
}

TEST_CASE("resizer adjoint satisfies <Ax, y> = <x, A^T y>", "[raster]") {
  Rng rng(2);
  for (auto [in, out] : std::vector<std::pair<int, int>>{{8, 64}, {48, 64}, {64, 120}, {120, 64}}) {
    const Resizer rs(in, out);
    const Raster x = random_raster(in, rng);
    const Raster y = random_raster(out, rng);
    Raster ax(out, 0.0), aty(in, 0.0);
    rs.accumulate(x, ax);
    rs.accumulate_adjoint(y, aty);
    REQUIRE(dot(ax, y) == Approx(dot(x, aty)).epsilon(1e-12));
  }
}

TEST_CASE("constant images stay constant under resize", "[raster]") {
  const Raster flat(13, 0.25);
  const Raster up = resize_bilinear(flat, 40);
  for (double v : up.data) REQUIRE(v == Approx(0.25).margin(1e-15));
}

TEST_CASE("cosine handles zero vectors and scale", "[linalg]") {
  Vector a(3), b(3), z = Vector::Zero(3);
  a << 1, 0, 0;
  b << 1, 1, 0;
  REQUIRE(cosine(a, b) == Approx(1 / std::sqrt(2.0)));
  REQUIRE(cosine(a * 7.0, b * 0.1) == Approx(1 / std::sqrt(2.0)));
  REQUIRE(cosine(a, z) == 0.0);
}

TEST_CASE("cosine gradient matches central differences", "[linalg]") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Vector a(6), b(6);
    for (int i = 0; i < 6; ++i) a[i] = rng.normal(), b[i] = rng.normal();
    const Vector g = cosine_grad(a, b);
    for (int i = 0; i < 6; ++i) {
      const double h = 1e-6;
      Vector ap = a, am = a;
      ap[i] += h;
      am[i] -= h;
      REQUIRE(g[i] == Approx((cosine(ap, b) - cosine(am, b)) / (2 * h)).margin(1e-8));
    }
  }
}

TEST_CASE("rng is reproducible and in range", "[random]") {
  Rng a(42), b(42), c(43);
  std::vector<double> va, vb, vc;
  for (int i = 0; i < 100; ++i) va.push_back(a.uniform()), vb.push_back(b.uniform()), vc.push_back(c.uniform());
  REQUIRE(va == vb);
  REQUIRE(va != vc);
  Rng r(7);
  std::map<std::int64_t, int> counts;
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.uniform_int(-3, 3);
    REQUIRE(v >= -3);
    REQUIRE(v <= 3);
    ++counts[v];
  }
  REQUIRE(counts.size() == 7);
  for (const auto& [k, n] : counts) REQUIRE(std::abs(n - 10000) < 500);
  double s = 0, ss = 0;
  for (int i = 0; i < 100000; ++i) {
    const double z = r.normal();
    s += z;
    ss += z * z;
  }
  REQUIRE(std::abs(s / 1e5) < 0.02);
  REQUIRE(std::abs(ss / 1e5 - 1.0) < 0.02);
  REQUIRE(mix_seed(1, 2) != mix_seed(2, 1));
  REQUIRE(fnv1a64("apple") == fnv1a64("apple"));
}

TEST_CASE("normal interval matches hand computation", "[stats]") {
  const std::vector<double> v{1, 2, 3, 4};
  // mean 2.5, sd sqrt(5/3), sem sqrt(5/12)
  const auto ci = normal_ci(v);
  const double half = 1.959963984540054 * std::sqrt(5.0 / 12.0);
  REQUIRE(ci.mean == 2.5);
  REQUIRE(ci.low == Approx(2.5 - half).epsilon(1e-12));
  REQUIRE(ci.high == Approx(2.5 + half).epsilon(1e-12));
  REQUIRE_THROWS_AS(mean_of(std::vector<double>{}), InputError);
}

TEST_CASE("proportion interval is clipped", "[stats]") {
  const auto all = proportion_ci(10, 10);
  REQUIRE(all.mean == 1.0);
  REQUIRE(all.high == 1.0);
  REQUIRE(all.low == 1.0);
  const auto none = proportion_ci(0, 4);
  REQUIRE(none.low == 0.0);
  const auto half = proportion_ci(5, 10);
  REQUIRE(half.low == Approx(0.5 - 1.959963984540054 * std::sqrt(0.025)));
  REQUIRE_THROWS_AS(proportion_ci(0, 0), InputError);
}

TEST_CASE("proportion interval agrees with a bootstrap oracle for n = 10", "[stats]") {
  // Percentile bootstrap of the mean of 10 Bernoulli outcomes.
  for (int k : {4, 5, 6}) {
    std::vector<int> outcomes(10, 0);
    for (int i = 0; i < k; ++i) outcomes[static_cast<std::size_t>(i)] = 1;
    Rng rng(100 + static_cast<std::uint64_t>(k));
    std::vector<double> means;
    for (int b = 0; b < 40000; ++b) {
      int s = 0;
      for (int i = 0; i < 10; ++i) s += outcomes[static_cast<std::size_t>(rng.uniform_int(0, 9))];
      means.push_back(s / 10.0);
    }
    std::sort(means.begin(), means.end());
    // the bootstrap distribution is discrete; compare to the normal
    // approximation of its own spread
    const double m = mean_of(means);
    double var = 0;
    for (double x : means) var += (x - m) * (x - m);
    const double sd = std::sqrt(var / (means.size() - 1));
    const auto ci = proportion_ci(static_cast<std::size_t>(k), 10);
    REQUIRE(std::abs(ci.low - (m - kZ95 * sd)) < 0.02);
    REQUIRE(std::abs(ci.high - (m + kZ95 * sd)) < 0.02);
  }
}

TEST_CASE("permutation test", "[stats]") {
  std::vector<double> hi, lo;
  for (int i = 0; i < 30; ++i) hi.push_back(1.0 + 0.01 * i), lo.push_back(0.01 * i);
  SECTION("clear separation gives the minimum p") {
    REQUIRE(permutation_test(hi, lo, 1000, 1) == Approx(1.0 / 1001));
  }
  SECTION("reversed direction gives p near 1") { REQUIRE(permutation_test(lo, hi, 1000, 1) > 0.99); }
  SECTION("identical samples give p = 1") {
    REQUIRE(permutation_test(std::vector<double>(5, 0.3), std::vector<double>(7, 0.3), 500, 3) == 1.0);
  }
  SECTION("deterministic for a seed") {
    std::vector<double> a{0.1, 0.5, 0.3}, b{0.2, 0.4, 0.0, 0.1};
    REQUIRE(permutation_test(a, b, 2000, 9) == permutation_test(a, b, 2000, 9));
  }
  SECTION("p lies in (0, 1]") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> a, b;
      for (int i = 0; i < 8; ++i) a.push_back(rng.normal()), b.push_back(rng.normal());
      const double p = permutation_test(a, b, 200, static_cast<std::uint64_t>(t));
      REQUIRE(p > 0.0);
      REQUIRE(p <= 1.0);
    }
  }
  SECTION("errors") {
    REQUIRE_THROWS_AS(permutation_test({}, lo, 1000, 1), InputError);
    REQUIRE_THROWS_AS(permutation_test(hi, lo, 10, 1), InputError);
  }
}

TEST_CASE("toml subset parses values and reports locations", "[toml]") {
  const auto doc = toml::parse(R"(# comment
name = "x \"q\""
n = 3
f = 1.5e-3
flag = true
list = [1, 2,
  3]  # trailing

[section.sub]
words = ["a", "b"]
)",
                               "test.toml");
  REQUIRE(doc.find("")->find("name")->as_string() == "x \"q\"");
  REQUIRE(doc.find("")->find("n")->as_int() == 3);
  REQUIRE(doc.find("")->find("f")->as_double() == Approx(1.5e-3));
  REQUIRE(doc.find("")->find("flag")->as_bool());
  REQUIRE(doc.find("")->find("list")->as_int_list() == std::vector<std::int64_t>{1, 2, 3});
  REQUIRE(doc.find("section.sub")->find("words")->as_string_list() == std::vector<std::string>{"a", "b"});

  try {
    toml::parse("a = 1\nb = [1, 2\n", "bad.toml");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).rfind("bad.toml:", 0) == 0);
  }
  try {
    toml::parse("a = 1\na = 2\n", "dup.toml");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("dup.toml:2:") != std::string::npos);
  }
  REQUIRE_THROWS_AS(toml::parse("x = \"open\n"), ParseError);
  REQUIRE_THROWS_AS(toml::parse("x = 1 2\n"), ParseError);
}

TEST_CASE("format_double round-trips and keeps a decimal point", "[toml]") {
  for (double v : {0.15, 0.005, 1.0, 2.0, 16.0, 0.1, 1e-12, 123456.789}) {
    const auto s = toml::format_double(v);
    REQUIRE(s.find_first_of(".e") != std::string::npos);
    REQUIRE(toml::parse("v = " + s).find("")->find("v")->as_double() == v);
  }
  REQUIRE(toml::format_double(0.15) == "0.15");
  REQUIRE(toml::format_double(2.0) == "2.0");
}

TEST_CASE("base64 and float64 payloads round-trip", "[http]") {
  const std::string text = "any carnal pleas";
  for (std::size_t len = 0; len <= text.size(); ++len) {
    const auto enc = http::base64_encode(reinterpret_cast<const std::uint8_t*>(text.data()), len);
    const auto dec = http::base64_decode(enc);
    REQUIRE(std::string(dec.begin(), dec.end()) == text.substr(0, len));
  }
  REQUIRE(http::base64_encode(reinterpret_cast<const std::uint8_t*>("Man"), 3) == "TWFu");
  REQUIRE(http::base64_encode(reinterpret_cast<const std::uint8_t*>("Ma"), 2) == "TWE=");
  const std::vector<double> vals{0.0, -1.5, 3.141592653589793, 1e-300, 7e300};
  REQUIRE(http::decode_f64(http::encode_f64(vals)) == vals);
  REQUIRE_THROWS_AS(http::base64_decode("ab$d"), InputError);
  const auto u = http::split_url("http://127.0.0.1:8080/v1/");
  REQUIRE(u.origin == "http://127.0.0.1:8080");
  REQUIRE(u.path == "/v1");
  REQUIRE(http::split_url("https://host").path.empty());
  REQUIRE_THROWS_AS(http::split_url("host/path"), InputError);
}

TEST_CASE("svg plot has one polyline per contiguous run and marks gaps", "[plot]") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  PlotSeries full{"animals", {1, 5, 10, 15, 20, 25, 30}, {0.5, 0.4, 0.3, 0.2, 0.3, 0.4, 0.5}, {}, {}};
  full.low = full.y;
  full.high = full.y;
  for (auto& v : full.low) v -= 0.1;
  for (auto& v : full.high) v += 0.1;
  const auto svg = line_plot_svg({"t", "layer", "p", 0.0, 1.0, "", 720, 440}, {full});
  auto count = [&](const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
  };
  REQUIRE(count(svg, "<polyline") == 1);
  REQUIRE(count(svg, "<circle") == 7);
  REQUIRE(count(svg, "<polygon") == 1);
  PlotSeries gappy{"seasons", {1, 5, 10}, {0.2, nan, 0.4}, {}, {}};
  const auto svg2 = line_plot_svg({"t", "x", "y", {}, {}, "", 720, 440}, {gappy});
  REQUIRE(count(svg2, "<polyline") == 2);
  REQUIRE(count(svg2, "missing") == 1);
}
