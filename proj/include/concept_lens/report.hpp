#pragma once

// Reports over a finished (frozen) manifest: recognition curves, probe
// similarity curves with p-values, and a gallery contact sheet.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "judge.hpp"
#include "manifest.hpp"
#include "plot.hpp"
#include "png_io.hpp"
#include "stats.hpp"

namespace clens {

enum class ReportKind { recognition, probe, gallery };

inline ReportKind parse_report_kind(std::string_view s) {
  if (s == "recognition") return ReportKind::recognition;
  if (s == "probe") return ReportKind::probe;
  if (s == "gallery") return ReportKind::gallery;
  throw InputError("unknown report kind '" + std::string(s) + "'");
}

struct ReportFiles {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> gaps;  // explicit list of missing cells
};

inline std::vector<RecognitionRecord> manifest_records(const RunManifest& m) {
  std::vector<RecognitionRecord> out;
  for (const auto& e : m.entries)
    if (e.status == "done") out.insert(out.end(), e.recognition.begin(), e.recognition.end());
  return out;
}

// Category order as it first appears in the manifest; layers ascending.
inline std::vector<std::string> manifest_categories(const RunManifest& m) {
  std::vector<std::string> cats;
  for (const auto& e : m.entries)
    if (std::find(cats.begin(), cats.end(), e.category) == cats.end()) cats.push_back(e.category);
  return cats;
}

inline std::vector<std::size_t> manifest_layers(const RunManifest& m) {
  std::set<std::size_t> layers;
  for (const auto& e : m.entries) layers.insert(e.layer);
  return {layers.begin(), layers.end()};
}

inline ReportFiles report_recognition(const RunManifest& m, const std::filesystem::path& out_dir,
                                      double threshold = 0.5) {
  std::filesystem::create_directories(out_dir);
  ReportFiles files;
  const auto records = manifest_records(m);
  if (records.empty()) throw InputError("manifest has no recognition records; run the sweep with judging enabled");
  const auto curves = recognition_curves(records, threshold);
  const auto cats = manifest_categories(m);
  const auto layers = manifest_layers(m);

  Json points = Json::array();
  for (const auto& p : curves.points)
    points.push_back({{"protocol", to_string(p.protocol)},
                      {"category", p.category},
                      {"layer", p.layer ? Json(p.layer->value) : Json(nullptr)},
                      {"images", p.images},
                      {"recognised", p.recognised},
                      {"proportion", p.proportion},
                      {"ci_low", p.ci_low},
                      {"ci_high", p.ci_high}});

  std::set<ProtocolKind> protocols;
  for (const auto& r : records) protocols.insert(r.protocol.kind);
  for (ProtocolKind kind : protocols) {
    std::vector<PlotSeries> series;
    for (const auto& cat : cats) {
      PlotSeries s;
      s.label = cat;
      for (std::size_t layer : layers) {
        const RecognitionPoint* hit = nullptr;
        for (const auto& p : curves.points)
          if (p.protocol == kind && p.category == cat && p.layer && p.layer->value == layer) hit = &p;
        s.x.push_back(static_cast<double>(layer));
        const double nan = std::numeric_limits<double>::quiet_NaN();
        s.y.push_back(hit ? hit->proportion : nan);
        s.low.push_back(hit ? hit->ci_low : nan);
        s.high.push_back(hit ? hit->ci_high : nan);
        if (!hit) files.gaps.push_back(to_string(kind) + "/" + cat + "/layer " + std::to_string(layer));
      }
      series.push_back(std::move(s));
    }
    PlotSpec spec;
    spec.title = "Recognition by layer (" + to_string(kind) + " question)";
    spec.x_label = "layer";
    spec.y_label = "proportion recognised";
    spec.y_min = 0.0;
    spec.y_max = 1.0;
    spec.note = "shaded: 95% normal-approximation interval; image recognised when mean verdict >= " +
                toml::format_double(threshold);
    const auto path = out_dir / ("recognition_" + to_string(kind) + ".svg");
    write_text_atomic(path, line_plot_svg(spec, series));
    files.written.push_back(path);
  }
  const auto json_path = out_dir / "recognition.json";
  write_json(json_path, {{"run_id", m.run_id},
                         {"threshold", threshold},
                         {"points", points},
                         {"warnings", curves.warnings},
                         {"gaps", files.gaps}});
  files.written.push_back(json_path);
  return files;
}

inline ReportFiles report_probe(const SimilarityProfile& prof, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  ReportFiles files;
  if (prof.records.empty()) throw InputError("similarity profile is empty");
  std::set<SimilarityMetric> metrics;
  std::set<std::size_t> layers;
  for (const auto& r : prof.records) {
    metrics.insert(r.metric);
    layers.insert(r.layer.value);
  }
  Json summary = Json::array();
  for (SimilarityMetric metric : metrics) {
    PlotSeries matched{"matched", {}, {}, {}, {}}, mismatched{"mismatched", {}, {}, {}, {}},
        control{"control corpora", {}, {}, {}, {}};
    for (std::size_t layer : layers) {
      std::vector<double> mv, xv, cv;
      for (const auto& r : prof.records) {
        if (r.metric != metric || r.layer.value != layer) continue;
        auto& dst = r.control ? cv : (r.matched ? mv : xv);
        dst.insert(dst.end(), r.values.begin(), r.values.end());
      }
      auto add = [&](PlotSeries& s, const std::vector<double>& v, const char* what) {
        s.x.push_back(static_cast<double>(layer));
        if (v.size() < 2) {
          const double nan = std::numeric_limits<double>::quiet_NaN();
          s.y.push_back(nan), s.low.push_back(nan), s.high.push_back(nan);
          if (std::string(what) != "control")
            files.gaps.push_back(to_string(metric) + "/" + what + "/layer " + std::to_string(layer));
          return;
        }
        const auto ci = normal_ci(v);
        s.y.push_back(ci.mean), s.low.push_back(ci.low), s.high.push_back(ci.high);
      };
      add(matched, mv, "matched");
      add(mismatched, xv, "mismatched");
      add(control, cv, "control");
    }
    std::vector<PlotSeries> series{matched, mismatched};
    if (std::any_of(control.y.begin(), control.y.end(), [](double v) { return std::isfinite(v); }))
      series.push_back(control);
    PlotSpec spec;
    spec.title = "Concept-image similarity by layer (" + to_string(metric) + ")";
    spec.x_label = "layer";
    spec.y_label = "cosine similarity";
    spec.note = "shaded: 95% normal-approximation interval over images";
    const auto path = out_dir / ("probe_" + to_string(metric) + ".svg");
    write_text_atomic(path, line_plot_svg(spec, series));
    files.written.push_back(path);
  }
  for (const auto& t : prof.tests)
    summary.push_back({{"layer", t.layer.value},
                       {"metric", to_string(t.metric)},
                       {"matched_mean", t.matched_mean},
                       {"mismatched_mean", t.mismatched_mean},
                       {"separated", t.matched_mean > t.mismatched_mean},
                       {"p_value", t.p_value}});
  const auto json_path = out_dir / "probe.json";
  write_json(json_path, {{"permutation_iterations", prof.permutation_iterations},
                         {"baseline_id", prof.baseline_id},
                         {"tests", summary},
                         {"gaps", files.gaps}});
  files.written.push_back(json_path);
  return files;
}

// Score used to rank images within a gallery cell: the mean of the
// per-protocol recognition rates, absent when nothing was judged.
inline std::optional<double> entry_rate(const ManifestEntry& e) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : e.recognition)
    if (r.rate) sum += *r.rate, ++n;
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Highest rate first (judged before unjudged), then lower final loss, then
// concept name, so the choice never depends on manifest order.
inline const ManifestEntry* select_best(const std::vector<const ManifestEntry*>& cell) {
  const ManifestEntry* best = nullptr;
  auto better = [](const ManifestEntry& a, const ManifestEntry& b) {
    const auto ra = entry_rate(a), rb = entry_rate(b);
    if (ra.has_value() != rb.has_value()) return ra.has_value();
    if (ra && *ra != *rb) return *ra > *rb;
    const double la = a.final_loss.value_or(std::numeric_limits<double>::infinity());
    const double lb = b.final_loss.value_or(std::numeric_limits<double>::infinity());
    if (la != lb) return la < lb;
    return a.concept_text < b.concept_text;
  };
  for (const auto* e : cell)
    if (e->status == "done" && (!best || better(*e, *best))) best = e;
  return best;
}

inline constexpr const char* kGalleryRule =
    "selection rule (our convention): per category and layer, the image with the highest mean recognition rate; "
    "ties broken by lower final loss, then by concept name";

inline ReportFiles report_gallery(const RunManifest& m, const std::filesystem::path& run_dir,
                                  const std::filesystem::path& out_dir, int cell = 128) {
  std::filesystem::create_directories(out_dir);
  ReportFiles files;
  const auto cats = manifest_categories(m);
  const auto layers = manifest_layers(m);
  if (cats.empty()) throw InputError("manifest has no entries");
  const int pad = 4;
  const int width = static_cast<int>(layers.size()) * (cell + pad) + pad;
  const int height = static_cast<int>(cats.size()) * (cell + pad) + pad;
  std::vector<double> sheet(static_cast<std::size_t>(width) * height * kChannels, 1.0);
  Json cells = Json::array();
  std::string svg_cells;
  for (std::size_t ci = 0; ci < cats.size(); ++ci) {
    for (std::size_t li = 0; li < layers.size(); ++li) {
      std::vector<const ManifestEntry*> cands;
      for (const auto& e : m.entries)
        if (e.category == cats[ci] && e.layer == layers[li]) cands.push_back(&e);
      const ManifestEntry* best = select_best(cands);
      const int ox = pad + static_cast<int>(li) * (cell + pad);
      const int oy = pad + static_cast<int>(ci) * (cell + pad);
      Json jc = {{"category", cats[ci]}, {"layer", layers[li]}};
      if (!best) {
        files.gaps.push_back(cats[ci] + "/layer " + std::to_string(layers[li]));
        jc["concept"] = nullptr;
        for (int y = 0; y < cell; ++y)
          for (int x = 0; x < cell; ++x)
            for (int c = 0; c < kChannels; ++c)
              sheet[(static_cast<std::size_t>(oy + y) * width + static_cast<std::size_t>(ox + x)) * kChannels + c] =
                  0.85;
        cells.push_back(jc);
        continue;
      }
      const Image img = load_image(run_dir / best->image, cell);
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x)
          for (int c = 0; c < kChannels; ++c)
            sheet[(static_cast<std::size_t>(oy + y) * width + static_cast<std::size_t>(ox + x)) * kChannels + c] =
                img.at(y, x, c);
      jc["concept"] = best->concept_text;
      jc["image"] = best->image;
      jc["rate"] = entry_rate(*best) ? Json(*entry_rate(*best)) : Json(nullptr);
      jc["final_loss"] = best->final_loss ? Json(*best->final_loss) : Json(nullptr);
      cells.push_back(jc);
    }
  }
  const auto png_path = out_dir / "gallery.png";
  write_png(png_path, sheet, width, height);
  files.written.push_back(png_path);

  // Labelled version referencing the same contact sheet.
  const int left = 130, top = 40;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"" +
                    std::to_string(width + left) + "\" height=\"" + std::to_string(height + top + 30) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" "
                    "fill=\"white\"/>\n<image x=\"" +
                    std::to_string(left) + "\" y=\"" + std::to_string(top) + "\" width=\"" + std::to_string(width) +
                    "\" height=\"" + std::to_string(height) + "\" xlink:href=\"gallery.png\"/>\n";
  for (std::size_t li = 0; li < layers.size(); ++li)
    svg += "<text x=\"" + std::to_string(left + pad + static_cast<int>(li) * (cell + pad) + cell / 2) + "\" y=\"" +
           std::to_string(top - 8) + "\" text-anchor=\"middle\">layer " + std::to_string(layers[li]) + "</text>\n";
  for (std::size_t ci = 0; ci < cats.size(); ++ci)
    svg += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" +
           std::to_string(top + pad + static_cast<int>(ci) * (cell + pad) + cell / 2) + "\" text-anchor=\"end\">" +
           detail::xml_escape(cats[ci]) + "</text>\n";
  svg += "<text x=\"8\" y=\"" + std::to_string(height + top + 20) + "\" font-size=\"10\" fill=\"#555\">" +
         detail::xml_escape(kGalleryRule) + "</text>\n</svg>\n";
  const auto svg_path = out_dir / "gallery.svg";
  write_text_atomic(svg_path, svg);
  files.written.push_back(svg_path);

  const auto json_path = out_dir / "gallery.json";
  write_json(json_path, {{"run_id", m.run_id}, {"rule", kGalleryRule}, {"cells", cells}, {"gaps", files.gaps}});
  files.written.push_back(json_path);
  return files;
}

}  // namespace clens
