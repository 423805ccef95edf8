#pragma once

// Report writers: CSV tables with `# key=value` provenance lines, an SVG
// line chart, and embedding export.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapegraph/error.hpp"
#include "shapegraph/evalret.hpp"
#include "shapegraph/hash.hpp"

namespace shapegraph {

// Ordered flag set describing one run. Its hash goes into every artifact.
class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
  }
  std::string hash() const { return hex64(fnv1a(canonical())); }

  std::vector<std::string> header_lines() const {
    std::vector<std::string> lines{"config_hash=" + hash()};
    for (const auto& [k, v] : values_) lines.push_back(k + "=" + v);
    return lines;
  }

 private:
  std::map<std::string, std::string> values_;
};

// Binary formats have no room for provenance, so they get `<file>.json`.
inline void write_sidecar(const std::filesystem::path& artifact, const RunConfig& cfg, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j = extra;
  j["config_hash"] = cfg.hash();
  j["config"] = cfg.values();
  std::ofstream out(artifact.string() + ".json");
  if (!out) fail(ErrorCode::IoError, "cannot write " + artifact.string() + ".json");
  out << j.dump(1) << '\n';
}

inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header_lines, const std::vector<std::string>& columns)
      : out_(path) {
    if (!out_) fail(ErrorCode::IoError, "cannot write " + path.string());
    for (const auto& h : header_lines) out_ << "# " << h << '\n';
    row(columns);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_map_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                          const std::map<std::string, MapReport>& methods) {
  CsvWriter csv(path, header, {"method", "k", "map"});
  for (const auto& [name, rep] : methods)
    for (const auto& [k, v] : rep.map_at) csv.row({name, std::to_string(k), fmt_real(v)});
}

inline void write_invariance_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                                 const InvarianceReport& rep) {
  auto lines = header;
  lines.push_back("clean_accuracy=" + fmt_real(rep.clean_accuracy));
  CsvWriter csv(path, lines,
                {"transform", "items", "accuracy", "delta", "unclipped", "accuracy_unclipped", "clean_accuracy_unclipped",
                 "delta_unclipped", "identical_clouds", "identical_predictions", "failed"});
  for (const auto& r : rep.rows)
    csv.row({r.name, std::to_string(r.items), fmt_real(r.accuracy), fmt_real(r.delta), std::to_string(r.unclipped),
             fmt_real(r.accuracy_unclipped), fmt_real(r.clean_accuracy_unclipped), fmt_real(r.delta_unclipped),
             std::to_string(r.identical_clouds), std::to_string(r.identical_predictions), std::to_string(r.failed)});
}

// One `label,e0,e1,...` row per item, for external plotting.
inline void write_embeddings_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const RetrievalIndex& idx) {
  std::vector<std::string> cols{"id", "label"};
  for (std::size_t d = 0; d < idx.dim; ++d) cols.push_back("e" + std::to_string(d));
  CsvWriter csv(path, header, cols);
  char buf[32];
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::vector<std::string> cells{std::to_string(idx.ids[i]), std::to_string(idx.labels[i])};
    for (float v : idx.row(i)) {
      std::snprintf(buf, sizeof buf, "%.7g", static_cast<double>(v));
      cells.emplace_back(buf);
    }
    csv.row(cells);
  }
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal SVG line chart; y axis spans [0, 1].
inline void write_svg_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                            const std::string& y_label, const std::vector<Series>& series) {
  constexpr double W = 480, H = 320, L = 60, R = 130, T = 36, B = 46;
  double xmin = 1e300, xmax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
  if (xmin > xmax) xmin = 0, xmax = 1;
  if (xmin == xmax) xmin -= 1, xmax += 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - std::clamp(y, 0.0, 1.0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
  out << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, T, L, H - B);
  out << buf;
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.1f</text>\n", L - 6, py(y) + 4, y);
    out << buf;
  }
  for (int i = 0; i <= 4; ++i) {
    const double x = xmin + (xmax - xmin) * i / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%g</text>\n", px(x), H - B + 16, x);
    out << buf;
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  out << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : series[s].points) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(x), py(y));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s</text>\n", W - R + 10, T + 16.0 * static_cast<double>(s + 1), color,
                  series[s].name.c_str());
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace shapegraph
