#pragma once

// Synthetic line-drawing corpus: nine outline shape classes rendered at
// random pose, stroke width and polarity. Used where a heterogeneous,
// redistributable shape dataset is needed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "shapegraph/dataio.hpp"
#include "shapegraph/rng.hpp"

namespace shapegraph {

struct SynthConfig {
  std::uint32_t size = 64;       // square canvas side
  std::uint32_t per_class = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (size < 24) fail(ErrorCode::InvalidArgument, "synth canvas must be at least 24 px");
    if (per_class == 0) fail(ErrorCode::InvalidArgument, "per_class must be >= 1");
  }
};

inline const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names{"circle", "triangle", "square", "star", "cross",
                                              "arrow",  "rings",    "zigzag", "spiral"};
  return names;
}

namespace detail {

using Polyline = std::vector<std::array<double, 2>>;

inline Polyline regular_polygon(int n, double r, double phase = 0) {
  Polyline p;
  for (int i = 0; i <= n; ++i) {
    const double a = phase + 2 * std::numbers::pi * i / n;
    p.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return p;
}

inline Polyline closed(Polyline p) {
  p.push_back(p.front());
  return p;
}

// Strokes in a unit frame (radius about 1).
inline std::vector<Polyline> synth_strokes(std::uint32_t cls) {
  switch (cls) {
    case 0: return {regular_polygon(48, 1)};
    case 1: return {regular_polygon(3, 1, std::numbers::pi / 2)};
    case 2: return {regular_polygon(4, 1, std::numbers::pi / 4)};
    case 3: {
      Polyline p;
      for (int i = 0; i < 10; ++i) {
        const double a = std::numbers::pi / 2 + std::numbers::pi * i / 5;
        const double r = i % 2 ? 0.42 : 1.0;
        p.push_back({r * std::cos(a), r * std::sin(a)});
      }
      return {closed(p)};
    }
    case 4: {
      const double a = 0.3, b = 1.0;
      return {closed({{-a, -b}, {a, -b}, {a, -a}, {b, -a}, {b, a}, {a, a}, {a, b}, {-a, b}, {-a, a}, {-b, a}, {-b, -a}, {-a, -a}})};
    }
    case 5:
      return {closed({{-1, -0.2}, {0.2, -0.2}, {0.2, -0.6}, {1, 0}, {0.2, 0.6}, {0.2, 0.2}, {-1, 0.2}})};
    case 6: return {regular_polygon(48, 1), regular_polygon(32, 0.45)};
    case 7: return {{{-1, -0.5}, {-0.6, 0.5}, {-0.2, -0.5}, {0.2, 0.5}, {0.6, -0.5}, {1, 0.5}}};
    case 8: {
      Polyline p;
      for (int i = 0; i <= 120; ++i) {
        const double t = i / 120.0;
        const double a = 4 * std::numbers::pi * t;
        p.push_back({(0.1 + 0.9 * t) * std::cos(a), (0.1 + 0.9 * t) * std::sin(a)});
      }
      return {p};
    }
    default: fail(ErrorCode::InvalidArgument, "synth class out of range");
  }
}

inline double segment_distance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a[0]) * dx + (py - a[1]) * dy) / len2 : 0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a[0] + t * dx - px, ey = a[1] + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace detail

inline GrayImage render_synth_shape(std::uint32_t cls, Rng& rng, std::uint32_t size) {
  auto strokes = detail::synth_strokes(cls);
  const double half_width = rng.uniform(0.7, 1.8);
  const double radius = rng.uniform(0.3, 0.45) * size;
  const double aspect = rng.uniform(0.8, 1.2);
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double slack = std::max(0.0, size / 2.0 - radius * std::max(aspect, 1.0) - half_width - 2);
  const double cx = size / 2.0 + rng.uniform(-slack, slack);
  const double cy = size / 2.0 + rng.uniform(-slack, slack);
  const double c = std::cos(angle), s = std::sin(angle);
  for (auto& line : strokes)
    for (auto& p : line) {
      const double x = p[0] * radius * aspect, y = p[1] * radius / aspect;
      p = {cx + c * x - s * y, cy + s * x + c * y};
    }

  const bool dark_ink = rng.uniform() < 0.5;
  const double bg = dark_ink ? rng.uniform(200, 255) : rng.uniform(0, 55);
  const double ink = dark_ink ? rng.uniform(0, 60) : rng.uniform(195, 255);

  GrayImage img(size, size);
  for (std::uint32_t y = 0; y < size; ++y)
    for (std::uint32_t x = 0; x < size; ++x) {
      double d = 1e300;
      for (const auto& line : strokes)
        for (std::size_t i = 0; i + 1 < line.size(); ++i)
          d = std::min(d, detail::segment_distance(x + 0.5, y + 0.5, line[i], line[i + 1]));
      const double cover = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
      img.at(x, y) = static_cast<std::uint8_t>(std::lround(bg + (ink - bg) * cover));
    }
  return img;
}

// Items are class-interleaved (0,1,...,8,0,1,...) so any prefix is balanced.
inline LabeledDataset make_synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const auto& names = synth_class_names();
  const auto classes = static_cast<std::uint32_t>(names.size());
  LabeledDataset ds;
  ds.class_count = classes;
  ds.class_names = names;
  for (std::uint32_t i = 0; i < cfg.per_class; ++i)
    for (std::uint32_t c = 0; c < classes; ++c) {
      Rng rng(derive_seed(cfg.seed, std::uint64_t{i} * classes + c));
      ds.images.push_back(render_synth_shape(c, rng, cfg.size));
      ds.labels.push_back(c);
    }
  return ds;
}

// Writes <dir>/<class>/<nnnnn>.pgm plus <dir>/manifest.csv; `comments` go
// into every file header.
inline std::filesystem::path write_synth_corpus(const LabeledDataset& ds, const std::filesystem::path& dir,
                                                const std::vector<std::string>& comments = {}) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) fail(ErrorCode::IoError, "cannot write " + manifest.string());
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "path,label\n";
  char name[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& cls = ds.class_names.at(ds.labels[i]);
    std::filesystem::create_directories(dir / cls);
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    write_pgm(ds.images[i], dir / cls / name, comments);
    out << cls << '/' << name << ',' << cls << '\n';
  }
  return manifest;
}

}  // namespace shapegraph
