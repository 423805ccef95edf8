#pragma once

// Shape sampling: mini-batch k-means over foreground pixel locations, then
// centering and scaling into the unit l2 ball.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "shapegraph/dataio.hpp"
#include "shapegraph/error.hpp"
#include "shapegraph/hash.hpp"
#include "shapegraph/rng.hpp"
#include "shapegraph/shape.hpp"

namespace shapegraph {

using Point2 = std::array<double, 2>;

struct PointCloud {
  std::vector<Point2> points;
  bool normalized = false;
  bool degenerate = false;  // all points coincided when normalizing

  std::size_t size() const { return points.size(); }
};

struct SamplerConfig {
  std::uint32_t s = 20;
  std::uint32_t batch_size = 32;
  std::uint32_t iters = 100;
  // Empty means the seed is derived from the shape's centered coordinates.
  std::optional<std::uint64_t> fixed_seed;

  void validate() const {
    if (s < 1 || batch_size < 1 || iters < 1)
      fail(ErrorCode::InvalidArgument, "sampler s, batch_size and iters must be >= 1");
  }

  // Iteration default by cloud size: 100 up to S = 50, growing to 300 at S = 1000.
  static std::uint32_t default_iters(std::uint32_t s) {
    if (s <= 50) return 100;
    return std::min<std::uint32_t>(300, 100 + (s - 50) * 200 / 950);
  }
};

inline double squared_distance(const Point2& a, const Point2& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

inline std::size_t nearest_center(const Point2& p, std::span<const Point2> centers) {
  std::size_t best = 0;
  double best_d = squared_distance(p, centers[0]);
  for (std::size_t c = 1; c < centers.size(); ++c) {
    const double d = squared_distance(p, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

// Within-cluster sum of squares of `points` against their nearest center.
inline double kmeans_sse(std::span<const Point2> points, std::span<const Point2> centers) {
  double sse = 0;
  for (const auto& p : points) sse += squared_distance(p, centers[nearest_center(p, centers)]);
  return sse;
}

// Distance-weighted (k-means++) seeding.
inline std::vector<Point2> kmeanspp_init(std::span<const Point2> points, std::size_t k, Rng& rng) {
  std::vector<Point2> centers;
  centers.reserve(k);
  centers.push_back(points[rng.below(points.size())]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], centers[0]);
  while (centers.size() < k) {
    double total = 0;
    for (double d : d2) total += d;
    std::size_t pick = 0;
    if (total > 0) {
      const double r = rng.uniform() * total;
      double acc = 0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(points.size());
    }
    centers.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i)
      d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
  }
  return centers;
}

inline Point2 centroid(std::span<const Point2> points) {
  double sx = 0, sy = 0;
  for (const auto& p : points) {
    sx += p[0];
    sy += p[1];
  }
  const double n = static_cast<double>(points.size());
  return {sx / n, sy / n};
}

// Sculley's mini-batch k-means with per-center learning rate 1/n_c, seeded by
// k-means++. A closing pass sets every non-empty cluster to the mean of its
// members. Inputs with at most k points are returned as-is, padded with
// copies of their centroid up to k rows.
inline std::vector<Point2> minibatch_kmeans(std::span<const Point2> points, std::uint32_t k,
                                            std::uint32_t batch_size, std::uint32_t iters,
                                            std::uint64_t seed) {
  if (points.empty()) fail(ErrorCode::EmptyInput, "no points to cluster");
  if (k < 1 || batch_size < 1 || iters < 1)
    fail(ErrorCode::InvalidArgument, "k, batch_size and iters must be >= 1");

  if (points.size() <= k) {
    std::vector<Point2> out(points.begin(), points.end());
    const Point2 c = centroid(points);
    out.resize(k, c);
    return out;
  }

  Rng rng(seed);
  auto centers = kmeanspp_init(points, k, rng);
  std::vector<std::uint64_t> counts(k, 0);
  std::vector<std::size_t> batch(batch_size), assign(batch_size);
  for (std::uint32_t it = 0; it < iters; ++it) {
    for (auto& b : batch) b = rng.below(points.size());
    for (std::size_t m = 0; m < batch.size(); ++m) assign[m] = nearest_center(points[batch[m]], centers);
    for (std::size_t m = 0; m < batch.size(); ++m) {
      auto& c = centers[assign[m]];
      const double eta = 1.0 / static_cast<double>(++counts[assign[m]]);
      const auto& x = points[batch[m]];
      c[0] = (1 - eta) * c[0] + eta * x[0];
      c[1] = (1 - eta) * c[1] + eta * x[1];
    }
  }

  std::vector<Point2> sums(k, Point2{0, 0});
  std::vector<std::uint64_t> members(k, 0);
  for (const auto& p : points) {
    const auto c = nearest_center(p, centers);
    sums[c][0] += p[0];
    sums[c][1] += p[1];
    ++members[c];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (members[c] > 0)
      centers[c] = {sums[c][0] / static_cast<double>(members[c]), sums[c][1] / static_cast<double>(members[c])};
  return centers;
}

inline std::vector<Point2> to_points(const PixelSet& pixels, std::int32_t origin_x = 0,
                                     std::int32_t origin_y = 0) {
  std::vector<Point2> pts;
  pts.reserve(pixels.size());
  for (const auto& p : pixels.coords)
    pts.push_back({static_cast<double>(p.x - origin_x), static_cast<double>(p.y - origin_y)});
  return pts;
}

// Points relative to their bounding-box corner, divided by the larger side
// and snapped to a 2^-32 grid. Translating or uniformly scaling the input
// leaves the grid coordinates unchanged, so clustering in this frame gives
// bit-identical results for such copies.
struct CanonicalFrame {
  Point2 origin{0, 0};
  double extent = 0;
  std::vector<std::array<std::int64_t, 2>> grid;
  std::vector<Point2> points;

  Point2 to_input(const Point2& p) const { return {origin[0] + p[0] * extent, origin[1] + p[1] * extent}; }
};

inline CanonicalFrame canonical_frame(std::span<const Point2> pts) {
  constexpr double unit = 0x1.0p32;
  CanonicalFrame f;
  if (pts.empty()) return f;
  Point2 lo = pts[0], hi = pts[0];
  for (const auto& p : pts)
    for (int a = 0; a < 2; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  f.origin = lo;
  f.extent = std::max(hi[0] - lo[0], hi[1] - lo[1]);
  f.grid.reserve(pts.size());
  f.points.reserve(pts.size());
  for (const auto& p : pts) {
    std::array<std::int64_t, 2> q{0, 0};
    if (f.extent > 0)
      for (int a = 0; a < 2; ++a) q[a] = std::llround((p[a] - lo[a]) / f.extent * unit);
    f.grid.push_back(q);
    f.points.push_back({static_cast<double>(q[0]) / unit, static_cast<double>(q[1]) / unit});
  }
  return f;
}

inline std::uint64_t content_seed(const CanonicalFrame& frame) {
  Fnv1a h;
  h.update_i64(static_cast<std::int64_t>(frame.grid.size()));
  for (const auto& q : frame.grid) {
    h.update_i64(q[0]);
    h.update_i64(q[1]);
  }
  return h.digest();
}

// Hash of the shape in its canonical frame: translated or rescaled copies
// collide.
inline std::uint64_t content_seed(const PixelSet& pixels) { return content_seed(canonical_frame(to_points(pixels))); }

inline std::uint64_t sampler_seed(const PixelSet& pixels, const SamplerConfig& cfg) {
  return cfg.fixed_seed ? *cfg.fixed_seed : content_seed(pixels);
}

// Clusters in pixel coordinates; returns the unnormalized cloud.
inline PointCloud minibatch_kmeans(const PixelSet& pixels, const SamplerConfig& cfg) {
  cfg.validate();
  if (pixels.empty()) fail(ErrorCode::EmptyInput, "empty pixel set");
  const auto frame = canonical_frame(to_points(pixels));
  const auto seed = cfg.fixed_seed ? *cfg.fixed_seed : content_seed(frame);
  auto centers = minibatch_kmeans(frame.points, cfg.s, cfg.batch_size, cfg.iters, seed);
  for (auto& c : centers) c = frame.to_input(c);
  return {std::move(centers), false, false};
}

inline PointCloud normalize_cloud(const PointCloud& cloud) {
  if (cloud.points.empty()) fail(ErrorCode::EmptyInput, "empty cloud");
  for (const auto& p : cloud.points)
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
      fail(ErrorCode::InvalidArgument, "cloud contains non-finite coordinates");

  PointCloud out;
  out.normalized = true;
  const Point2 c = centroid(cloud.points);
  out.points.reserve(cloud.size());
  double max_norm = 0;
  for (const auto& p : cloud.points) {
    out.points.push_back({p[0] - c[0], p[1] - c[1]});
    max_norm = std::max(max_norm, std::hypot(out.points.back()[0], out.points.back()[1]));
  }
  if (max_norm == 0) {
    for (auto& p : out.points) p = {0, 0};
    out.degenerate = true;
    return out;
  }
  for (auto& p : out.points) {
    p[0] /= max_norm;
    p[1] /= max_norm;
  }
  return out;
}

// Mini-batch k-means in the canonical frame, then normalize. Normalizing
// removes the frame's offset and scale, so the cloud depends only on the
// shape up to translation and uniform scaling.
inline PointCloud sample_points(std::span<const Point2> pts, const SamplerConfig& cfg) {
  cfg.validate();
  if (pts.empty()) fail(ErrorCode::EmptyInput, "empty point set");
  const auto frame = canonical_frame(pts);
  const auto seed = cfg.fixed_seed ? *cfg.fixed_seed : content_seed(frame);
  PointCloud raw{minibatch_kmeans(frame.points, cfg.s, cfg.batch_size, cfg.iters, seed), false, false};
  return normalize_cloud(raw);
}

// extract_shape -> minibatch_kmeans -> normalize_cloud.
inline PointCloud sample_shape(const PixelSet& pixels, const SamplerConfig& cfg) {
  if (pixels.empty()) fail(ErrorCode::EmptyInput, "empty pixel set");
  return sample_points(to_points(pixels), cfg);
}

inline PointCloud sample_shape(const GrayImage& img, const SamplerConfig& cfg) {
  return sample_shape(extract_shape(img), cfg);
}

// ---------------------------------------------------------------------------
// Labeled cloud collections and the SPC1 cache.

struct CloudSet {
  std::vector<PointCloud> clouds;
  std::vector<std::uint32_t> labels;
  std::uint32_t class_count = 0;

  std::size_t size() const { return clouds.size(); }

  CloudSet subset(std::span<const std::size_t> idx) const {
    CloudSet out;
    out.class_count = class_count;
    for (auto i : idx) {
      out.clouds.push_back(clouds.at(i));
      out.labels.push_back(labels.at(i));
    }
    return out;
  }
};

// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Each index is
// processed exactly once; callers write results by index.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned j = 0; j < jobs; ++j) {
    workers.emplace_back([&, j] {
      try {
        for (std::size_t i = j; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Cache values are f32; rounding here keeps in-memory clouds identical to
// clouds read back from a cache.
inline PointCloud round_to_f32(PointCloud c) {
  for (auto& p : c.points) {
    p[0] = static_cast<float>(p[0]);
    p[1] = static_cast<float>(p[1]);
  }
  return c;
}

inline CloudSet sample_dataset(const LabeledDataset& ds, const SamplerConfig& cfg, unsigned jobs = 1) {
  cfg.validate();
  CloudSet out;
  out.class_count = ds.class_count;
  out.labels = ds.labels;
  out.clouds.resize(ds.size());
  parallel_for(ds.size(), jobs, [&](std::size_t i) { out.clouds[i] = round_to_f32(sample_shape(ds.images[i], cfg)); });
  return out;
}

namespace detail {

inline void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t read_le32(std::span<const std::uint8_t> b, std::size_t off) {
  return std::uint32_t{b[off]} | (std::uint32_t{b[off + 1]} << 8) | (std::uint32_t{b[off + 2]} << 16) |
         (std::uint32_t{b[off + 3]} << 24);
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) { put_le32(out, std::bit_cast<std::uint32_t>(f)); }

inline float read_f32(std::span<const std::uint8_t> b, std::size_t off) {
  return std::bit_cast<float>(read_le32(b, off));
}

}  // namespace detail

inline constexpr std::array<char, 4> kCloudCacheMagic{'S', 'P', 'C', '1'};

// "SPC1", u32 count, u32 s, then per item: u32 label, s*2 f32 (x, y).
// All fields little-endian.
inline void write_cloud_cache(const std::filesystem::path& path, const CloudSet& set) {
  const std::uint32_t s = set.clouds.empty() ? 0 : static_cast<std::uint32_t>(set.clouds.front().size());
  std::vector<std::uint8_t> bytes(kCloudCacheMagic.begin(), kCloudCacheMagic.end());
  detail::put_le32(bytes, static_cast<std::uint32_t>(set.size()));
  detail::put_le32(bytes, s);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.clouds[i].size() != s) fail(ErrorCode::DimMismatch, "cache clouds must share one size");
    detail::put_le32(bytes, set.labels.at(i));
    for (const auto& p : set.clouds[i].points) {
      detail::put_f32(bytes, static_cast<float>(p[0]));
      detail::put_f32(bytes, static_cast<float>(p[1]));
    }
  }
  detail::write_file(path, bytes);
}

inline CloudSet read_cloud_cache(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 12) fail(ErrorCode::Truncated, path.string() + ": header");
  if (!std::equal(kCloudCacheMagic.begin(), kCloudCacheMagic.end(), bytes.begin()))
    fail(ErrorCode::BadMagic, path.string() + " is not an SPC1 cache");
  const std::uint32_t count = detail::read_le32(bytes, 4);
  const std::uint32_t s = detail::read_le32(bytes, 8);
  const std::size_t item = 4 + std::size_t{s} * 8;
  if (bytes.size() < 12 + item * count) fail(ErrorCode::Truncated, path.string());

  CloudSet set;
  set.clouds.reserve(count);
  set.labels.reserve(count);
  std::uint32_t max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::size_t off = 12 + item * i;
    set.labels.push_back(detail::read_le32(bytes, off));
    max_label = std::max(max_label, set.labels.back());
    off += 4;
    PointCloud c;
    c.normalized = true;
    c.points.resize(s);
    for (std::uint32_t j = 0; j < s; ++j) {
      c.points[j] = {detail::read_f32(bytes, off), detail::read_f32(bytes, off + 4)};
      off += 8;
    }
    set.clouds.push_back(std::move(c));
  }
  set.class_count = count == 0 ? 0 : max_label + 1;
  return set;
}

}  // namespace shapegraph
