#pragma once

// Retrieval scoring (MAP@k over embeddings or SSIM similarities) and the
// transformation-robustness experiment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "shapegraph/dataio.hpp"
#include "shapegraph/dgcnn.hpp"
#include "shapegraph/error.hpp"
#include "shapegraph/sampler.hpp"
#include "shapegraph/shape.hpp"
#include "shapegraph/train.hpp"

namespace shapegraph {

struct RetrievalIndex {
  std::size_t dim = 0;
  std::vector<float> embeddings;  // size() x dim, row-major
  std::vector<std::uint32_t> labels;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return {embeddings.data() + i * dim, dim}; }

  void validate() const {
    if (embeddings.size() != labels.size() * dim || ids.size() != labels.size())
      fail(ErrorCode::ShapeMismatch, "retrieval index rows disagree");
    for (float v : embeddings)
      if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "non-finite embedding");
  }
};

// Per-query precision at every requested k, and their means.
struct MapReport {
  std::map<std::uint32_t, double> map_at;
  std::map<std::uint32_t, std::vector<double>> per_query;
};

namespace detail {

// `ranked` lists candidate positions, best first; at least max(ks) long.
inline void score_query(std::span<const std::size_t> ranked, std::span<const std::uint32_t> labels, std::uint32_t query_label,
                        std::span<const std::uint32_t> ks, MapReport& rep) {
  std::size_t hits = 0, pos = 0;
  for (const auto k : ks) {
    while (pos < k) hits += labels[ranked[pos++]] == query_label;
    rep.per_query[k].push_back(static_cast<double>(hits) / static_cast<double>(k));
  }
}

inline std::vector<std::uint32_t> sorted_ks(std::span<const std::uint32_t> ks, std::size_t n) {
  std::vector<std::uint32_t> out(ks.begin(), ks.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty() || out.front() == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  if (out.back() >= n)
    fail(ErrorCode::KTooLarge, "k = " + std::to_string(out.back()) + " needs more than " + std::to_string(n) + " items");
  return out;
}

inline void finish(MapReport& rep) {
  for (auto& [k, v] : rep.per_query) rep.map_at[k] = v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace detail

// Leave-one-out retrieval by l2 distance, ties broken toward the lower id.
// Ave(P(q)) is the fraction of the k retrieved items sharing q's label.
inline MapReport map_at_k(const RetrievalIndex& index, std::span<const std::size_t> queries, std::span<const std::uint32_t> ks,
                          unsigned jobs = 1) {
  index.validate();
  const auto kk = detail::sorted_ks(ks, index.size());
  const std::size_t kmax = kk.back();
  std::vector<std::vector<std::size_t>> rankings(queries.size());
  parallel_for(queries.size(), jobs, [&](std::size_t qi) {
    const std::size_t q = queries[qi];
    if (q >= index.size()) fail(ErrorCode::InvalidArgument, "query index out of range");
    const auto qv = index.row(q);
    std::vector<std::tuple<double, std::uint64_t, std::size_t>> cand;
    cand.reserve(index.size() - 1);
    for (std::size_t j = 0; j < index.size(); ++j) {
      if (j == q) continue;
      const auto cv = index.row(j);
      double d = 0;
      for (std::size_t t = 0; t < index.dim; ++t) {
        const double diff = static_cast<double>(cv[t]) - static_cast<double>(qv[t]);
        d += diff * diff;
      }
      cand.emplace_back(d, index.ids[j], j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kmax), cand.end());
    auto& r = rankings[qi];
    for (std::size_t t = 0; t < kmax; ++t) r.push_back(std::get<2>(cand[t]));
  });
  MapReport rep;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) detail::score_query(rankings[qi], index.labels, index.labels[queries[qi]], kk, rep);
  detail::finish(rep);
  return rep;
}

inline double map_at_k(const RetrievalIndex& index, std::span<const std::size_t> queries, std::uint32_t k) {
  const std::uint32_t ks[] = {k};
  return map_at_k(index, queries, ks).map_at.at(k);
}

inline std::vector<std::size_t> all_queries(std::size_t n) {
  std::vector<std::size_t> q(n);
  std::iota(q.begin(), q.end(), std::size_t{0});
  return q;
}

// Embeddings of every cloud under eval-mode forward passes.
template <typename T>
RetrievalIndex build_index(const DgcnnModel<T>& model, const CloudSet& data, unsigned jobs = 1) {
  RetrievalIndex idx;
  idx.dim = model.config().embedding_dim();
  idx.labels = data.labels;
  idx.ids.resize(data.size());
  std::iota(idx.ids.begin(), idx.ids.end(), std::uint64_t{0});
  idx.embeddings.resize(data.size() * idx.dim);
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    const auto p = forward(model, data.clouds[i]);
    std::copy(p.embedding.begin(), p.embedding.end(), idx.embeddings.begin() + static_cast<std::ptrdiff_t>(i * idx.dim));
  });
  return idx;
}

// ---------------------------------------------------------------------------
// SSIM

inline constexpr std::uint32_t kSsimWindow = 7;
inline constexpr double kSsimC1 = (0.01 * 255) * (0.01 * 255);
inline constexpr double kSsimC2 = (0.03 * 255) * (0.03 * 255);

namespace detail {

// Summed-area table with a zero border: (w+1) x (h+1). All sums are exact
// integers, so SSIM is symmetric and ssim(a, a) == 1 bit-for-bit.
struct Integral {
  std::uint32_t w = 0, h = 0;
  std::vector<std::int64_t> t;

  template <typename F>
  Integral(std::uint32_t width, std::uint32_t height, F value) : w(width), h(height), t(std::size_t{width + 1} * (height + 1), 0) {
    for (std::uint32_t y = 0; y < h; ++y) {
      std::int64_t row = 0;
      for (std::uint32_t x = 0; x < w; ++x) {
        row += value(x, y);
        t[std::size_t{y + 1} * (w + 1) + x + 1] = t[std::size_t{y} * (w + 1) + x + 1] + row;
      }
    }
  }

  std::int64_t box(std::uint32_t x, std::uint32_t y, std::uint32_t n) const {
    const auto at = [this](std::uint32_t xx, std::uint32_t yy) { return t[std::size_t{yy} * (w + 1) + xx]; };
    return at(x + n, y + n) - at(x, y + n) - at(x + n, y) + at(x, y);
  }
};

struct SsimMoments {
  Integral sum, sq;
  explicit SsimMoments(const GrayImage& img)
      : sum(img.width, img.height, [&](auto x, auto y) { return std::int64_t{img.at(x, y)}; }),
        sq(img.width, img.height, [&](auto x, auto y) { return std::int64_t{img.at(x, y)} * img.at(x, y); }) {}
};

inline double ssim_with(const GrayImage& a, const GrayImage& b, const SsimMoments& ma, const SsimMoments& mb) {
  const Integral cross(a.width, a.height, [&](auto x, auto y) { return std::int64_t{a.at(x, y)} * b.at(x, y); });
  const std::uint32_t n = kSsimWindow;
  const double area = n * n;
  double total = 0;
  std::size_t windows = 0;
  for (std::uint32_t y = 0; y + n <= a.height; ++y)
    for (std::uint32_t x = 0; x + n <= a.width; ++x) {
      const double mu_a = ma.sum.box(x, y, n) / area, mu_b = mb.sum.box(x, y, n) / area;
      const double var_a = ma.sq.box(x, y, n) / area - mu_a * mu_a;
      const double var_b = mb.sq.box(x, y, n) / area - mu_b * mu_b;
      const double cov = cross.box(x, y, n) / area - mu_a * mu_b;
      const double num = (2 * mu_a * mu_b + kSsimC1) * (2 * cov + kSsimC2);
      const double den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
      total += num / den;
      ++windows;
    }
  return total / static_cast<double>(windows);
}

inline void check_ssim_dims(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height)
    fail(ErrorCode::DimMismatch, std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                     std::to_string(b.height));
  if (a.width < kSsimWindow || a.height < kSsimWindow)
    fail(ErrorCode::DimMismatch, "SSIM needs images of at least 7x7 pixels");
}

}  // namespace detail

// Mean SSIM over all 7x7 windows (uniform weights, stride 1, population
// statistics), C1 = (0.01*255)^2, C2 = (0.03*255)^2.
inline double ssim(const GrayImage& a, const GrayImage& b) {
  detail::check_ssim_dims(a, b);
  return detail::ssim_with(a, b, detail::SsimMoments(a), detail::SsimMoments(b));
}

// Full pairwise SSIM matrix (symmetric, unit diagonal).
inline std::vector<double> ssim_matrix(const LabeledDataset& ds, unsigned jobs = 1) {
  const std::size_t n = ds.size();
  for (std::size_t i = 1; i < n; ++i) detail::check_ssim_dims(ds.images[0], ds.images[i]);
  std::vector<detail::SsimMoments> moments;
  moments.reserve(n);
  for (const auto& img : ds.images) moments.emplace_back(img);
  std::vector<double> m(n * n, 1.0);
  parallel_for(n, jobs, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = detail::ssim_with(ds.images[i], ds.images[j], moments[i], moments[j]);
      m[i * n + j] = s;
      m[j * n + i] = s;
    }
  });
  return m;
}

// Leave-one-out retrieval ranked by SSIM (highest first, ties to the lower index).
inline MapReport ssim_retrieval_map(const LabeledDataset& ds, std::span<const std::uint32_t> ks, unsigned jobs = 1) {
  const auto kk = detail::sorted_ks(ks, ds.size());
  const auto sim = ssim_matrix(ds, jobs);
  const std::size_t n = ds.size();
  MapReport rep;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::size_t> cand;
    for (std::size_t j = 0; j < n; ++j)
      if (j != q) cand.push_back(j);
    std::partial_sort(cand.begin(), cand.begin() + kk.back(), cand.end(), [&](std::size_t a, std::size_t b) {
      const double sa = sim[q * n + a], sb = sim[q * n + b];
      return sa != sb ? sa > sb : a < b;
    });
    detail::score_query(cand, ds.labels, ds.labels[q], kk, rep);
  }
  detail::finish(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Transformation robustness

struct InvarianceCase {
  std::string name;
  TransformSpec spec;
};

// Test-time transforms: scale in (0.2, 1], rotation in +-90 degrees,
// translation in +-9 px per axis, the three combined, and inversion.
inline std::vector<InvarianceCase> default_invariance_cases(std::uint64_t seed) {
  std::vector<InvarianceCase> cases;
  auto add_case = [&](std::string name, double rot, std::int32_t shift, double slo, double shi, bool inv) {
    TransformSpec s;
    s.rotation_deg = rot;
    s.translate_px = shift;
    s.scale_lo = slo;
    s.scale_hi = shi;
    s.invert = inv;
    s.rng_seed = derive_seed(seed, cases.size() + 1);
    cases.push_back({std::move(name), s});
  };
  add_case("scale", 0, 0, 0.2, 1.0, false);
  add_case("scale_0.5_1", 0, 0, 0.5, 1.0, false);
  add_case("rotation", 90, 0, 1, 1, false);
  add_case("translation", 0, 9, 1, 1, false);
  add_case("scale_rot_translate", 90, 9, 0.2, 1.0, false);
  add_case("binary_inversion", 0, 0, 1, 1, true);
  return cases;
}

struct InvarianceRow {
  std::string name;
  std::size_t items = 0;
  double accuracy = 0;
  double delta = 0;  // accuracy - clean accuracy
  std::size_t unclipped = 0;  // items whose content stayed inside the frame
  double accuracy_unclipped = 0;
  double clean_accuracy_unclipped = 0;
  double delta_unclipped = 0;
  std::size_t identical_clouds = 0;  // bit-identical to the clean cloud
  std::size_t identical_predictions = 0;
  std::size_t failed = 0;  // transformed image had no usable foreground
};

struct InvarianceReport {
  double clean_accuracy = 0;
  std::vector<InvarianceRow> rows;
};

namespace detail {

inline bool same_cloud(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a.points[i][0]) != std::bit_cast<std::uint64_t>(b.points[i][0]) ||
        std::bit_cast<std::uint64_t>(a.points[i][1]) != std::bit_cast<std::uint64_t>(b.points[i][1]))
      return false;
  return true;
}

}  // namespace detail

// Transforms every test image, re-runs extraction, sampling and
// classification, and compares against the untransformed pipeline.
template <typename T>
InvarianceReport invariance_suite(const DgcnnModel<T>& model, const LabeledDataset& test, const SamplerConfig& sampler,
                                  std::span<const InvarianceCase> cases, unsigned jobs = 1) {
  test.validate();
  const std::size_t n = test.size();
  const auto clean = sample_dataset(test, sampler, jobs);
  const auto clean_pred = predict(model, clean, jobs);
  InvarianceReport rep;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += clean_pred[i] == test.labels[i];
  rep.clean_accuracy = static_cast<double>(hits) / static_cast<double>(n);

  constexpr std::uint32_t kFailed = ~std::uint32_t{0};
  for (const auto& c : cases) {
    std::vector<std::uint32_t> pred(n, kFailed);
    std::vector<std::uint8_t> clipped(n), same(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      const auto draw = draw_transform(c.spec, i);
      clipped[i] = transform_clips_content(test.images[i], draw);
      const auto img = apply_transform(test.images[i], draw);
      try {
        const auto cloud = round_to_f32(sample_shape(img, sampler));
        same[i] = detail::same_cloud(cloud, clean.clouds[i]);
        pred[i] = argmax<T>(forward(model, cloud).logits);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateHistogram && e.code() != ErrorCode::EmptyForeground) throw;
      }
    });
    InvarianceRow row;
    row.name = c.name;
    row.items = n;
    std::size_t ok = 0, ok_unclipped = 0, clean_ok_unclipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool correct = pred[i] == test.labels[i];
      ok += correct;
      row.failed += pred[i] == kFailed;
      row.identical_clouds += same[i];
      row.identical_predictions += pred[i] == clean_pred[i];
      if (!clipped[i]) {
        ++row.unclipped;
        ok_unclipped += correct;
        clean_ok_unclipped += clean_pred[i] == test.labels[i];
      }
    }
    row.accuracy = static_cast<double>(ok) / static_cast<double>(n);
    row.delta = row.accuracy - rep.clean_accuracy;
    if (row.unclipped > 0) {
      row.accuracy_unclipped = static_cast<double>(ok_unclipped) / static_cast<double>(row.unclipped);
      row.clean_accuracy_unclipped = static_cast<double>(clean_ok_unclipped) / static_cast<double>(row.unclipped);
      row.delta_unclipped = row.accuracy_unclipped - row.clean_accuracy_unclipped;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace shapegraph
