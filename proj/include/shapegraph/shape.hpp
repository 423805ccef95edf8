#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "shapegraph/dataio.hpp"
#include "shapegraph/error.hpp"

namespace shapegraph {

struct Pixel {
  std::int32_t x = 0;  // column
  std::int32_t y = 0;  // row
  bool operator==(const Pixel&) const = default;
};

struct PixelSet {
  std::vector<Pixel> coords;  // row-major scan order, unique
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  bool operator==(const PixelSet&) const = default;
};

using Histogram = std::array<std::uint64_t, 256>;

inline Histogram histogram(const GrayImage& img) {
  Histogram h{};
  for (auto v : img.data) ++h[v];
  return h;
}

// Between-class variance scaled by N^2: (n1*S0 - n0*S1)^2 / (n0*n1).
// Equal class compositions give bit-identical objectives, so plateaus tie
// exactly and resolve to the smallest threshold.
inline double otsu_objective(std::uint64_t n0, std::uint64_t s0, std::uint64_t n1, std::uint64_t s1) {
  if (n0 == 0 || n1 == 0) return -1.0;
  const auto diff = static_cast<__int128>(n1) * s0 - static_cast<__int128>(n0) * s1;
  const long double num = static_cast<long double>(diff) * static_cast<long double>(diff);
  return static_cast<double>(num / (static_cast<long double>(n0) * static_cast<long double>(n1)));
}

// Pixels <= t form class 0, pixels > t class 1.
inline std::uint8_t otsu_threshold(const Histogram& hist) {
  std::uint64_t total = 0, total_sum = 0;
  int distinct = 0;
  for (int v = 0; v < 256; ++v) {
    total += hist[v];
    total_sum += hist[v] * static_cast<std::uint64_t>(v);
    distinct += hist[v] > 0;
  }
  if (distinct < 2) fail(ErrorCode::DegenerateHistogram, "image has a single intensity value");

  std::uint64_t n0 = 0, s0 = 0;
  double best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += hist[t];
    s0 += hist[t] * static_cast<std::uint64_t>(t);
    const double obj = otsu_objective(n0, s0, total - n0, total_sum - s0);
    if (obj > best) {
      best = obj;
      best_t = t;
    }
  }
  return static_cast<std::uint8_t>(best_t);
}

inline std::uint8_t otsu_threshold(const GrayImage& img) { return otsu_threshold(histogram(img)); }

// Foreground is the minority side of the Otsu split, which makes the
// result independent of image polarity. An exact half/half split picks the
// darker class.
inline PixelSet extract_shape(const GrayImage& img) {
  const auto hist = histogram(img);
  const auto t = otsu_threshold(hist);
  std::uint64_t dark = 0;
  for (int v = 0; v <= t; ++v) dark += hist[v];
  const std::uint64_t bright = img.data.size() - dark;
  const bool take_dark = dark <= bright;
  if ((take_dark ? dark : bright) == 0) fail(ErrorCode::EmptyForeground, "minority class is empty");

  PixelSet out;
  out.width = img.width;
  out.height = img.height;
  out.coords.reserve(take_dark ? dark : bright);
  for (std::uint32_t y = 0; y < img.height; ++y)
    for (std::uint32_t x = 0; x < img.width; ++x)
      if ((img.at(x, y) <= t) == take_dark)
        out.coords.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y)});
  return out;
}

}  // namespace shapegraph
