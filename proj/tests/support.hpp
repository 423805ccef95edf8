#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "shapegraph/dataio.hpp"
#include "shapegraph/rng.hpp"
#include "shapegraph/tape.hpp"

namespace testing_support {

using namespace shapegraph;

// Fresh directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    for (auto& c : name)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') c = '_';
    path_ = std::filesystem::temp_directory_path() / ("shapegraph_test_" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline GrayImage random_image(std::uint32_t w, std::uint32_t h, Rng& rng, int lo = 0, int hi = 255) {
  GrayImage img(w, h);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.between(lo, hi));
  return img;
}

// Dark background with a filled bright rectangle.
inline GrayImage box_image(std::uint32_t w, std::uint32_t h, std::uint32_t x0, std::uint32_t y0, std::uint32_t x1,
                           std::uint32_t y1, std::uint8_t bg = 0, std::uint8_t fg = 255) {
  GrayImage img(w, h, bg);
  for (auto y = y0; y <= y1; ++y)
    for (auto x = x0; x <= x1; ++x) img.at(x, y) = fg;
  return img;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

// Builds a scalar from leaves holding `params` on a fresh tape.
using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheck {
  std::vector<double> rel_error;  // per parameter tensor
  double worst() const {
    double w = 0;
    for (auto e : rel_error) w = std::max(w, e);
    return w;
  }
};

// Analytic gradients vs central differences; error per tensor is
// ||analytic - numeric|| / max(||analytic||, ||numeric||).
inline GradCheck gradient_check(std::vector<Tensor<double>> params, const ScalarFn& fn, double step = 1e-3) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p, true));
    auto out = fn(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v.id));
  }
  auto eval = [&] {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p, false));
    return fn(tape, vars).value()[0];
  };
  GradCheck res;
  for (std::size_t t = 0; t < params.size(); ++t) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double keep = params[t][i];
      params[t][i] = keep + step;
      const double up = eval();
      params[t][i] = keep - step;
      const double down = eval();
      params[t][i] = keep;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[t][i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    res.rel_error.push_back(std::sqrt(diff) / denom);
  }
  return res;
}

}  // namespace testing_support
