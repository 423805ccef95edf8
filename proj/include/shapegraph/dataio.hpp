#pragma once

// Dataset containers (IDX, PGM/PBM, CSV manifests) and the four image
// transformations used by the invariance experiments.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "shapegraph/error.hpp"
#include "shapegraph/rng.hpp"

namespace shapegraph {

struct GrayImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> data;  // row-major

  GrayImage() = default;
  GrayImage(std::uint32_t w, std::uint32_t h, std::uint8_t fill = 0)
      : width(w), height(h), data(std::size_t{w} * h, fill) {
    if (w == 0 || h == 0) fail(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
  }
  GrayImage(std::uint32_t w, std::uint32_t h, std::vector<std::uint8_t> pixels)
      : width(w), height(h), data(std::move(pixels)) {
    if (w == 0 || h == 0) fail(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
    if (data.size() != std::size_t{w} * h)
      fail(ErrorCode::DimMismatch, "pixel count " + std::to_string(data.size()) + " != " +
                                       std::to_string(w) + "x" + std::to_string(h));
  }

  std::uint8_t at(std::uint32_t x, std::uint32_t y) const { return data[std::size_t{y} * width + x]; }
  std::uint8_t& at(std::uint32_t x, std::uint32_t y) { return data[std::size_t{y} * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

struct LabeledDataset {
  std::vector<GrayImage> images;
  std::vector<std::uint32_t> labels;
  std::uint32_t class_count = 0;
  std::vector<std::string> class_names;  // empty for numeric datasets

  std::size_t size() const { return images.size(); }

  void validate() const {
    if (images.empty()) fail(ErrorCode::EmptyInput, "dataset is empty");
    if (images.size() != labels.size())
      fail(ErrorCode::CountMismatch, "image/label count differ");
    for (auto l : labels)
      if (l >= class_count)
        fail(ErrorCode::InvalidArgument, "label " + std::to_string(l) + " >= class_count");
  }

  LabeledDataset subset(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.class_count = class_count;
    out.class_names = class_names;
    out.images.reserve(idx.size());
    out.labels.reserve(idx.size());
    for (auto i : idx) {
      out.images.push_back(images.at(i));
      out.labels.push_back(labels.at(i));
    }
    return out;
  }

  LabeledDataset head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return subset(idx);
  }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline LabeledDataset read_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 4 || lab.size() < 4) fail(ErrorCode::Truncated, "IDX magic");
  if (detail::read_be32(img, 0) != kIdxImageMagic)
    fail(ErrorCode::BadMagic, images_path.string() + " is not an IDX image file");
  if (detail::read_be32(lab, 0) != kIdxLabelMagic)
    fail(ErrorCode::BadMagic, labels_path.string() + " is not an IDX label file");
  if (img.size() < 16) fail(ErrorCode::Truncated, images_path.string() + ": header");
  if (lab.size() < 8) fail(ErrorCode::Truncated, labels_path.string() + ": header");

  const std::uint32_t count = detail::read_be32(img, 4);
  const std::uint32_t rows = detail::read_be32(img, 8);
  const std::uint32_t cols = detail::read_be32(img, 12);
  const std::uint32_t label_count = detail::read_be32(lab, 4);
  if (count != label_count)
    fail(ErrorCode::CountMismatch, std::to_string(count) + " images vs " +
                                       std::to_string(label_count) + " labels");
  const std::size_t plane = std::size_t{rows} * cols;
  if (img.size() < 16 + plane * count) fail(ErrorCode::Truncated, images_path.string());
  if (lab.size() < 8 + std::size_t{count}) fail(ErrorCode::Truncated, labels_path.string());

  LabeledDataset ds;
  ds.images.reserve(count);
  ds.labels.reserve(count);
  std::uint32_t max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto first = img.begin() + static_cast<std::ptrdiff_t>(16 + plane * i);
    ds.images.emplace_back(cols, rows, std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(plane)));
    ds.labels.push_back(lab[8 + i]);
    max_label = std::max<std::uint32_t>(max_label, lab[8 + i]);
  }
  ds.class_count = count == 0 ? 0 : max_label + 1;
  return ds;
}

inline void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  if (ds.images.empty()) fail(ErrorCode::EmptyInput, "nothing to write");
  const auto w = ds.images.front().width, h = ds.images.front().height;
  std::vector<std::uint8_t> img, lab;
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(img, h);
  detail::put_be32(img, w);
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& im = ds.images[i];
    if (im.width != w || im.height != h)
      fail(ErrorCode::DimMismatch, "IDX requires equal image dimensions");
    if (ds.labels[i] > 255) fail(ErrorCode::InvalidArgument, "IDX labels are single bytes");
    img.insert(img.end(), im.data.begin(), im.data.end());
    lab.push_back(static_cast<std::uint8_t>(ds.labels[i]));
  }
  detail::write_file(images_path, img);
  detail::write_file(labels_path, lab);
}

// ---------------------------------------------------------------------------
// PGM / PBM

namespace detail {

// Tokenizer for the ASCII part of netpbm headers; skips whitespace and
// '#'-comments.
class PnmCursor {
 public:
  explicit PnmCursor(std::span<const std::uint8_t> bytes) : b_(bytes) {}

  std::uint32_t next_uint(const std::string& what) {
    skip_space();
    if (pos_ >= b_.size()) fail(ErrorCode::Truncated, "missing " + what);
    if (b_[pos_] < '0' || b_[pos_] > '9') fail(ErrorCode::UnsupportedFormat, "bad " + what);
    std::uint64_t v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 0xffffffffULL) fail(ErrorCode::UnsupportedFormat, what + " too large");
    }
    return static_cast<std::uint32_t>(v);
  }

  // P1 allows bits without separating whitespace.
  std::uint8_t next_bit() {
    skip_space();
    if (pos_ >= b_.size()) fail(ErrorCode::Truncated, "bitmap data");
    const auto c = b_[pos_++];
    if (c != '0' && c != '1') fail(ErrorCode::UnsupportedFormat, "bad P1 bit");
    return static_cast<std::uint8_t>(c - '0');
  }

  // Exactly one whitespace byte separates the header from binary data.
  std::size_t binary_start() const { return pos_ + 1; }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      const auto c = b_[pos_];
      if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Reads P1/P2/P4/P5. Bitmaps map ink (bit 1) to 0 and paper (bit 0) to 255.
inline GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P') fail(ErrorCode::UnsupportedFormat, path.string());
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '1' && kind != '2' && kind != '4' && kind != '5')
    fail(ErrorCode::UnsupportedFormat, path.string() + ": P" + std::string(1, kind));

  detail::PnmCursor cur(bytes);
  cur.seek(2);
  const auto w = cur.next_uint("width");
  const auto h = cur.next_uint("height");
  if (w == 0 || h == 0) fail(ErrorCode::UnsupportedFormat, "zero image dimension");
  std::uint32_t maxval = 1;
  if (kind == '2' || kind == '5') {
    maxval = cur.next_uint("maxval");
    if (maxval == 0 || maxval > 255) fail(ErrorCode::UnsupportedFormat, "maxval must be in [1,255]");
  }

  GrayImage img(w, h);
  const std::size_t n = std::size_t{w} * h;
  auto rescale = [maxval](std::uint32_t v) {
    if (v > maxval) fail(ErrorCode::UnsupportedFormat, "sample exceeds maxval");
    return static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  };
  switch (kind) {
    case '1':
      for (std::size_t i = 0; i < n; ++i) img.data[i] = cur.next_bit() ? 0 : 255;
      break;
    case '2':
      for (std::size_t i = 0; i < n; ++i) img.data[i] = rescale(cur.next_uint("sample"));
      break;
    case '4': {
      const std::size_t row_bytes = (w + 7) / 8;
      const std::size_t start = cur.binary_start();
      if (bytes.size() < start + row_bytes * h) fail(ErrorCode::Truncated, path.string());
      for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
          const auto byte = bytes[start + y * row_bytes + x / 8];
          img.at(x, y) = ((byte >> (7 - x % 8)) & 1) ? 0 : 255;
        }
      break;
    }
    case '5': {
      const std::size_t start = cur.binary_start();
      if (bytes.size() < start + n) fail(ErrorCode::Truncated, path.string());
      for (std::size_t i = 0; i < n; ++i) img.data[i] = rescale(bytes[start + i]);
      break;
    }
  }
  return img;
}

// `comments` become `# ` lines after the magic.
inline void write_pgm(const GrayImage& img, const std::filesystem::path& path, const std::vector<std::string>& comments = {}) {
  std::string header = "P5\n";
  for (const auto& c : comments) header += "# " + c + "\n";
  header += std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), img.data.begin(), img.data.end());
  detail::write_file(path, bytes);
}

// ---------------------------------------------------------------------------
// Manifest

namespace detail {

inline std::string trim(std::string s) {
  const auto* ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  const auto last = s.find_last_not_of(ws);
  s.erase(last == std::string::npos ? 0 : last + 1);
  return s;
}

// Splits one CSV record; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  for (auto& f : out) f = trim(f);
  return out;
}

}  // namespace detail

// CSV with header `path,label`; paths are relative to the manifest. Label
// strings get ids in order of first appearance. Lines starting with `#` are
// comments.
inline LabeledDataset read_manifest_dir(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorCode::MissingFile, "cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  LabeledDataset ds;
  std::unordered_map<std::string, std::uint32_t> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
        static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
      line.erase(0, 3);
    if (const auto t = detail::trim(line); t.empty() || t[0] == '#') continue;
    const auto fields = detail::split_csv(line);
    if (!header_seen) {
      if (fields.size() != 2 || fields[0] != "path" || fields[1] != "label")
        fail(ErrorCode::UnsupportedFormat, manifest.string() + ": header must be `path,label`");
      header_seen = true;
      continue;
    }
    if (fields.size() != 2)
      fail(ErrorCode::UnsupportedFormat, manifest.string() + ":" + std::to_string(line_no) +
                                             ": expected 2 fields");
    const auto path = base / fields[0];
    if (!std::filesystem::exists(path))
      fail(ErrorCode::MissingFile, manifest.string() + ":" + std::to_string(line_no) + ": " +
                                       path.string() + " not found");
    auto [it, inserted] = ids.try_emplace(fields[1], static_cast<std::uint32_t>(ids.size()));
    if (inserted) ds.class_names.push_back(fields[1]);
    ds.images.push_back(read_pgm(path));
    ds.labels.push_back(it->second);
  }
  if (ds.images.empty()) fail(ErrorCode::EmptyManifest, manifest.string() + " lists no images");
  ds.class_count = static_cast<std::uint32_t>(ids.size());
  return ds;
}

// ---------------------------------------------------------------------------
// Transformations

struct TransformSpec {
  double rotation_deg = 0;  // angle drawn in [-r, +r]
  std::int32_t translate_px = 0;  // per-axis shift drawn in [-t, +t]
  double scale_lo = 1;  // factor drawn in (lo, hi]
  double scale_hi = 1;
  bool invert = false;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(scale_lo > 0) || !(scale_hi >= scale_lo))
      fail(ErrorCode::InvalidArgument, "scale range must satisfy 0 < lo <= hi");
    if (!(rotation_deg >= 0)) fail(ErrorCode::InvalidArgument, "rotation range must be >= 0");
    if (translate_px < 0) fail(ErrorCode::InvalidArgument, "translation range must be >= 0");
  }
};

// One concrete draw from a TransformSpec.
struct TransformDraw {
  double angle_deg = 0;
  std::int32_t dx = 0;
  std::int32_t dy = 0;
  double scale = 1;
  bool invert = false;
};

inline TransformDraw draw_transform(const TransformSpec& spec, Rng& rng) {
  spec.validate();
  TransformDraw d;
  d.angle_deg = spec.rotation_deg > 0 ? rng.uniform(-spec.rotation_deg, spec.rotation_deg) : 0.0;
  if (spec.translate_px > 0) {
    d.dx = static_cast<std::int32_t>(rng.between(-spec.translate_px, spec.translate_px));
    d.dy = static_cast<std::int32_t>(rng.between(-spec.translate_px, spec.translate_px));
  }
  d.scale = spec.scale_hi > spec.scale_lo
                ? spec.scale_hi - rng.uniform() * (spec.scale_hi - spec.scale_lo)
                : spec.scale_hi;
  d.invert = spec.invert;
  return d;
}

// Per-item draw: depends only on the spec seed and the item index.
inline TransformDraw draw_transform(const TransformSpec& spec, std::size_t item_index) {
  Rng rng(derive_seed(spec.rng_seed, item_index));
  return draw_transform(spec, rng);
}

// Most frequent intensity; ties go to the lower value.
inline std::uint8_t modal_intensity(const GrayImage& img) {
  std::array<std::size_t, 256> hist{};
  for (auto v : img.data) ++hist[v];
  return static_cast<std::uint8_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
}

inline GrayImage invert(const GrayImage& img) {
  GrayImage out = img;
  for (auto& v : out.data) v = static_cast<std::uint8_t>(255 - v);
  return out;
}

namespace detail {

struct InverseMap {
  double cx, cy, cos_a, sin_a, inv_scale, dx, dy;

  InverseMap(const GrayImage& img, const TransformDraw& d)
      : cx((img.width - 1) / 2.0),
        cy((img.height - 1) / 2.0),
        cos_a(std::cos(d.angle_deg * std::numbers::pi / 180.0)),
        sin_a(std::sin(d.angle_deg * std::numbers::pi / 180.0)),
        inv_scale(1.0 / d.scale),
        dx(d.dx),
        dy(d.dy) {}

  // Output pixel -> source location: undo translation, rotation, scaling.
  std::pair<double, double> operator()(double x, double y) const {
    const double ux = (x - dx - cx) * inv_scale;
    const double uy = (y - dy - cy) * inv_scale;
    return {cx + cos_a * ux + sin_a * uy, cy - sin_a * ux + cos_a * uy};
  }

  // Source pixel -> output location.
  std::pair<double, double> forward(double x, double y) const {
    const double ux = x - cx, uy = y - cy;
    const double rx = cos_a * ux - sin_a * uy;
    const double ry = sin_a * ux + cos_a * uy;
    return {cx + rx / inv_scale + dx, cy + ry / inv_scale + dy};
  }
};

}  // namespace detail

// Scale about the center, rotate about the center, shift by whole pixels,
// then optionally invert. Bilinear resampling; uncovered area takes the
// modal intensity. Content leaving the frame is clipped.
inline GrayImage apply_transform(const GrayImage& img, const TransformDraw& d) {
  const std::uint8_t fill = modal_intensity(img);
  GrayImage out(img.width, img.height, fill);
  const detail::InverseMap map(img, d);
  const auto w = static_cast<std::int64_t>(img.width), h = static_cast<std::int64_t>(img.height);
  auto sample = [&](std::int64_t x, std::int64_t y) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return fill;
    return img.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y));
  };
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto [sx, sy] = map(static_cast<double>(x), static_cast<double>(y));
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const auto x0 = static_cast<std::int64_t>(fx0), y0 = static_cast<std::int64_t>(fy0);
      double v = sample(x0, y0) * (1 - fx) * (1 - fy);
      if (fx != 0) v += sample(x0 + 1, y0) * fx * (1 - fy);
      if (fy != 0) v += sample(x0, y0 + 1) * (1 - fx) * fy;
      if (fx != 0 && fy != 0) v += sample(x0 + 1, y0 + 1) * fx * fy;
      out.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)) =
          static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  if (d.invert) out = invert(out);
  return out;
}

inline GrayImage apply_transform(const GrayImage& img, const TransformSpec& spec, Rng& rng) {
  return apply_transform(img, draw_transform(spec, rng));
}

// True if any non-background pixel would land outside the frame.
inline bool transform_clips_content(const GrayImage& img, const TransformDraw& d) {
  const std::uint8_t fill = modal_intensity(img);
  const detail::InverseMap map(img, d);
  for (std::uint32_t y = 0; y < img.height; ++y)
    for (std::uint32_t x = 0; x < img.width; ++x) {
      if (img.at(x, y) == fill) continue;
      const auto [ox, oy] = map.forward(x, y);
      if (ox < -0.5 || oy < -0.5 || ox > img.width - 0.5 || oy > img.height - 0.5) return true;
    }
  return false;
}

}  // namespace shapegraph
