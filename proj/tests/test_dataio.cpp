#include <fstream>

#include "shapegraph/dataio.hpp"
#include "support.hpp"

using namespace shapegraph;
using testing_support::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
          static_cast<std::uint8_t>(v)};
}

void expect_code(ErrorCode code, const std::function<void()>& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

LabeledDataset random_dataset(std::size_t n, std::uint32_t w, std::uint32_t h, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset ds;
  ds.class_count = 10;
  for (std::size_t i = 0; i < n; ++i) {
    ds.images.push_back(testing_support::random_image(w, h, rng));
    ds.labels.push_back(static_cast<std::uint32_t>(rng.below(10)));
  }
  return ds;
}

}  // namespace

TEST(Idx, RoundTripIsBitExact) {
  TempDir dir("idx");
  const auto ds = random_dataset(17, 28, 28, 3);
  write_idx(ds, dir / "img", dir / "lab");
  const auto back = read_idx(dir / "img", dir / "lab");
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.labels, ds.labels);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.images[i], ds.images[i]);
  EXPECT_EQ(back.class_count, 10u);
}

TEST(Idx, SingleBlankImage) {
  TempDir dir("idx");
  std::vector<std::uint8_t> img;
  for (auto v : {0x803u, 1u, 28u, 28u}) {
    auto b = be32(v);
    img.insert(img.end(), b.begin(), b.end());
  }
  img.resize(img.size() + 28 * 28, 0);
  std::vector<std::uint8_t> lab = be32(0x801);
  auto c = be32(1);
  lab.insert(lab.end(), c.begin(), c.end());
  lab.push_back(7);
  write_bytes(dir / "i", img);
  write_bytes(dir / "l", lab);
  const auto ds = read_idx(dir / "i", dir / "l");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.images[0].width, 28u);
  EXPECT_EQ(ds.labels[0], 7u);
  EXPECT_EQ(std::count(ds.images[0].data.begin(), ds.images[0].data.end(), 0), 28 * 28);
}

TEST(Idx, CountMismatch) {
  TempDir dir("idx");
  auto ds = random_dataset(10, 4, 4, 1);
  write_idx(ds, dir / "i", dir / "l");
  auto nine = ds.head(9);
  write_idx(nine, dir / "i9", dir / "l9");
  expect_code(ErrorCode::CountMismatch, [&] { read_idx(dir / "i", dir / "l9"); });
}

TEST(Idx, BadMagicAndTruncation) {
  TempDir dir("idx");
  auto ds = random_dataset(3, 4, 4, 1);
  write_idx(ds, dir / "i", dir / "l");
  expect_code(ErrorCode::BadMagic, [&] { read_idx(dir / "l", dir / "l"); });
  expect_code(ErrorCode::BadMagic, [&] { read_idx(dir / "i", dir / "i"); });
  auto bytes = detail::read_file(dir / "i");
  bytes.resize(bytes.size() - 1);
  write_bytes(dir / "short", bytes);
  expect_code(ErrorCode::Truncated, [&] { read_idx(dir / "short", dir / "l"); });
  write_bytes(dir / "tiny", {0, 0});
  expect_code(ErrorCode::Truncated, [&] { read_idx(dir / "tiny", dir / "l"); });
}

TEST(Pgm, BinaryGraymap) {
  TempDir dir("pgm");
  std::vector<std::uint8_t> b{'P', '5', ' ', '2', ' ', '2', ' ', '2', '5', '5', '\n', 0, 100, 200, 255};
  write_bytes(dir / "a.pgm", b);
  const auto img = read_pgm(dir / "a.pgm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.data, (std::vector<std::uint8_t>{0, 100, 200, 255}));
}

TEST(Pgm, AsciiGraymapWithComments) {
  TempDir dir("pgm");
  write_text(dir / "a.pgm", "P2\n# made by hand\n3 1\n# max\n255\n7 8\n9\n");
  EXPECT_EQ(read_pgm(dir / "a.pgm").data, (std::vector<std::uint8_t>{7, 8, 9}));
}

TEST(Pgm, SmallMaxvalIsRescaled) {
  TempDir dir("pgm");
  write_text(dir / "a.pgm", "P2 3 1 15 0 15 8\n");
  EXPECT_EQ(read_pgm(dir / "a.pgm").data, (std::vector<std::uint8_t>{0, 255, 136}));
}

TEST(Pgm, BitmapsUseDarkInk) {
  TempDir dir("pgm");
  write_text(dir / "a.pbm", "P1\n3 2\n1 0 1\n001\n");
  EXPECT_EQ(read_pgm(dir / "a.pbm").data, (std::vector<std::uint8_t>{0, 255, 0, 255, 255, 0}));
  // P4 rows are padded to whole bytes.
  std::vector<std::uint8_t> b{'P', '4', '\n', '9', ' ', '1', '\n', 0b10000000, 0b10000000};
  write_bytes(dir / "b.pbm", b);
  const auto img = read_pgm(dir / "b.pbm");
  ASSERT_EQ(img.width, 9u);
  EXPECT_EQ(img.at(0, 0), 0);
  EXPECT_EQ(img.at(1, 0), 255);
  EXPECT_EQ(img.at(8, 0), 0);
}

TEST(Pgm, Errors) {
  TempDir dir("pgm");
  write_text(dir / "a.pam", "P7\nWIDTH 2\n");
  expect_code(ErrorCode::UnsupportedFormat, [&] { read_pgm(dir / "a.pam"); });
  write_text(dir / "b.pgm", "P5 4 4 255\n\x01\x02");
  expect_code(ErrorCode::Truncated, [&] { read_pgm(dir / "b.pgm"); });
  write_text(dir / "c.pgm", "P2 2 1 255 1\n");
  expect_code(ErrorCode::Truncated, [&] { read_pgm(dir / "c.pgm"); });
  write_text(dir / "d.pgm", "P5 2 1 300\n");
  expect_code(ErrorCode::UnsupportedFormat, [&] { read_pgm(dir / "d.pgm"); });
}

TEST(Pgm, WriteReadRoundTripWithComments) {
  TempDir dir("pgm");
  Rng rng(9);
  const auto img = testing_support::random_image(13, 7, rng);
  write_pgm(img, dir / "x.pgm", {"config_hash=abc", "second"});
  EXPECT_EQ(read_pgm(dir / "x.pgm"), img);
}

TEST(Manifest, LabelsByFirstOccurrence) {
  TempDir dir("manifest");
  std::filesystem::create_directories(dir / "sub");
  Rng rng(1);
  for (auto name : {"a.pgm", "b.pgm", "sub/c.pgm"}) write_pgm(testing_support::random_image(4, 4, rng), dir / name);
  write_text(dir / "m.csv", "path,label\na.pgm,a\nb.pgm,b\nsub/c.pgm,a\n");
  const auto ds = read_manifest_dir(dir / "m.csv");
  EXPECT_EQ(ds.class_count, 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::uint32_t>{0, 1, 0}));
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.images[2], read_pgm(dir / "sub/c.pgm"));
}

TEST(Manifest, QuotedFieldsCommentsAndCrlf) {
  TempDir dir("manifest");
  Rng rng(1);
  write_pgm(testing_support::random_image(4, 4, rng), dir / "x, y.pgm");
  write_text(dir / "m.csv", "# provenance line\r\npath,label\r\n\"x, y.pgm\",\"class \"\"one\"\"\"\r\n\r\n");
  const auto ds = read_manifest_dir(dir / "m.csv");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.class_names[0], "class \"one\"");
}

TEST(Manifest, MissingFileNamesTheRow) {
  TempDir dir("manifest");
  Rng rng(1);
  write_pgm(testing_support::random_image(4, 4, rng), dir / "a.pgm");
  write_text(dir / "m.csv", "path,label\na.pgm,a\ngone.pgm,b\n");
  try {
    read_manifest_dir(dir / "m.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingFile);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("gone.pgm"), std::string::npos);
  }
}

TEST(Manifest, EmptyAndBadHeader) {
  TempDir dir("manifest");
  write_text(dir / "m.csv", "path,label\n");
  expect_code(ErrorCode::EmptyManifest, [&] { read_manifest_dir(dir / "m.csv"); });
  write_text(dir / "n.csv", "file,class\n");
  expect_code(ErrorCode::UnsupportedFormat, [&] { read_manifest_dir(dir / "n.csv"); });
  expect_code(ErrorCode::MissingFile, [&] { read_manifest_dir(dir / "none.csv"); });
}

TEST(Dataset, ValidateCatchesBadLabels) {
  auto ds = random_dataset(3, 2, 2, 1);
  ds.class_count = 2;
  ds.labels = {0, 1, 2};
  expect_code(ErrorCode::InvalidArgument, [&] { ds.validate(); });
  LabeledDataset empty;
  expect_code(ErrorCode::EmptyInput, [&] { empty.validate(); });
}

TEST(Transform, ZeroRangesAreIdentity) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto img = testing_support::random_image(1 + static_cast<std::uint32_t>(rng.below(30)), 1 + static_cast<std::uint32_t>(rng.below(30)), rng);
    TransformSpec spec;
    spec.rng_seed = rng.next();
    EXPECT_EQ(apply_transform(img, spec, rng), img);
  }
}

TEST(Transform, InversionSwapsAndIsAnInvolution) {
  GrayImage img(2, 1, std::vector<std::uint8_t>{0, 255});
  TransformSpec spec;
  spec.invert = true;
  Rng rng(1);
  EXPECT_EQ(apply_transform(img, spec, rng).data, (std::vector<std::uint8_t>{255, 0}));
  const auto noisy = testing_support::random_image(9, 11, rng);
  EXPECT_EQ(invert(invert(noisy)), noisy);
  EXPECT_EQ(apply_transform(apply_transform(noisy, spec, rng), spec, rng), noisy);
}

TEST(Transform, IntegerTranslationShiftsPixelsExactly) {
  const auto img = testing_support::box_image(20, 20, 5, 6, 8, 9);
  TransformDraw d;
  d.dx = 3;
  d.dy = -2;
  const auto out = apply_transform(img, d);
  EXPECT_EQ(out, testing_support::box_image(20, 20, 8, 4, 11, 7));
  EXPECT_FALSE(transform_clips_content(img, d));
  d.dx = 12;
  EXPECT_TRUE(transform_clips_content(img, d));
}

TEST(Transform, FillUsesModalIntensity) {
  // Light background, dark box: rotated corners must be filled with the light value.
  const auto img = testing_support::box_image(16, 16, 2, 2, 13, 13, 230, 10);
  EXPECT_EQ(modal_intensity(img), 10);
  const auto paper = testing_support::box_image(16, 16, 6, 6, 9, 9, 230, 10);
  EXPECT_EQ(modal_intensity(paper), 230);
  TransformDraw d;
  d.dx = 5;
  const auto out = apply_transform(paper, d);
  for (std::uint32_t y = 0; y < 16; ++y)
    for (std::uint32_t x = 0; x < 5; ++x) EXPECT_EQ(out.at(x, y), 230);
}

TEST(Transform, QuarterTurnPermutesPixels) {
  Rng rng(2);
  const auto img = testing_support::random_image(9, 9, rng);
  TransformDraw d;
  d.angle_deg = 90;
  const auto out = apply_transform(img, d);
  // Bilinear weights collapse to a single tap up to cos(90deg) rounding.
  std::size_t same = 0;
  for (std::uint32_t y = 0; y < 9; ++y)
    for (std::uint32_t x = 0; x < 9; ++x) same += out.at(x, y) == img.at(y, 8 - x) || out.at(x, y) == img.at(8 - y, x);
  EXPECT_EQ(same, 81u);
}

TEST(Transform, DrawsAreReproduciblePerItem) {
  TransformSpec spec;
  spec.rotation_deg = 90;
  spec.translate_px = 9;
  spec.scale_lo = 0.2;
  spec.scale_hi = 1;
  spec.rng_seed = 77;
  Rng rng(4);
  const auto img = testing_support::random_image(28, 28, rng);
  for (std::size_t item : {0u, 1u, 999u}) {
    const auto a = draw_transform(spec, item), b = draw_transform(spec, item);
    EXPECT_EQ(a.angle_deg, b.angle_deg);
    EXPECT_EQ(a.dx, b.dx);
    EXPECT_EQ(apply_transform(img, a), apply_transform(img, b));
  }
  for (std::size_t item = 0; item < 500; ++item) {
    const auto d = draw_transform(spec, item);
    EXPECT_LE(std::abs(d.angle_deg), 90.0);
    EXPECT_LE(std::abs(d.dx), 9);
    EXPECT_LE(std::abs(d.dy), 9);
    EXPECT_GT(d.scale, 0.2);
    EXPECT_LE(d.scale, 1.0);
  }
}

TEST(Transform, InvalidSpecRejected) {
  TransformSpec spec;
  spec.scale_lo = 0;
  expect_code(ErrorCode::InvalidArgument, [&] { spec.validate(); });
  spec.scale_lo = 0.5;
  spec.scale_hi = 0.4;
  expect_code(ErrorCode::InvalidArgument, [&] { spec.validate(); });
  spec = {};
  spec.translate_px = -1;
  expect_code(ErrorCode::InvalidArgument, [&] { spec.validate(); });
}
