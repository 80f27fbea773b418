#include <gtest/gtest.h>

#include <random>
#include <set>
#include <string>

#include "cmudrn/data.hpp"
#include "cmudrn/errors.hpp"
#include "support.hpp"

using namespace cmudrn;
using namespace cmudrn::data;
using cmudrn::testing::TempDir;

namespace {

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(GenClean, DeterministicDistinctAndInRange) {
  const auto a = gen_clean(7, 10, 32);
  const auto b = gen_clean(7, 10, 32);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(encode_ppm(a[i]), encode_ppm(b[i]));
    for (double v : a[i].pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (std::size_t j = 0; j < i; ++j) EXPECT_NE(a[i], a[j]) << i << " vs " << j;
  }
  EXPECT_NE(gen_clean(8, 1, 32)[0], a[0]);
  EXPECT_THROW(gen_clean(1, 1, 31), std::invalid_argument);
}

TEST(GenClean, BroadIntensityCoverage) {
  double lo = 1.0, hi = 0.0;
  for (const auto& img : gen_clean(3, 20, 64))
    for (double v : img.pixels) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  EXPECT_LT(lo, 0.15);
  EXPECT_GT(hi, 0.85);
}

TEST(Degrade, ZeroDensityIsNoOp) {
  const auto clean = gen_clean(1, 1, 48)[0];
  for (auto spec : {DegradeSpec::rain(3), DegradeSpec::snow(3)}) {
    spec.density = 0.0;
    EXPECT_EQ(degrade(clean, spec), clean);
  }
}

TEST(Degrade, NeverDarkensAndIsDeterministic) {
  const auto clean = gen_clean(2, 3, 48);
  for (const auto& img : clean) {
    for (auto spec : {DegradeSpec::rain(5), DegradeSpec::snow(5)}) {
      const Image out = degrade(img, spec);
      EXPECT_EQ(out, degrade(img, spec));
      for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        EXPECT_GE(out.pixels[i], img.pixels[i]);
        EXPECT_LE(out.pixels[i], 1.0);
      }
    }
  }
}

TEST(Degrade, AddsBrightnessOnAverage) {
  // Mid-grey base so clamping cannot hide the additive term.
  const Image grey(40, 40, 0.3);
  for (Weather kind : {Weather::kRain, Weather::kSnow}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      DegradeSpec spec = kind == Weather::kRain ? DegradeSpec::rain(seed) : DegradeSpec::snow(seed);
      spec.density = 1.0;
      spec.intensity = 0.5;
      const Image out = degrade(grey, spec);
      double diff = 0.0;
      for (std::size_t i = 0; i < out.pixels.size(); ++i) diff += out.pixels[i] - grey.pixels[i];
      EXPECT_GT(diff / static_cast<double>(out.pixels.size()), 0.0) << to_string(kind) << " seed " << seed;
    }
  }
}

TEST(Degrade, SpecValidation) {
  DegradeSpec s = DegradeSpec::rain(1);
  s.intensity = 0.0;
  EXPECT_THROW(degrade(Image(32, 32), s), std::invalid_argument);
  s = DegradeSpec::snow(1);
  s.density = -1.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = DegradeSpec::rain(1);
  s.streak_length_min = 20;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Tuples, LabelsAndIds) {
  const auto clean = gen_clean(4, 3, 32);
  const auto tuples = make_tuples(clean, 9);
  ASSERT_EQ(tuples.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(tuples[i].rain.label, Weather::kRain);
    EXPECT_EQ(tuples[i].snow.label, Weather::kSnow);
    EXPECT_EQ(tuples[i].rain.id, i);
    EXPECT_EQ(tuples[i].rain.clean, clean[i]);
    EXPECT_EQ(tuples[i].snow.clean, clean[i]);
    EXPECT_NE(tuples[i].rain.degraded, tuples[i].snow.degraded);
  }
}

TEST(Split, PrefixCounts) {
  EXPECT_EQ(split_point(8000, 0.7), 5600u);
  std::vector<int> items(10);
  for (int i = 0; i < 10; ++i) items[static_cast<std::size_t>(i)] = i;
  const auto s = split(items, 0.7);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.test.size(), 3u);
  std::vector<int> joined = s.train;
  joined.insert(joined.end(), s.test.begin(), s.test.end());
  EXPECT_EQ(joined, items);
  EXPECT_EQ(s.train.front(), 0);
  EXPECT_EQ(s.test.front(), 7);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_point(10, 0.0), std::invalid_argument);
  EXPECT_THROW(split_point(10, 1.0), std::invalid_argument);
  EXPECT_THROW(split_point(1, 0.7), std::invalid_argument);
  EXPECT_THROW(split_point(10, 0.01), std::invalid_argument);
}

TEST(Ppm, QuantizationRoundsHalfUp) {
  EXPECT_EQ(quantize(0.5), 128);
  EXPECT_EQ(quantize(0.0), 0);
  EXPECT_EQ(quantize(1.0), 255);
  EXPECT_EQ(quantize(-0.2), 0);
  EXPECT_EQ(quantize(1.7), 255);
}

TEST(Ppm, ZeroImageLayout) {
  const auto bytes = encode_ppm(Image(4, 4));
  const std::string header = "P6\n4 4\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 48);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())), header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0);
}

TEST(Ppm, InterleavesChannels) {
  Image img(1, 2);
  img.at(0, 0, 1) = 1.0;  // red of pixel (0, 1)
  img.at(2, 0, 0) = 1.0;  // blue of pixel (0, 0)
  const auto bytes = encode_ppm(img);
  const std::vector<std::uint8_t> payload(bytes.end() - 6, bytes.end());
  EXPECT_EQ(payload, (std::vector<std::uint8_t>{0, 0, 255, 255, 0, 0}));
}

TEST(Ppm, RoundTripBoundOverManyImages) {
  std::mt19937_64 rng(42);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Image img = random_image(1 + rng() % 9, 1 + rng() % 9, rng);
    const Image back = decode_ppm(encode_ppm(img));
    ASSERT_EQ(back.height, img.height);
    ASSERT_EQ(back.width, img.width);
    for (std::size_t k = 0; k < img.pixels.size(); ++k) worst = std::max(worst, std::abs(back.pixels[k] - img.pixels[k]));
  }
  EXPECT_LE(worst, 1.0 / 255.0);
}

TEST(Ppm, FileRoundTrip) {
  TempDir dir("ppm");
  std::mt19937_64 rng(1);
  const Image img = random_image(7, 5, rng);
  write_image(dir / "a.ppm", img);
  const Image back = read_image(dir / "a.ppm");
  EXPECT_EQ(encode_ppm(back), encode_ppm(img));
  EXPECT_THROW(read_image(dir / "missing.ppm"), IoError);
}

TEST(Ppm, HeaderCommentsAccepted) {
  const Image img = decode_ppm(bytes_of(std::string("P6 # c\n2 1\n# another\n255\n") + std::string(6, '\x80')));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_DOUBLE_EQ(img.pixels[0], 128.0 / 255.0);
}

TEST(Ppm, MalformedInputReportsOffset) {
  const auto expect_offset = [](const std::string& text, std::size_t offset) {
    try {
      decode_ppm(bytes_of(text));
      ADD_FAILURE() << "no ParseError for " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.offset(), offset) << e.what();
    }
  };
  expect_offset("P5\n1 1\n255\n", 0);
  expect_offset("P6\nx 1\n255\n", 3);
  expect_offset("P6\n1 1\n65535\n", 7);
  // Truncation is reported where the data ran out.
  expect_offset("P6\n2 2\n255\n" + std::string(5, '\0'), 16);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n1 1")), ParseError);
}

TEST(Manifest, FormatParseRoundTrip) {
  const std::vector<ManifestEntry> entries{{0, Weather::kRain, "images/000000_rain.ppm", "images/000000_clean.ppm"},
                                           {0, Weather::kSnow, "images/000000_snow.ppm", "images/000000_clean.ppm"}};
  const auto text = format_manifest(entries);
  EXPECT_EQ(text.substr(0, text.find('\n')), "0\train\timages/000000_rain.ppm\timages/000000_clean.ppm");
  const auto back = parse_manifest(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].label, Weather::kSnow);
  EXPECT_EQ(back[1].degraded_path, entries[1].degraded_path);
  EXPECT_THROW(parse_manifest("0\tfog\ta\tb\n"), ParseError);
  EXPECT_THROW(parse_manifest("0\train\ta\n"), ParseError);
  EXPECT_THROW(parse_manifest("x\train\ta\tb\n"), ParseError);
}

TEST(Dataset, WriteReadRoundTrip) {
  TempDir dir("dataset");
  const auto tuples = make_tuples(gen_clean(11, 4, 32), 12);
  write_dataset(dir.path(), tuples);
  EXPECT_TRUE(std::filesystem::exists(dir / kManifestName));
  const auto back = read_dataset(dir.path());
  ASSERT_EQ(back.size(), tuples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].rain.id, tuples[i].rain.id);
    EXPECT_EQ(encode_ppm(back[i].rain.degraded), encode_ppm(tuples[i].rain.degraded));
    EXPECT_EQ(encode_ppm(back[i].snow.degraded), encode_ppm(tuples[i].snow.degraded));
    EXPECT_EQ(encode_ppm(back[i].snow.clean), encode_ppm(tuples[i].snow.clean));
  }
}

TEST(Dataset, ByteIdenticalAcrossRuns) {
  TempDir a("det_a"), b("det_b");
  write_dataset(a.path(), make_tuples(gen_clean(5, 3, 32), 6));
  write_dataset(b.path(), make_tuples(gen_clean(5, 3, 32), 6));
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    EXPECT_EQ(cmudrn::testing::read_file(entry.path()), cmudrn::testing::read_file(b.path() / rel)) << rel;
  }
}

TEST(Dataset, MissingPairIsReported) {
  TempDir dir("broken");
  const auto tuples = make_tuples(gen_clean(1, 1, 32), 2);
  write_dataset(dir.path(), tuples);
  auto text = cmudrn::testing::read_file(dir / kManifestName);
  text = text.substr(0, text.find('\n') + 1);  // keep only the rain line
  cmudrn::testing::write_file(dir / kManifestName, text);
  EXPECT_THROW(read_dataset(dir.path()), ParseError);
}

TEST(Tensors, ImageConversions) {
  const auto imgs = gen_clean(3, 2, 32);
  const Image* ptrs[] = {&imgs[0], &imgs[1]};
  const Tensor t = to_tensor(ptrs);
  EXPECT_EQ(t.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(image_from(t, 1), imgs[1]);
  EXPECT_EQ(image_from(to_tensor(imgs[0])), imgs[0]);
  const Image other(16, 16);
  const Image* mixed[] = {&imgs[0], &other};
  EXPECT_THROW(to_tensor(mixed), ShapeError);
}

TEST(Weather, Names) {
  EXPECT_EQ(parse_weather("rain"), Weather::kRain);
  EXPECT_EQ(to_string(Weather::kSnow), "snow");
  EXPECT_THROW(parse_weather("haze"), std::invalid_argument);
}
