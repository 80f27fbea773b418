#pragma once

// Synthetic degraded-image datasets: procedurally generated clean scenes,
// additive rain-streak and snow-flake degradations, PPM (P6) I/O, and a
// tab-separated manifest.
//
// Everything here is seeded and uses its own integer-to-real conversion so
// that a (seed, spec) pair always produces the same bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmudrn/tensor.hpp"

namespace cmudrn::data {

/// Planar RGB image, values nominally in [0, 1], stored (c, h, w).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // 3 * height * width

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(3 * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  Shape shape() const { return {1, 3, height, width}; }
  friend bool operator==(const Image&, const Image&) = default;
};

enum class Weather { kRain, kSnow };

std::string_view to_string(Weather w);
/// Accepts "rain" or "snow"; throws std::invalid_argument otherwise.
Weather parse_weather(std::string_view s);

struct ImagePair {
  Image degraded;
  Image clean;
  Weather label = Weather::kRain;
  std::uint64_t id = 0;
};

/// The rain and snow renditions of one clean image.
struct WeatherTuple {
  ImagePair rain;
  ImagePair snow;
};

struct DegradeSpec {
  Weather kind = Weather::kRain;
  double density = 2.0;  // particles per 1000 pixels
  double streak_length_min = 6.0;
  double streak_length_max = 16.0;
  double streak_angle_min_deg = -20.0;  // from vertical
  double streak_angle_max_deg = 20.0;
  double flake_radius_min = 0.8;
  double flake_radius_max = 2.5;
  double intensity = 0.6;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless density >= 0, intensity in (0, 1]
  /// and every range is ordered and non-negative.
  void validate() const;
  static DegradeSpec rain(std::uint64_t seed);
  static DegradeSpec snow(std::uint64_t seed);
};

/// `count` procedural scenes of side `size` (>= 32): a two-colour linear
/// gradient with random anti-aliased rectangles and ellipses.
std::vector<Image> gen_clean(std::uint64_t seed, std::size_t count, std::size_t size);

/// Adds bright rain streaks (oriented segments) or snow flakes (soft discs)
/// and clamps to [0, 1]. Never darkens a pixel.
Image degrade(const Image& clean, const DegradeSpec& spec);

/// Builds rain + snow pairs for each clean image; ids are the clean indices.
std::vector<WeatherTuple> make_tuples(const std::vector<Image>& clean, std::uint64_t seed);

/// Contiguous prefix split: the first round(n * train_fraction) items train.
template <class T>
struct Split {
  std::vector<T> train;
  std::vector<T> test;
};

std::size_t split_point(std::size_t count, double train_fraction);

template <class T>
Split<T> split(const std::vector<T>& items, double train_fraction) {
  const std::size_t cut = split_point(items.size(), train_fraction);
  return {std::vector<T>(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<T>(items.begin() + static_cast<std::ptrdiff_t>(cut), items.end())};
}

// PPM (P6, maxval 255). Values map to bytes by floor(v * 255 + 0.5) after
// clamping to [0, 1]; bytes map back by b / 255.

std::uint8_t quantize(double v);
std::vector<std::uint8_t> encode_ppm(const Image& image);
/// Throws ParseError with the byte offset of the first malformed token or of
/// the truncated payload.
Image decode_ppm(std::span<const std::uint8_t> bytes);
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

/// Manifest: one `id<TAB>label<TAB>degraded_path<TAB>clean_path` line per
/// pair; paths are relative to the manifest directory.
inline constexpr const char* kManifestName = "manifest.tsv";

struct ManifestEntry {
  std::uint64_t id = 0;
  Weather label = Weather::kRain;
  std::string degraded_path;
  std::string clean_path;
};

std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(std::string_view text);

/// Writes images and manifest for `tuples` under `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<WeatherTuple>& tuples);
/// Reads a dataset directory back into tuples ordered by id. Throws
/// ParseError when an id lacks its rain or snow pair.
std::vector<WeatherTuple> read_dataset(const std::filesystem::path& dir);

/// Stacks images into an (n, 3, h, w) tensor (all images must share a size).
Tensor to_tensor(std::span<const Image* const> images);
Tensor to_tensor(const Image& image);
Image image_from(const Tensor& t, std::size_t index = 0);

}  // namespace cmudrn::data
