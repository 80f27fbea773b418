#include "cmudrn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <stdexcept>

#include "cmudrn/errors.hpp"
#include "random.hpp"

namespace cmudrn::data {

namespace fs = std::filesystem;
using detail::uniform;
using detail::uniform01;

std::string_view to_string(Weather w) { return w == Weather::kRain ? "rain" : "snow"; }

Weather parse_weather(std::string_view s) {
  if (s == "rain") return Weather::kRain;
  if (s == "snow") return Weather::kSnow;
  throw std::invalid_argument("unknown weather label '" + std::string(s) + "' (expected rain or snow)");
}

// ---------------------------------------------------------------------------
// Degradation

void DegradeSpec::validate() const {
  if (!(density >= 0.0)) throw std::invalid_argument("DegradeSpec: density must be >= 0");
  if (!(intensity > 0.0 && intensity <= 1.0)) throw std::invalid_argument("DegradeSpec: intensity must be in (0, 1]");
  if (!(streak_length_min >= 0.0 && streak_length_min <= streak_length_max))
    throw std::invalid_argument("DegradeSpec: bad streak length range");
  if (!(streak_angle_min_deg <= streak_angle_max_deg)) throw std::invalid_argument("DegradeSpec: bad angle range");
  if (!(flake_radius_min > 0.0 && flake_radius_min <= flake_radius_max))
    throw std::invalid_argument("DegradeSpec: bad flake radius range");
}

DegradeSpec DegradeSpec::rain(std::uint64_t seed) {
  DegradeSpec s;
  s.kind = Weather::kRain;
  s.seed = seed;
  return s;
}

DegradeSpec DegradeSpec::snow(std::uint64_t seed) {
  DegradeSpec s;
  s.kind = Weather::kSnow;
  s.density = 4.0;
  s.intensity = 0.7;
  s.seed = seed;
  return s;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

std::size_t clamp_index(double v, std::size_t limit) {
  if (v <= 0.0) return 0;
  const auto i = static_cast<std::size_t>(v);
  return std::min(i, limit);
}

// Adds a one-pixel-wide anti-aliased segment with triangular falloff.
void add_streak(std::vector<double>& layer, std::size_t h, std::size_t w, double cx, double cy, double length,
                double angle, double alpha) {
  const double dx = std::sin(angle) * 0.5 * length;
  const double dy = std::cos(angle) * 0.5 * length;
  const double x0 = cx - dx, y0 = cy - dy, x1 = cx + dx, y1 = cy + dy;
  const double seg_x = x1 - x0, seg_y = y1 - y0;
  const double seg_len2 = seg_x * seg_x + seg_y * seg_y;
  const std::size_t bx0 = clamp_index(std::min(x0, x1) - 1.0, w), bx1 = clamp_index(std::max(x0, x1) + 2.0, w);
  const std::size_t by0 = clamp_index(std::min(y0, y1) - 1.0, h), by1 = clamp_index(std::max(y0, y1) + 2.0, h);
  for (std::size_t y = by0; y < by1; ++y) {
    for (std::size_t x = bx0; x < bx1; ++x) {
      const double px = static_cast<double>(x) + 0.5 - x0;
      const double py = static_cast<double>(y) + 0.5 - y0;
      double t = seg_len2 > 0.0 ? (px * seg_x + py * seg_y) / seg_len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = px - t * seg_x, ey = py - t * seg_y;
      const double weight = 1.0 - std::sqrt(ex * ex + ey * ey);
      if (weight > 0.0) layer[y * w + x] += alpha * weight;
    }
  }
}

void add_flake(std::vector<double>& layer, std::size_t h, std::size_t w, double cx, double cy, double radius,
               double alpha) {
  const std::size_t bx0 = clamp_index(cx - radius - 1.0, w), bx1 = clamp_index(cx + radius + 2.0, w);
  const std::size_t by0 = clamp_index(cy - radius - 1.0, h), by1 = clamp_index(cy + radius + 2.0, h);
  const double r2 = radius * radius;
  for (std::size_t y = by0; y < by1; ++y) {
    for (std::size_t x = bx0; x < bx1; ++x) {
      const double ex = static_cast<double>(x) + 0.5 - cx;
      const double ey = static_cast<double>(y) + 0.5 - cy;
      const double weight = 1.0 - (ex * ex + ey * ey) / r2;
      if (weight > 0.0) layer[y * w + x] += alpha * weight;
    }
  }
}

}  // namespace

Image degrade(const Image& clean, const DegradeSpec& spec) {
  spec.validate();
  const std::size_t h = clean.height, w = clean.width;
  std::mt19937_64 rng(spec.seed);
  const auto particles =
      static_cast<std::size_t>(std::llround(spec.density * static_cast<double>(h * w) / 1000.0));
  std::vector<double> layer(h * w, 0.0);
  for (std::size_t k = 0; k < particles; ++k) {
    const double cx = uniform(rng, 0.0, static_cast<double>(w));
    const double cy = uniform(rng, 0.0, static_cast<double>(h));
    const double alpha = spec.intensity * uniform(rng, 0.6, 1.0);
    if (spec.kind == Weather::kRain) {
      const double length = uniform(rng, spec.streak_length_min, spec.streak_length_max);
      const double angle = uniform(rng, spec.streak_angle_min_deg, spec.streak_angle_max_deg) * kPi / 180.0;
      add_streak(layer, h, w, cx, cy, length, angle, alpha);
    } else {
      const double radius = uniform(rng, spec.flake_radius_min, spec.flake_radius_max);
      add_flake(layer, h, w, cx, cy, radius, alpha);
    }
  }
  Image out = clean;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) {
      double& v = out.pixels[c * h * w + i];
      v = std::clamp(v + layer[i], 0.0, 1.0);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Clean scenes

namespace {

constexpr int kSupersample = 4;

struct Shape2d {
  bool ellipse;
  double cx, cy, rx, ry;
  double color[3];
  double opacity;

  bool inside(double x, double y) const {
    const double ux = (x - cx) / rx;
    const double uy = (y - cy) / ry;
    if (ellipse) return ux * ux + uy * uy <= 1.0;
    return std::abs(ux) <= 1.0 && std::abs(uy) <= 1.0;
  }
};

Image render_scene(std::mt19937_64& rng, std::size_t size) {
  const double side = static_cast<double>(size);
  Image img(size, size);
  double c0[3], c1[3];
  for (double& v : c0) v = uniform01(rng);
  for (double& v : c1) v = uniform01(rng);
  double gx = uniform(rng, -1.0, 1.0), gy = uniform(rng, -1.0, 1.0);
  const double norm = std::sqrt(gx * gx + gy * gy);
  if (norm > 1e-6) {
    gx /= norm;
    gy /= norm;
  } else {
    gx = 1.0;
    gy = 0.0;
  }
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / side - 0.5;
      const double py = (static_cast<double>(y) + 0.5) / side - 0.5;
      const double t = std::clamp(0.5 + px * gx + py * gy, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = c0[c] + (c1[c] - c0[c]) * t;
    }
  }

  const auto shapes = 3 + static_cast<int>(rng() % 6);
  for (int s = 0; s < shapes; ++s) {
    Shape2d sh{};
    sh.ellipse = (rng() & 1U) != 0;
    sh.cx = uniform(rng, 0.0, side);
    sh.cy = uniform(rng, 0.0, side);
    sh.rx = uniform(rng, side / 16.0, side / 4.0);
    sh.ry = uniform(rng, side / 16.0, side / 4.0);
    for (double& v : sh.color) v = uniform01(rng);
    sh.opacity = uniform(rng, 0.5, 1.0);

    const std::size_t x0 = clamp_index(sh.cx - sh.rx - 1.0, size), x1 = clamp_index(sh.cx + sh.rx + 2.0, size);
    const std::size_t y0 = clamp_index(sh.cy - sh.ry - 1.0, size), y1 = clamp_index(sh.cy + sh.ry + 2.0, size);
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSupersample; ++sy)
          for (int sx = 0; sx < kSupersample; ++sx) {
            const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample;
            const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample;
            hits += sh.inside(px, py) ? 1 : 0;
          }
        if (hits == 0) continue;
        const double a = sh.opacity * hits / static_cast<double>(kSupersample * kSupersample);
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = img.at(c, y, x);
          v = v * (1.0 - a) + sh.color[c] * a;
        }
      }
    }
  }
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace

std::vector<Image> gen_clean(std::uint64_t seed, std::size_t count, std::size_t size) {
  if (size < 32) throw std::invalid_argument("gen_clean: image size must be >= 32");
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(detail::mix_seed(seed, i));
    out.push_back(render_scene(rng, size));
  }
  return out;
}

std::vector<WeatherTuple> make_tuples(const std::vector<Image>& clean, std::uint64_t seed) {
  std::vector<WeatherTuple> out;
  out.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto rain_spec = DegradeSpec::rain(detail::mix_seed(seed ^ 0x5241494EULL, i));
    const auto snow_spec = DegradeSpec::snow(detail::mix_seed(seed ^ 0x534E4F57ULL, i));
    out.push_back({{degrade(clean[i], rain_spec), clean[i], Weather::kRain, i},
                   {degrade(clean[i], snow_spec), clean[i], Weather::kSnow, i}});
  }
  return out;
}

std::size_t split_point(std::size_t count, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split: train fraction must lie strictly between 0 and 1");
  const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(count) * train_fraction));
  if (cut == 0 || cut >= count)
    throw std::invalid_argument("split: " + std::to_string(count) + " items at fraction " +
                                std::to_string(train_fraction) + " leaves an empty side");
  return cut;
}

// ---------------------------------------------------------------------------
// PPM

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.pixels.size());
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(quantize(image.at(c, y, x)));
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char ch = static_cast<char>(bytes_[pos_]);
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    last_start = start;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1U << 24)) throw ParseError(std::string("PPM ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("PPM header: expected ") + what, start);
    return value;
  }

  std::size_t pos_ = 0;
  std::size_t last_start = 0;  // offset of the most recent number token

 private:
  std::span<const std::uint8_t> bytes_;
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ParseError("not a binary PPM (missing P6)", 0);
  HeaderReader reader(bytes);
  reader.pos_ = 2;
  const std::size_t width = reader.number("width");
  const std::size_t height = reader.number("height");
  const std::size_t maxval = reader.number("maxval");
  const std::size_t maxval_at = reader.last_start;
  if (maxval != 255) throw ParseError("PPM maxval must be 255, got " + std::to_string(maxval), maxval_at);
  if (width == 0 || height == 0) throw ParseError("PPM image has zero size", maxval_at);
  if (reader.pos_ >= bytes.size()) throw ParseError("PPM header not terminated", reader.pos_);
  const char sep = static_cast<char>(bytes[reader.pos_]);
  if (sep != ' ' && sep != '\t' && sep != '\n' && sep != '\r')
    throw ParseError("PPM header must end with a single whitespace byte", reader.pos_);
  const std::size_t payload = reader.pos_ + 1;
  const std::size_t needed = 3 * width * height;
  if (bytes.size() - payload < needed)
    throw ParseError("PPM payload truncated: expected " + std::to_string(needed) + " bytes, found " +
                         std::to_string(bytes.size() - payload),
                     bytes.size());

  Image img(height, width);
  std::size_t k = payload;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = bytes[k++] / 255.0;
  return img;
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

void write_image(const fs::path& path, const Image& image) { write_bytes(path, encode_ppm(image)); }

Image read_image(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return decode_ppm(bytes);
}

// ---------------------------------------------------------------------------
// Manifest and dataset directories

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += std::to_string(e.id);
    out += '\t';
    out += to_string(e.label);
    out += '\t';
    out += e.degraded_path;
    out += '\t';
    out += e.clean_path;
    out += '\n';
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    const std::size_t line_start = pos;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::string_view fields[4];
    std::size_t field_start = 0;
    for (int f = 0; f < 4; ++f) {
      const std::size_t tab = f < 3 ? line.find('\t', field_start) : line.size();
      if (tab == std::string_view::npos)
        throw ParseError("manifest line needs 4 tab-separated fields", line_start + field_start);
      fields[f] = line.substr(field_start, tab - field_start);
      field_start = tab + 1;
    }
    if (fields[3].find('\t') != std::string_view::npos)
      throw ParseError("manifest line has more than 4 fields", line_start);

    ManifestEntry e;
    const auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), e.id);
    if (ec != std::errc() || ptr != fields[0].data() + fields[0].size())
      throw ParseError("manifest id is not an integer", line_start);
    try {
      e.label = parse_weather(fields[1]);
    } catch (const std::invalid_argument&) {
      throw ParseError("manifest label must be rain or snow", line_start + fields[0].size() + 1);
    }
    e.degraded_path = std::string(fields[2]);
    e.clean_path = std::string(fields[3]);
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

std::string image_name(std::uint64_t id, std::string_view kind) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(id));
  return "images/" + std::string(buf) + "_" + std::string(kind) + ".ppm";
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<WeatherTuple>& tuples) {
  fs::create_directories(dir / "images");
  std::vector<ManifestEntry> entries;
  for (const auto& t : tuples) {
    const std::string clean = image_name(t.rain.id, "clean");
    write_image(dir / clean, t.rain.clean);
    for (const ImagePair* p : {&t.rain, &t.snow}) {
      const std::string degraded = image_name(p->id, to_string(p->label));
      write_image(dir / degraded, p->degraded);
      entries.push_back({p->id, p->label, degraded, clean});
    }
  }
  const std::string text = format_manifest(entries);
  write_bytes(dir / kManifestName, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<WeatherTuple> read_dataset(const fs::path& dir) {
  const auto bytes = read_bytes(dir / kManifestName);
  const auto entries = parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  std::map<std::uint64_t, std::pair<std::optional<ImagePair>, std::optional<ImagePair>>> grouped;
  for (const auto& e : entries) {
    ImagePair pair{read_image(dir / e.degraded_path), read_image(dir / e.clean_path), e.label, e.id};
    if (pair.degraded.height != pair.clean.height || pair.degraded.width != pair.clean.width)
      throw ParseError("degraded/clean size mismatch for id " + std::to_string(e.id), 0);
    auto& slot = grouped[e.id];
    (e.label == Weather::kRain ? slot.first : slot.second) = std::move(pair);
  }
  std::vector<WeatherTuple> out;
  for (auto& [id, slot] : grouped) {
    if (!slot.first || !slot.second)
      throw ParseError("dataset id " + std::to_string(id) + " lacks a " + (slot.first ? "snow" : "rain") + " pair", 0);
    out.push_back({std::move(*slot.first), std::move(*slot.second)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor conversion

Tensor to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const std::size_t h = images[0]->height, w = images[0]->width;
  std::vector<double> values;
  values.reserve(images.size() * 3 * h * w);
  for (const Image* img : images) {
    if (img->height != h) throw ShapeError("to_tensor", "h", h, img->height);
    if (img->width != w) throw ShapeError("to_tensor", "w", w, img->width);
    values.insert(values.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor::from_values({images.size(), 3, h, w}, std::move(values));
}

Tensor to_tensor(const Image& image) {
  const Image* p = &image;
  return to_tensor(std::span<const Image* const>(&p, 1));
}

Image image_from(const Tensor& t, std::size_t index) {
  const Shape& s = t.shape();
  if (s.c != 3) throw ShapeError("image_from", "c", 3, s.c);
  if (index >= s.n) throw ShapeError("image_from", "n (index)", s.n, index);
  Image img(s.h, s.w);
  const auto v = t.values();
  std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(index * 3 * s.plane()), 3 * s.plane(), img.pixels.begin());
  return img;
}

}  // namespace cmudrn::data
