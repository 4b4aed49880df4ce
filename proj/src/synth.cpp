#include "ovadet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "ovadet/errors.hpp"
#include "ovadet/random.hpp"

namespace ovadet {

namespace {

enum class Texture { kPlain, kStripesAcross, kStripesAlong, kSpots, kRings, kChecker, kEmbryo, kPolarPlugs, kRadial };

struct EggStyle {
  std::array<double, 3> fill;
  std::array<double, 3> shell;
  double shell_frac;    // shell thickness as a fraction of the normalized radius
  Texture texture;
  double aspect_lo, aspect_hi;  // major / minor axis
  double size_lo, size_hi;      // major axis length as a fraction of the image side
};

// Indexed by CategoryId. Each species gets its own colour, outline and interior pattern.
constexpr std::array<EggStyle, kNumClasses> kStyles = {{
    {{176, 124, 52}, {110, 70, 30}, 0.22, Texture::kSpots, 1.20, 1.40, 0.28, 0.36},
    {{150, 150, 90}, {90, 90, 50}, 0.12, Texture::kStripesAcross, 1.60, 1.90, 0.24, 0.30},
    {{232, 236, 200}, {110, 120, 90}, 0.10, Texture::kEmbryo, 1.80, 2.20, 0.26, 0.32},
    {{205, 165, 60}, {150, 110, 40}, 0.06, Texture::kPlain, 1.50, 1.70, 0.38, 0.44},
    {{200, 212, 228}, {70, 80, 110}, 0.06, Texture::kChecker, 1.50, 1.70, 0.28, 0.34},
    {{170, 150, 120}, {100, 80, 60}, 0.18, Texture::kEmbryo, 1.00, 1.10, 0.30, 0.36},
    {{185, 205, 165}, {70, 95, 70}, 0.06, Texture::kRings, 1.10, 1.20, 0.22, 0.28},
    {{145, 105, 58}, {80, 55, 25}, 0.10, Texture::kPlain, 1.60, 1.90, 0.16, 0.20},
    {{190, 125, 40}, {120, 75, 20}, 0.12, Texture::kStripesAlong, 1.60, 1.80, 0.36, 0.42},
    {{118, 88, 55}, {60, 40, 20}, 0.28, Texture::kRadial, 1.00, 1.05, 0.24, 0.30},
    {{160, 98, 60}, {100, 60, 30}, 0.10, Texture::kPolarPlugs, 2.00, 2.30, 0.28, 0.34},
}};

constexpr std::array<double, 3> kBackground = {214, 206, 188};

// Interior shade multiplier at ellipse-normalized coordinates (u along the major axis).
double texture_shade(Texture t, double u, double v, double r) {
  constexpr double pi = std::numbers::pi;
  switch (t) {
    case Texture::kPlain:
      return 1.0;
    case Texture::kStripesAcross:
      return std::sin(u * 5.0 * pi) > 0.0 ? 1.0 : 0.72;
    case Texture::kStripesAlong:
      return std::sin(v * 4.0 * pi) > 0.0 ? 1.0 : 0.75;
    case Texture::kSpots: {
      const double su = u * 3.0 - std::floor(u * 3.0) - 0.5;
      const double sv = v * 3.0 - std::floor(v * 3.0) - 0.5;
      return su * su + sv * sv < 0.09 ? 0.65 : 1.0;
    }
    case Texture::kRings:
      return std::sin(r * 4.0 * pi) > 0.0 ? 1.0 : 0.8;
    case Texture::kChecker:
      return ((static_cast<int>(std::floor(u * 2.5)) + static_cast<int>(std::floor(v * 2.5))) & 1) ? 0.7 : 1.0;
    case Texture::kEmbryo:
      return r < 0.45 ? 0.6 : 1.0;
    case Texture::kPolarPlugs:
      return (std::abs(u) > 0.82 && std::abs(v) < 0.45) ? 1.45 : 1.0;
    case Texture::kRadial:
      return std::sin(std::atan2(v, u) * 14.0) > 0.0 ? 1.0 : 0.78;
  }
  return 1.0;
}

AnnotatedImage render(const SynthConfig& config, int index, Rng& rng) {
  const CategoryId category(index % kNumClasses);
  const EggStyle& style = kStyles[static_cast<std::size_t>(category.value())];
  const int side = config.image_size;

  const double major = rng.uniform(style.size_lo, style.size_hi) * side;
  const double aspect = rng.uniform(style.aspect_lo, style.aspect_hi);
  const double a = major / 2.0;
  const double b = a / aspect;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double half_w = std::sqrt(a * a * ct * ct + b * b * st * st);
  const double half_h = std::sqrt(a * a * st * st + b * b * ct * ct);
  const double cx = rng.uniform(half_w + 1.0, side - half_w - 1.0);
  const double cy = rng.uniform(half_h + 1.0, side - half_h - 1.0);

  std::array<double, 3> fill{};
  std::array<double, 3> shell{};
  for (int c = 0; c < 3; ++c) {
    const double jitter = rng.uniform(-8.0, 8.0);
    fill[c] = style.fill[c] + jitter;
    shell[c] = style.shell[c] + jitter;
  }

  cv::Mat pixels(side, side, CV_8UC3);
  for (int y = 0; y < side; ++y) {
    auto* row = pixels.ptr<cv::Vec3b>(y);
    for (int x = 0; x < side; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double u = (dx * ct + dy * st) / a;
      const double v = (-dx * st + dy * ct) / b;
      const double r = std::sqrt(u * u + v * v);
      std::array<double, 3> base = kBackground;
      if (r <= 1.0) {
        if (r > 1.0 - style.shell_frac) {
          base = shell;
        } else {
          const double shade = texture_shade(style.texture, u, v, r);
          for (int c = 0; c < 3; ++c) base[c] = fill[c] * shade;
        }
      }
      for (int c = 0; c < 3; ++c) {
        const double value = base[c] + (config.noise_sigma > 0.0 ? config.noise_sigma * rng.normal() : 0.0);
        row[x][c] = static_cast<unsigned char>(std::lround(std::clamp(value, 0.0, 255.0)));
      }
    }
  }

  char id[32];
  std::snprintf(id, sizeof id, "synth_%05d", index);
  return {id, pixels, {{{cx - half_w, cy - half_h, cx + half_w, cy + half_h}, category}}};
}

}  // namespace

void SynthConfig::validate() const {
  if (image_size < 32) throw ConfigError("synth image_size must be >= 32");
  if (per_class_count < 0) throw ConfigError("synth per_class_count must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("synth noise_sigma must be >= 0");
}

SynthConfig parse_synth_config(std::string_view text) {
  SynthConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find_first_of("=:");
    if (eq == std::string::npos) {
      throw ConfigError("synth config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "image_size") {
        cfg.image_size = std::stoi(value);
      } else if (key == "per_class_count") {
        cfg.per_class_count = std::stoi(value);
      } else if (key == "noise_sigma") {
        cfg.noise_sigma = std::stod(value);
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else {
        throw ConfigError("synth config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("synth config line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

SynthConfig read_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synth config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_synth_config(buf.str());
}

std::vector<AnnotatedImage> synth_generate(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int total = config.per_class_count * kNumClasses;
  std::vector<AnnotatedImage> out;
  out.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) out.push_back(render(config, i, rng));
  return out;
}

}  // namespace ovadet
