#include "odr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace odr {
namespace {

struct Point {
  double x, y;
};

// Segment with a round cap of radius r; the basic stroke of the figure.
struct Capsule {
  Point a, b;
  double radius;
  double intensity;

  bool contains(Point p) const {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
    return ex * ex + ey * ey <= radius * radius;
  }
};

struct Ellipse {
  Point center;
  double rx, ry;
  double intensity;

  bool contains(Point p) const {
    const double u = (p.x - center.x) / rx, v = (p.y - center.y) / ry;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

SilhouetteGeometry silhouette_geometry(double age, int gender, const SynthSpec& spec) {
  const double span = spec.age_max - spec.age_min;
  const double a = span > 0 ? std::clamp((age - spec.age_min) / span, 0.0, 1.0) : 0.0;
  SilhouetteGeometry g;
  g.top = 0.04 * static_cast<double>(spec.height);
  g.bottom = 0.97 * static_cast<double>(spec.height);
  const double figure = g.bottom - g.top;
  g.head_ratio = 0.26 - 0.10 * a;
  g.lean_deg = 3.0 + 15.0 * a;
  g.stride = (0.42 - 0.22 * a) * figure;
  g.width_scale = 1.0 + 0.35 * a;
  if (spec.gender_effect) g.width_scale *= gender == 1 ? 1.2 : 0.85;
  return g;
}

GrayImage render_silhouette(const SilhouetteGeometry& g, Index height, Index width, double noise,
                            Engine& noise_engine) {
  const double figure = g.bottom - g.top;
  const double cx = 0.5 * static_cast<double>(width);
  const double theta = g.lean_deg * std::numbers::pi / 180.0;
  const double head_h = g.head_ratio * figure;
  const double neck_y = g.top + head_h;
  const double hip_y = neck_y + 0.36 * figure;
  const double torso_r = 0.085 * figure * g.width_scale;
  const double leg_r = 0.045 * figure * std::sqrt(g.width_scale);
  const double torso_len = hip_y - neck_y;

  const Point hip{cx, hip_y};
  const Point shoulder{cx + std::sin(theta) * torso_len, hip_y - std::cos(theta) * torso_len};
  const double head_ry = 0.5 * head_h;
  const Ellipse head{{shoulder.x + std::sin(theta) * head_ry, neck_y - head_ry}, 0.8 * head_ry, head_ry, 1.0};
  const Capsule torso{hip, shoulder, torso_r, 1.0};
  const double foot_y = g.bottom - leg_r;
  const Capsule left_leg{{cx - 0.3 * torso_r, hip_y}, {cx - 0.5 * g.stride, foot_y}, leg_r, 0.75};
  const Capsule right_leg{{cx + 0.3 * torso_r, hip_y}, {cx + 0.5 * g.stride, foot_y}, leg_r, 0.75};

  constexpr int kSub = 8;
  GrayImage image;
  image.height = height;
  image.width = width;
  image.pixels.resize(static_cast<std::size_t>(height * width));
  for (Index row = 0; row < height; ++row) {
    for (Index col = 0; col < width; ++col) {
      double coverage = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const Point p{static_cast<double>(col) + (sx + 0.5) / kSub, static_cast<double>(row) + (sy + 0.5) / kSub};
          double v = 0;
          if (head.contains(p) || torso.contains(p)) {
            v = 1.0;
          } else if (left_leg.contains(p) || right_leg.contains(p)) {
            v = 0.75;
          }
          coverage += v;
        }
      }
      double value = coverage / (kSub * kSub);
      if (noise > 0) value += noise * standard_normal(noise_engine);
      value = std::clamp(value, 0.0, 1.0);
      image.pixels[static_cast<std::size_t>(row * width + col)] = static_cast<std::uint8_t>(std::lround(value * 255.0));
    }
  }
  return image;
}

SampleManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.n_samples < 1) throw ConfigError("synth: n_samples must be at least 1");
  if (spec.height < 8 || spec.width < 8) throw ConfigError("synth: image must be at least 8x8");
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0)) throw ConfigError("synth: noise must lie in [0,1]");
  const auto lo = static_cast<std::int64_t>(std::ceil(spec.age_min));
  const auto hi = static_cast<std::int64_t>(std::floor(spec.age_max));
  if (hi < lo) throw ConfigError("synth: empty age range");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IngestionError("synth: cannot create " + (out_dir / "images").string() + ": " + ec.message());

  SampleManifest manifest;
  manifest.base_dir = out_dir;
  manifest.has_gender = true;
  const int digits = std::max(5, static_cast<int>(std::to_string(spec.n_samples - 1).size()));
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    Engine latent(mix_seed(spec.seed, 0xA9E, i));
    const double age = static_cast<double>(lo + static_cast<std::int64_t>(uniform_index(latent, static_cast<std::uint64_t>(hi - lo + 1))));
    const int gender = static_cast<int>(uniform_index(latent, 2));
    Engine noise(mix_seed(spec.seed, 0x4015E, i));
    const GrayImage image =
        render_silhouette(silhouette_geometry(age, gender, spec), spec.height, spec.width, spec.noise, noise);

    char name[32];
    std::snprintf(name, sizeof(name), "images/%0*zu.pgm", digits, i);
    write_pgm(out_dir / name, image);
    manifest.records.push_back({name, age, gender});
  }
  const auto [mn, mx] = std::minmax_element(manifest.records.begin(), manifest.records.end(),
                                            [](const auto& a, const auto& b) { return a.age < b.age; });
  manifest.min_age = mn->age;
  manifest.max_age = mx->age;
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace odr
