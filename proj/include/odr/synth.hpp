#pragma once

#include <cstdint>
#include <filesystem>

#include "odr/data.hpp"
#include "odr/rng.hpp"

namespace odr {

// Parameters of the synthetic gait-energy-image generator.
struct SynthSpec {
  std::uint64_t seed = 7;
  std::size_t n_samples = 2000;
  Index height = 128;
  Index width = 88;
  double age_min = 2;
  double age_max = 90;
  double noise = 0.1;  // std-dev of additive pixel noise, in [0,1] intensity units
  bool gender_effect = false;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

// Silhouette geometry in pixels. Every field is a strictly monotone function
// of age; gender only scales the widths.
struct SilhouetteGeometry {
  double top = 0, bottom = 0;  // vertical extent of the figure
  double head_ratio = 0;       // head height / figure height (shrinks with age)
  double lean_deg = 0;         // forward torso lean (grows with age)
  double stride = 0;           // horizontal distance between the feet (shrinks with age)
  double width_scale = 0;      // silhouette width multiplier (grows with age)
};

SilhouetteGeometry silhouette_geometry(double age, int gender, const SynthSpec& spec);

// Anti-aliased render (8x8 supersampling) plus optional Gaussian pixel noise.
GrayImage render_silhouette(const SilhouetteGeometry& geometry, Index height, Index width, double noise,
                            Engine& noise_engine);

// Writes images/NNNNN.pgm and manifest.csv (path,age,gender) under out_dir.
SampleManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace odr
