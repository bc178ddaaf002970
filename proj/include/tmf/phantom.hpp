#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tmf/vec3.hpp"

namespace tmf {

// Voxel (i, j, k) sits at origin + (i, j, k) * spacing. Axes: x left-right,
// y anterior-posterior (the projection axis), z superior-inferior.
struct Grid {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) +
                                                static_cast<std::size_t>(dims[1]) * k);
  }
  Vec3 world(int i, int j, int k) const {
    return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
  }
  bool operator==(const Grid&) const = default;

  // Grid of the given size centred on the world origin.
  static Grid centered(std::array<int, 3> dims, Vec3 spacing);
};

// Linear attenuation coefficients in mm^-1.
struct AttenuationVolume {
  Grid grid;
  std::vector<float> values;

  AttenuationVolume() = default;
  AttenuationVolume(Grid g, float fill = 0.0f);

  float at(int i, int j, int k) const { return values[grid.index(i, j, k)]; }
  float& at(int i, int j, int k) { return values[grid.index(i, j, k)]; }
  bool operator==(const AttenuationVolume&) const = default;

  // Throws Parameter on non-positive spacing, empty dims or negative values.
  void validate() const;
};

// Trilinear interpolation at fractional voxel coordinates; voxels outside the
// grid contribute zero.
double sample_trilinear(const AttenuationVolume& volume, double fi, double fj, double fk);

struct BreathingParams {
  double amplitude_mm = 10.0;
  double period_s = 4.0;
  int shape_exponent = 2;
  double phase_rad = 0.0;
  double amplitude_jitter_sd = 0.0;
  double period_jitter_sd = 0.0;
  double drift_mm_per_min = 0.0;

  void validate() const;
  bool operator==(const BreathingParams&) const = default;
};

struct BreathingSignal {
  std::vector<double> samples;  // mm
  double rate_hz = 5.0;

  std::size_t length() const { return samples.size(); }
  double time_of(std::size_t index) const { return static_cast<double>(index) / rate_hz; }
};

// s(t) = b(t) - A_c cos^{2n}(theta(t)), theta advancing at pi / tau_c. Cycle
// boundaries sit where cos(theta) = 0, so jittered cycles join continuously.
// Draws happen cycle by cycle, so a longer signal extends a shorter one with
// the same seed.
BreathingSignal sample_breathing(const BreathingParams& params, std::size_t n_points,
                                 double rate_hz, std::uint64_t seed);

struct PhantomSpec {
  std::array<int, 3> dims{128, 128, 128};
  Vec3 spacing_mm{2.0, 2.0, 2.0};

  // Thorax: elliptic cylinder along z.
  std::array<double, 2> body_semi_axes_mm{120.0, 90.0};
  double lung_offset_x_mm = 55.0;
  Vec3 lung_center_mm{0.0, 0.0, 10.0};  // x is ignored; lungs at +-lung_offset_x_mm
  Vec3 lung_semi_axes_mm{40.0, 60.0, 90.0};
  double lung_size_jitter = 0.03;  // relative, drawn per lung from the seed

  Vec3 tumor_center_mm{-55.0, 0.0, -10.0};
  Vec3 tumor_semi_axes_mm{12.0, 12.0, 12.0};

  double rib_period_mm = 24.0;
  double rib_thickness_mm = 8.0;
  double shell_thickness_mm = 12.0;
  double spine_radius_mm = 15.0;

  double mu_body = 0.02;
  double mu_lung = 0.002;
  double mu_tumor = 0.018;
  double mu_bone = 0.048;

  Vec3 motion_direction{0.0, 0.316, 0.949};
  bool uniform_motion = false;
  double taper_margin_mm = 10.0;   // w = 1 up to this far above the tumour top
  double taper_length_mm = 60.0;   // cosine decay length toward the apex
  double apex_weight = 0.2;

  BreathingParams breathing;

  bool operator==(const PhantomSpec&) const = default;
};

struct PatientPhantom {
  std::string patient_id;
  PhantomSpec spec;
  std::uint64_t seed = 0;

  AttenuationVolume reference;
  std::vector<std::uint8_t> gtv_mask;
  Vec3 motion_direction{0.0, 0.0, 1.0};
  std::vector<float> motion_weight;  // per voxel in [0, 1]
  BreathingParams breathing;
  Vec3 amplitudes{0.0, 0.0, 0.0};

  Vec3 p_ref{0.0, 0.0, 0.0};     // GTV centre of mass at zero displacement
  double gtv_mean_weight = 1.0;  // mean motion weight over the GTV
  std::size_t gtv_voxels = 0;

  bool operator==(const PatientPhantom&) const = default;
};

PatientPhantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed,
                                std::string patient_id = "P0");

// Displacement field D(r) = displacement * w(r) * u, followed by a rigid
// translation `shift`. Realised by inverse-warp trilinear resampling:
// out(r) = ref(r - shift - displacement * w(r) * u).
AttenuationVolume warp_volume(const AttenuationVolume& reference, const std::vector<float>& weight,
                              const Vec3& direction, double displacement_mm,
                              const Vec3& shift_mm = {0.0, 0.0, 0.0});

AttenuationVolume deform(const PatientPhantom& phantom, double displacement_mm);

Vec3 tumor_center(const PatientPhantom& phantom, double displacement_mm,
                  const Vec3& shift_mm = {0.0, 0.0, 0.0});

// FNV-1a over the canonical JSON form of a PhantomSpec.
std::uint64_t spec_hash(const PhantomSpec& spec);

}  // namespace tmf
