#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tmf/phantom.hpp"

namespace tmf {

// Coronal detector image. Column a lies at u = origin_u + a * spacing_u (the
// volume x axis), row b at v = origin_v + b * spacing_v (the volume z axis).
struct DrrFrame {
  int width = 0;
  int height = 0;
  double spacing_u = 1.0;
  double spacing_v = 1.0;
  double origin_u = 0.0;
  double origin_v = 0.0;
  std::vector<double> values;  // row-major, height x width
  double timestamp_s = 0.0;

  double at(int col, int row) const { return values[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const DrrFrame&) const = default;
};

// Axis-aligned crop window in detector millimetres.
struct CropBox {
  double center_u = 0.0;
  double center_v = 0.0;
  double half_u = 0.0;  // lateral (left-right)
  double half_v = 0.0;  // axial (superior-inferior)
};

inline constexpr double kLateralMarginMm = 100.0;
inline constexpr double kAxialMarginMm = 50.0;

// Parallel-beam Beer-Lambert projection along y: pixel = exp(-sum mu * dy).
DrrFrame project_coronal(const AttenuationVolume& volume);

// Box around the projected reference GTV: half-extents are the GTV half-extent
// plus the margins, clipped to the detector covered by the phantom grid.
CropBox make_crop_box(const PatientPhantom& phantom, double lateral_margin_mm = kLateralMarginMm,
                      double axial_margin_mm = kAxialMarginMm);

// Output size is round(2 * half / spacing) per axis; pixels that fall outside
// the frame are zero. Throws Geometry if the box misses the frame entirely.
DrrFrame crop(const DrrFrame& frame, const CropBox& box);

// Affine map of [min, max] onto [0, 1]. Throws DegenerateInput on constant frames.
DrrFrame normalize01(const DrrFrame& frame);

// Bilinear resampling with half-pixel alignment and edge clamping.
DrrFrame resample(const DrrFrame& frame, int out_width, int out_height);

struct RenderOptions {
  int out_size = 64;
  double noise_sd = 0.0;  // Gaussian noise on raw transmission; 0 disables
  std::uint64_t noise_seed = 0;
};

// crop(project_coronal(warp)) evaluated only over the crop window, without
// materialising the warped volume.
DrrFrame render_raw(const PatientPhantom& phantom, double displacement_mm, const Vec3& shift_mm,
                    const CropBox& box);

// Full per-frame pipeline: project, crop, resample, normalize. Returns
// out_size x out_size values in [0, 1].
std::vector<float> render_frame(const PatientPhantom& phantom, double displacement_mm,
                                const Vec3& shift_mm, const CropBox& box,
                                const RenderOptions& options = {});

// Binary PGM: "P5", dims, maxval 65535, big-endian samples, superior row first.
// Values are clamped to [0, 1] before quantisation.
void write_pgm(const DrrFrame& frame, const std::filesystem::path& path);

}  // namespace tmf
