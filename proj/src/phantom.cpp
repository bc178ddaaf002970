#include "tmf/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "tmf/error.hpp"
#include "tmf/json_io.hpp"

namespace tmf {

namespace {

bool finite3(const Vec3& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

double ellipsoid_level(const Vec3& p, const Vec3& center, const Vec3& semi) {
  const double dx = (p[0] - center[0]) / semi[0];
  const double dy = (p[1] - center[1]) / semi[1];
  const double dz = (p[2] - center[2]) / semi[2];
  return dx * dx + dy * dy + dz * dz;
}

double cos_pow(double theta, int n) {
  const double c = std::cos(theta);
  const double c2 = c * c;
  double out = 1.0;
  for (int i = 0; i < n; ++i) out *= c2;
  return out;
}

}  // namespace

Grid Grid::centered(std::array<int, 3> dims, Vec3 spacing) {
  Grid g;
  g.dims = dims;
  g.spacing = spacing;
  for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (dims[a] - 1) * spacing[a];
  return g;
}

AttenuationVolume::AttenuationVolume(Grid g, float fill) : grid(g) {
  require(g.dims[0] >= 1 && g.dims[1] >= 1 && g.dims[2] >= 1, ErrorCode::Parameter,
          "volume dims must be >= 1 per axis");
  values.assign(g.voxel_count(), fill);
}

void AttenuationVolume::validate() const {
  for (int a = 0; a < 3; ++a) {
    require(grid.dims[a] >= 1, ErrorCode::Parameter, "volume dims must be >= 1 per axis");
    require(grid.spacing[a] > 0.0 && std::isfinite(grid.spacing[a]), ErrorCode::Parameter,
            "volume spacing must be positive");
  }
  require(values.size() == grid.voxel_count(), ErrorCode::Parameter,
          "volume value count does not match dims");
  for (float v : values) {
    require(v >= 0.0f && std::isfinite(v), ErrorCode::Parameter,
            "attenuation values must be finite and >= 0");
  }
}

double sample_trilinear(const AttenuationVolume& volume, double fi, double fj, double fk) {
  const Grid& g = volume.grid;
  const double fl_i = std::floor(fi), fl_j = std::floor(fj), fl_k = std::floor(fk);
  const int i0 = static_cast<int>(fl_i), j0 = static_cast<int>(fl_j), k0 = static_cast<int>(fl_k);
  const double ti = fi - fl_i, tj = fj - fl_j, tk = fk - fl_k;
  if (i0 < -1 || j0 < -1 || k0 < -1 || i0 >= g.dims[0] || j0 >= g.dims[1] || k0 >= g.dims[2]) {
    return 0.0;
  }
  const float* v = volume.values.data();
  const std::size_t sx = 1, sy = static_cast<std::size_t>(g.dims[0]),
                    sz = static_cast<std::size_t>(g.dims[0]) * g.dims[1];
  if (i0 >= 0 && j0 >= 0 && k0 >= 0 && i0 + 1 < g.dims[0] && j0 + 1 < g.dims[1] &&
      k0 + 1 < g.dims[2]) {
    const float* p = v + g.index(i0, j0, k0);
    const double c00 = p[0] + ti * (p[sx] - p[0]);
    const double c10 = p[sy] + ti * (p[sy + sx] - p[sy]);
    const double c01 = p[sz] + ti * (p[sz + sx] - p[sz]);
    const double c11 = p[sz + sy] + ti * (p[sz + sy + sx] - p[sz + sy]);
    const double c0 = c00 + tj * (c10 - c00);
    const double c1 = c01 + tj * (c11 - c01);
    return c0 + tk * (c1 - c0);
  }
  double acc = 0.0;
  for (int dk = 0; dk < 2; ++dk) {
    const int k = k0 + dk;
    if (k < 0 || k >= g.dims[2]) continue;
    const double wk = dk ? tk : 1.0 - tk;
    for (int dj = 0; dj < 2; ++dj) {
      const int j = j0 + dj;
      if (j < 0 || j >= g.dims[1]) continue;
      const double wj = dj ? tj : 1.0 - tj;
      for (int di = 0; di < 2; ++di) {
        const int i = i0 + di;
        if (i < 0 || i >= g.dims[0]) continue;
        const double wi = di ? ti : 1.0 - ti;
        acc += wi * wj * wk * v[g.index(i, j, k)];
      }
    }
  }
  return acc;
}

void BreathingParams::validate() const {
  require(amplitude_mm >= 0.0 && std::isfinite(amplitude_mm), ErrorCode::Parameter,
          "breathing amplitude must be >= 0");
  require(period_s > 0.0 && std::isfinite(period_s), ErrorCode::Parameter,
          "breathing period must be > 0");
  require(shape_exponent >= 1, ErrorCode::Parameter, "breathing shape exponent must be >= 1");
  require(amplitude_jitter_sd >= 0.0 && period_jitter_sd >= 0.0, ErrorCode::Parameter,
          "breathing jitter SDs must be >= 0");
  require(std::isfinite(phase_rad) && std::isfinite(drift_mm_per_min), ErrorCode::Parameter,
          "breathing phase and drift must be finite");
}

BreathingSignal sample_breathing(const BreathingParams& params, std::size_t n_points,
                                 double rate_hz, std::uint64_t seed) {
  params.validate();
  require(n_points >= 1, ErrorCode::Parameter, "breathing signal needs n_points >= 1");
  require(rate_hz > 0.0 && std::isfinite(rate_hz), ErrorCode::Parameter,
          "breathing sample rate must be > 0");

  BreathingSignal signal;
  signal.rate_hz = rate_hz;
  signal.samples.resize(n_points);
  const double pi = std::numbers::pi;
  const int n = params.shape_exponent;
  auto baseline = [&](double t) { return params.drift_mm_per_min * t / 60.0; };

  if (params.amplitude_jitter_sd == 0.0 && params.period_jitter_sd == 0.0) {
    for (std::size_t i = 0; i < n_points; ++i) {
      const double t = static_cast<double>(i) / rate_hz;
      signal.samples[i] =
          baseline(t) - params.amplitude_mm * cos_pow(pi * t / params.period_s + params.phase_rad, n);
    }
    return signal;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double amp = 0.0, tau = 0.0;
  auto draw_cycle = [&] {
    const double za = gauss(rng);
    const double zt = gauss(rng);
    amp = params.amplitude_mm * std::max(0.0, 1.0 + params.amplitude_jitter_sd * za);
    tau = params.period_s * std::max(0.2, 1.0 + params.period_jitter_sd * zt);
  };
  draw_cycle();

  double theta = params.phase_rad;
  // Next boundary pi/2 + k*pi strictly above theta.
  double boundary = pi / 2.0 + pi * (std::floor((theta - pi / 2.0) / pi) + 1.0);
  double t_prev = 0.0;
  for (std::size_t i = 0; i < n_points; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    double dt = t - t_prev;
    while (theta + pi * dt / tau >= boundary) {
      dt -= (boundary - theta) * tau / pi;
      theta = boundary;
      boundary += pi;
      draw_cycle();
    }
    theta += pi * dt / tau;
    t_prev = t;
    signal.samples[i] = baseline(t) - amp * cos_pow(theta, n);
  }
  return signal;
}

PatientPhantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed, std::string patient_id) {
  for (int a = 0; a < 3; ++a) {
    require(spec.dims[a] >= 1, ErrorCode::Parameter, "phantom dims must be >= 1");
    require(spec.spacing_mm[a] > 0.0 && std::isfinite(spec.spacing_mm[a]), ErrorCode::Parameter,
            "phantom spacing must be positive");
  }
  for (double mu : {spec.mu_body, spec.mu_lung, spec.mu_tumor, spec.mu_bone}) {
    require(mu >= 0.0 && std::isfinite(mu), ErrorCode::Parameter,
            "attenuation levels must be finite and >= 0");
  }
  require(finite3(spec.tumor_center_mm) && finite3(spec.tumor_semi_axes_mm), ErrorCode::Parameter,
          "tumor geometry must be finite");
  for (int a = 0; a < 3; ++a) {
    require(spec.tumor_semi_axes_mm[a] > 0.0, ErrorCode::Geometry,
            "tumor radius must be > 0 (empty GTV)");
    require(spec.lung_semi_axes_mm[a] > 0.0, ErrorCode::Geometry, "lung semi-axes must be > 0");
  }
  require(spec.body_semi_axes_mm[0] > 0.0 && spec.body_semi_axes_mm[1] > 0.0, ErrorCode::Geometry,
          "body semi-axes must be > 0");
  require(spec.taper_length_mm > 0.0 && spec.apex_weight >= 0.0 && spec.apex_weight <= 1.0,
          ErrorCode::Parameter, "motion taper needs length > 0 and apex weight in [0, 1]");
  spec.breathing.validate();
  const double dir_norm = norm(spec.motion_direction);
  require(dir_norm > 0.0 && std::isfinite(dir_norm), ErrorCode::Parameter,
          "motion direction must be a non-zero finite vector");

  PatientPhantom ph;
  ph.patient_id = std::move(patient_id);
  ph.spec = spec;
  ph.seed = seed;
  ph.breathing = spec.breathing;
  ph.motion_direction = (1.0 / dir_norm) * spec.motion_direction;
  for (int a = 0; a < 3; ++a) {
    ph.amplitudes[a] = spec.breathing.amplitude_mm * std::abs(ph.motion_direction[a]);
  }

  const Grid grid = Grid::centered(spec.dims, spec.spacing_mm);
  for (int a = 0; a < 3; ++a) {
    const double lo = grid.origin[a];
    const double hi = grid.origin[a] + (grid.dims[a] - 1) * grid.spacing[a];
    require(spec.tumor_center_mm[a] - spec.tumor_semi_axes_mm[a] >= lo &&
                spec.tumor_center_mm[a] + spec.tumor_semi_axes_mm[a] <= hi,
            ErrorCode::Geometry, "tumor extends outside the volume bounds");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<Vec3, 2> lung_center, lung_semi;
  for (int side = 0; side < 2; ++side) {
    const double f = 1.0 + spec.lung_size_jitter * (2.0 * unit(rng) - 1.0);
    lung_semi[side] = f * spec.lung_semi_axes_mm;
    lung_center[side] = {side == 0 ? -spec.lung_offset_x_mm : spec.lung_offset_x_mm,
                         spec.lung_center_mm[1], spec.lung_center_mm[2]};
  }
  const double rib_offset = unit(rng) * spec.rib_period_mm;

  const double bx = spec.body_semi_axes_mm[0], by = spec.body_semi_axes_mm[1];
  const double ix = std::max(bx - spec.shell_thickness_mm, 1e-6);
  const double iy = std::max(by - spec.shell_thickness_mm, 1e-6);
  const double spine_y = by - spec.shell_thickness_mm - spec.spine_radius_mm;

  const double z_full = spec.tumor_center_mm[2] + spec.tumor_semi_axes_mm[2] + spec.taper_margin_mm;
  auto weight_at = [&](double z) -> float {
    if (spec.uniform_motion || z <= z_full) return 1.0f;
    if (z >= z_full + spec.taper_length_mm) return static_cast<float>(spec.apex_weight);
    const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * (z - z_full) / spec.taper_length_mm));
    return static_cast<float>(spec.apex_weight + (1.0 - spec.apex_weight) * c);
  };

  ph.reference = AttenuationVolume(grid, 0.0f);
  ph.gtv_mask.assign(grid.voxel_count(), 0);
  ph.motion_weight.assign(grid.voxel_count(), 1.0f);

  Vec3 centroid{0.0, 0.0, 0.0};
  double weight_sum = 0.0;
  std::size_t tumor_count = 0;
  bool tumor_outside_lung = false;
  for (int k = 0; k < grid.dims[2]; ++k) {
    for (int j = 0; j < grid.dims[1]; ++j) {
      for (int i = 0; i < grid.dims[0]; ++i) {
        const Vec3 p = grid.world(i, j, k);
        const std::size_t idx = grid.index(i, j, k);
        ph.motion_weight[idx] = weight_at(p[2]);

        const bool in_lung = ellipsoid_level(p, lung_center[0], lung_semi[0]) <= 1.0 ||
                             ellipsoid_level(p, lung_center[1], lung_semi[1]) <= 1.0;
        const bool in_tumor = ellipsoid_level(p, spec.tumor_center_mm, spec.tumor_semi_axes_mm) <= 1.0;
        const double body = (p[0] / bx) * (p[0] / bx) + (p[1] / by) * (p[1] / by);
        if (in_tumor && (!in_lung || body > 1.0)) tumor_outside_lung = true;
        if (body > 1.0) continue;
        double mu = spec.mu_body;
        const double inner = (p[0] / ix) * (p[0] / ix) + (p[1] / iy) * (p[1] / iy);
        if (inner > 1.0) {
          const double phase = std::fmod(p[2] - rib_offset + 1e6 * spec.rib_period_mm, spec.rib_period_mm);
          if (phase < spec.rib_thickness_mm) mu = spec.mu_bone;
        }
        const double sx = p[0], sy = p[1] - spine_y;
        if (sx * sx + sy * sy <= spec.spine_radius_mm * spec.spine_radius_mm) mu = spec.mu_bone;
        if (in_lung) mu = spec.mu_lung;
        if (in_tumor) {
          mu = spec.mu_tumor;
          ph.gtv_mask[idx] = 1;
          centroid = centroid + p;
          weight_sum += ph.motion_weight[idx];
          ++tumor_count;
        }
        ph.reference.values[idx] = static_cast<float>(mu);
      }
    }
  }
  require(tumor_count > 0, ErrorCode::Geometry, "tumor covers no voxel centres (empty GTV)");
  require(!tumor_outside_lung, ErrorCode::Geometry, "tumor is not fully inside the lung region");

  ph.gtv_voxels = tumor_count;
  ph.p_ref = (1.0 / static_cast<double>(tumor_count)) * centroid;
  ph.gtv_mean_weight = weight_sum / static_cast<double>(tumor_count);
  return ph;
}

AttenuationVolume warp_volume(const AttenuationVolume& reference, const std::vector<float>& weight,
                              const Vec3& direction, double displacement_mm, const Vec3& shift_mm) {
  require(std::isfinite(displacement_mm) && finite3(shift_mm), ErrorCode::Parameter,
          "displacement must be finite");
  const Grid& g = reference.grid;
  require(weight.size() == g.voxel_count(), ErrorCode::Shape,
          "motion weight field does not match the volume grid");
  if (displacement_mm == 0.0 && shift_mm == Vec3{0.0, 0.0, 0.0}) return reference;

  AttenuationVolume out(g, 0.0f);
  const Vec3 step = displacement_mm * direction;
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        const double w = weight[idx];
        const double fi = i - (shift_mm[0] + w * step[0]) / g.spacing[0];
        const double fj = j - (shift_mm[1] + w * step[1]) / g.spacing[1];
        const double fk = k - (shift_mm[2] + w * step[2]) / g.spacing[2];
        out.values[idx] = static_cast<float>(sample_trilinear(reference, fi, fj, fk));
      }
    }
  }
  return out;
}

AttenuationVolume deform(const PatientPhantom& phantom, double displacement_mm) {
  return warp_volume(phantom.reference, phantom.motion_weight, phantom.motion_direction,
                     displacement_mm);
}

Vec3 tumor_center(const PatientPhantom& phantom, double displacement_mm, const Vec3& shift_mm) {
  require(phantom.gtv_voxels > 0, ErrorCode::Geometry, "GTV mask is empty");
  require(std::isfinite(displacement_mm), ErrorCode::Parameter, "displacement must be finite");
  return phantom.p_ref + (displacement_mm * phantom.gtv_mean_weight) * phantom.motion_direction +
         shift_mm;
}

std::uint64_t spec_hash(const PhantomSpec& spec) {
  const std::string text = nlohmann::json(spec).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace tmf
