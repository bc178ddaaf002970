#include "tmf/drr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "tmf/error.hpp"

namespace tmf {

namespace {

struct PixelWindow {
  long col0 = 0, row0 = 0;
  int width = 0, height = 0;
};

PixelWindow window_for(const CropBox& box, double origin_u, double origin_v, double su, double sv) {
  require(box.half_u > 0.0 && box.half_v > 0.0, ErrorCode::Geometry,
          "crop box extent must be positive");
  PixelWindow w;
  w.width = static_cast<int>(std::lround(2.0 * box.half_u / su));
  w.height = static_cast<int>(std::lround(2.0 * box.half_v / sv));
  require(w.width >= 1 && w.height >= 1, ErrorCode::Geometry, "crop box smaller than one pixel");
  // Pixel edges start half a pixel before the first centre.
  w.col0 = std::lround((box.center_u - box.half_u - (origin_u - 0.5 * su)) / su);
  w.row0 = std::lround((box.center_v - box.half_v - (origin_v - 0.5 * sv)) / sv);
  return w;
}

void require_overlap(const PixelWindow& w, int frame_width, int frame_height) {
  const bool overlaps = w.col0 < frame_width && w.col0 + w.width > 0 && w.row0 < frame_height &&
                        w.row0 + w.height > 0;
  require(overlaps, ErrorCode::Geometry, "crop box does not intersect the frame");
}

}  // namespace

DrrFrame project_coronal(const AttenuationVolume& volume) {
  volume.validate();
  const Grid& g = volume.grid;
  DrrFrame frame;
  frame.width = g.dims[0];
  frame.height = g.dims[2];
  frame.spacing_u = g.spacing[0];
  frame.spacing_v = g.spacing[2];
  frame.origin_u = g.origin[0];
  frame.origin_v = g.origin[2];
  frame.values.assign(static_cast<std::size_t>(frame.width) * frame.height, 0.0);
  const double dy = g.spacing[1];
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int i = 0; i < g.dims[0]; ++i) {
      double depth = 0.0;
      for (int j = 0; j < g.dims[1]; ++j) depth += static_cast<double>(volume.at(i, j, k)) * dy;
      frame.values[static_cast<std::size_t>(k) * frame.width + i] = std::exp(-depth);
    }
  }
  return frame;
}

CropBox make_crop_box(const PatientPhantom& phantom, double lateral_margin_mm, double axial_margin_mm) {
  require(phantom.gtv_voxels > 0, ErrorCode::Geometry, "GTV mask is empty");
  const Grid& g = phantom.reference.grid;
  double lo_x = 1e300, hi_x = -1e300, lo_z = 1e300, hi_z = -1e300;
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        if (!phantom.gtv_mask[g.index(i, j, k)]) continue;
        const Vec3 p = g.world(i, j, k);
        lo_x = std::min(lo_x, p[0]);
        hi_x = std::max(hi_x, p[0]);
        lo_z = std::min(lo_z, p[2]);
        hi_z = std::max(hi_z, p[2]);
      }
    }
  }
  const double half_gtv_x = 0.5 * (hi_x - lo_x + g.spacing[0]);
  const double half_gtv_z = 0.5 * (hi_z - lo_z + g.spacing[2]);
  const double cu = phantom.p_ref[0], cv = phantom.p_ref[2];

  auto clip = [](double c, double h, double lo, double hi, double& out_c, double& out_h) {
    const double a = std::max(c - h, lo);
    const double b = std::min(c + h, hi);
    require(b > a, ErrorCode::Geometry, "crop box lies outside the detector");
    out_c = 0.5 * (a + b);
    out_h = 0.5 * (b - a);
  };
  const double det_lo_u = g.origin[0] - 0.5 * g.spacing[0];
  const double det_hi_u = g.origin[0] + (g.dims[0] - 0.5) * g.spacing[0];
  const double det_lo_v = g.origin[2] - 0.5 * g.spacing[2];
  const double det_hi_v = g.origin[2] + (g.dims[2] - 0.5) * g.spacing[2];
  CropBox box;
  clip(cu, half_gtv_x + lateral_margin_mm, det_lo_u, det_hi_u, box.center_u, box.half_u);
  clip(cv, half_gtv_z + axial_margin_mm, det_lo_v, det_hi_v, box.center_v, box.half_v);
  return box;
}

DrrFrame crop(const DrrFrame& frame, const CropBox& box) {
  const PixelWindow w = window_for(box, frame.origin_u, frame.origin_v, frame.spacing_u, frame.spacing_v);
  require_overlap(w, frame.width, frame.height);
  DrrFrame out;
  out.width = w.width;
  out.height = w.height;
  out.spacing_u = frame.spacing_u;
  out.spacing_v = frame.spacing_v;
  out.origin_u = frame.origin_u + static_cast<double>(w.col0) * frame.spacing_u;
  out.origin_v = frame.origin_v + static_cast<double>(w.row0) * frame.spacing_v;
  out.timestamp_s = frame.timestamp_s;
  out.values.assign(static_cast<std::size_t>(out.width) * out.height, 0.0);
  for (int b = 0; b < out.height; ++b) {
    const long row = w.row0 + b;
    if (row < 0 || row >= frame.height) continue;
    for (int a = 0; a < out.width; ++a) {
      const long col = w.col0 + a;
      if (col < 0 || col >= frame.width) continue;
      out.values[static_cast<std::size_t>(b) * out.width + a] =
          frame.at(static_cast<int>(col), static_cast<int>(row));
    }
  }
  return out;
}

DrrFrame normalize01(const DrrFrame& frame) {
  require(!frame.values.empty(), ErrorCode::DegenerateInput, "cannot normalize an empty frame");
  const auto [mn, mx] = std::minmax_element(frame.values.begin(), frame.values.end());
  const double lo = *mn, hi = *mx;
  require(std::isfinite(lo) && std::isfinite(hi), ErrorCode::Numeric, "frame has non-finite values");
  require(hi > lo, ErrorCode::DegenerateInput, "cannot normalize a constant frame");
  DrrFrame out = frame;
  const double range = hi - lo;
  for (double& v : out.values) v = (v - lo) / range;
  return out;
}

DrrFrame resample(const DrrFrame& frame, int out_width, int out_height) {
  require(out_width >= 1 && out_height >= 1, ErrorCode::Parameter, "resample size must be >= 1");
  require(frame.width >= 1 && frame.height >= 1, ErrorCode::Parameter, "cannot resample an empty frame");
  DrrFrame out;
  out.width = out_width;
  out.height = out_height;
  const double scale_u = static_cast<double>(frame.width) / out_width;
  const double scale_v = static_cast<double>(frame.height) / out_height;
  out.spacing_u = frame.spacing_u * scale_u;
  out.spacing_v = frame.spacing_v * scale_v;
  out.origin_u = frame.origin_u + (0.5 * scale_u - 0.5) * frame.spacing_u;
  out.origin_v = frame.origin_v + (0.5 * scale_v - 0.5) * frame.spacing_v;
  out.timestamp_s = frame.timestamp_s;
  out.values.resize(static_cast<std::size_t>(out_width) * out_height);

  auto source = [](int dst, double scale, int n, int& i0, int& i1, double& t) {
    double s = (dst + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, n - 1);
    t = s - i0;
  };
  for (int b = 0; b < out_height; ++b) {
    int r0, r1;
    double tv;
    source(b, scale_v, frame.height, r0, r1, tv);
    for (int a = 0; a < out_width; ++a) {
      int c0, c1;
      double tu;
      source(a, scale_u, frame.width, c0, c1, tu);
      const double top = frame.at(c0, r0) + tu * (frame.at(c1, r0) - frame.at(c0, r0));
      const double bot = frame.at(c0, r1) + tu * (frame.at(c1, r1) - frame.at(c0, r1));
      double v = top + tv * (bot - top);
      // Guards against rounding just outside the source corners.
      const double lo = std::min({frame.at(c0, r0), frame.at(c1, r0), frame.at(c0, r1), frame.at(c1, r1)});
      const double hi = std::max({frame.at(c0, r0), frame.at(c1, r0), frame.at(c0, r1), frame.at(c1, r1)});
      out.values[static_cast<std::size_t>(b) * out_width + a] = std::clamp(v, lo, hi);
    }
  }
  return out;
}

DrrFrame render_raw(const PatientPhantom& phantom, double displacement_mm, const Vec3& shift_mm,
                    const CropBox& box) {
  require(std::isfinite(displacement_mm), ErrorCode::Parameter, "displacement must be finite");
  const AttenuationVolume& ref = phantom.reference;
  const Grid& g = ref.grid;
  const PixelWindow w = window_for(box, g.origin[0], g.origin[2], g.spacing[0], g.spacing[2]);
  require_overlap(w, g.dims[0], g.dims[2]);

  DrrFrame out;
  out.width = w.width;
  out.height = w.height;
  out.spacing_u = g.spacing[0];
  out.spacing_v = g.spacing[2];
  out.origin_u = g.origin[0] + static_cast<double>(w.col0) * g.spacing[0];
  out.origin_v = g.origin[2] + static_cast<double>(w.row0) * g.spacing[2];
  out.values.assign(static_cast<std::size_t>(out.width) * out.height, 0.0);

  const Vec3 step = displacement_mm * phantom.motion_direction;
  const Vec3 shift_idx{shift_mm[0] / g.spacing[0], shift_mm[1] / g.spacing[1], shift_mm[2] / g.spacing[2]};
  const Vec3 step_idx{step[0] / g.spacing[0], step[1] / g.spacing[1], step[2] / g.spacing[2]};
  const bool identity = displacement_mm == 0.0 && shift_mm == Vec3{0.0, 0.0, 0.0};
  const double dy = g.spacing[1];

  for (int b = 0; b < out.height; ++b) {
    const long k = w.row0 + b;
    if (k < 0 || k >= g.dims[2]) continue;
    for (int a = 0; a < out.width; ++a) {
      const long i = w.col0 + a;
      if (i < 0 || i >= g.dims[0]) continue;
      double depth = 0.0;
      for (int j = 0; j < g.dims[1]; ++j) {
        const std::size_t idx = g.index(static_cast<int>(i), j, static_cast<int>(k));
        float mu;
        if (identity) {
          mu = ref.values[idx];
        } else {
          const double wgt = phantom.motion_weight[idx];
          mu = static_cast<float>(sample_trilinear(ref, static_cast<double>(i) - shift_idx[0] - wgt * step_idx[0],
                                                   static_cast<double>(j) - shift_idx[1] - wgt * step_idx[1],
                                                   static_cast<double>(k) - shift_idx[2] - wgt * step_idx[2]));
        }
        depth += static_cast<double>(mu) * dy;
      }
      out.values[static_cast<std::size_t>(b) * out.width + a] = std::exp(-depth);
    }
  }
  return out;
}

std::vector<float> render_frame(const PatientPhantom& phantom, double displacement_mm,
                                const Vec3& shift_mm, const CropBox& box, const RenderOptions& options) {
  DrrFrame raw = render_raw(phantom, displacement_mm, shift_mm, box);
  if (options.noise_sd > 0.0) {
    std::mt19937_64 rng(options.noise_seed);
    std::normal_distribution<double> gauss(0.0, options.noise_sd);
    for (double& v : raw.values) v += gauss(rng);
  }
  const DrrFrame small = normalize01(resample(raw, options.out_size, options.out_size));
  std::vector<float> out(small.values.size());
  std::transform(small.values.begin(), small.values.end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
  return out;
}

void write_pgm(const DrrFrame& frame, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::Io, "cannot open " + path.string() + " for writing");
  os << "P5\n" << frame.width << ' ' << frame.height << "\n65535\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(frame.width) * 2);
  for (int b = frame.height - 1; b >= 0; --b) {
    for (int a = 0; a < frame.width; ++a) {
      const double v = std::clamp(frame.at(a, b), 0.0, 1.0);
      const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      row[2 * a] = static_cast<unsigned char>(q >> 8);
      row[2 * a + 1] = static_cast<unsigned char>(q & 0xff);
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  require(static_cast<bool>(os), ErrorCode::Io, "failed writing " + path.string());
}

}  // namespace tmf
