#include <cmath>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "helpers.hpp"
#include "tmf/drr.hpp"
#include "tmf/error.hpp"

using namespace tmf;

namespace {

AttenuationVolume slab(int ny, double dy, float mu) {
  return AttenuationVolume(Grid{{3, ny, 2}, {1.0, dy, 1.0}, {0.0, 0.0, 0.0}}, mu);
}

DrrFrame frame_of(int w, int h, std::vector<double> values, double spacing = 1.0) {
  DrrFrame f;
  f.width = w;
  f.height = h;
  f.spacing_u = spacing;
  f.spacing_v = spacing;
  f.values = std::move(values);
  return f;
}

}  // namespace

TEST_CASE("zero attenuation transmits fully") {
  for (double v : project_coronal(slab(10, 1.0, 0.0f)).values) CHECK(v == 1.0);
}

TEST_CASE("homogeneous slab follows Beer-Lambert") {
  const DrrFrame f = project_coronal(slab(50, 1.0, 0.02f));
  for (double v : f.values) CHECK(std::abs(v - std::exp(-1.0)) < 1e-6);
  CHECK(std::abs(f.values[0] - 0.367879) < 1e-6);
}

TEST_CASE("optical depths add along the ray") {
  AttenuationVolume v(Grid{{1, 2, 1}, {1.0, 10.0, 1.0}, {0.0, 0.0, 0.0}}, 0.0f);
  v.at(0, 0, 0) = 0.03f;
  v.at(0, 1, 0) = 0.07f;
  CHECK(std::abs(project_coronal(v).values[0] - std::exp(-1.0)) < 1e-6);
}

TEST_CASE("projection geometry follows the volume grid") {
  const AttenuationVolume v(Grid{{4, 3, 5}, {2.0, 1.0, 3.0}, {-3.0, 0.0, -6.0}}, 0.0f);
  const DrrFrame f = project_coronal(v);
  CHECK(f.width == 4);
  CHECK(f.height == 5);
  CHECK(f.spacing_u == 2.0);
  CHECK(f.spacing_v == 3.0);
  CHECK(f.origin_u == -3.0);
  CHECK(f.origin_v == -6.0);
}

TEST_CASE("crop covering the whole frame is the identity") {
  DrrFrame f = frame_of(4, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, 2.0);
  f.origin_u = 1.0;
  f.origin_v = -2.0;
  const CropBox box{1.0 + 3.0, -2.0 + 2.0, 4.0, 3.0};
  const DrrFrame c = crop(f, box);
  CHECK(c.width == 4);
  CHECK(c.height == 3);
  CHECK(c.values == f.values);
  CHECK(c.origin_u == f.origin_u);
}

TEST_CASE("crop size is extent over spacing") {
  const DrrFrame f = frame_of(200, 200, std::vector<double>(40000, 0.5), 2.0);
  const DrrFrame c = crop(f, CropBox{200.0, 200.0, 100.0, 50.0});
  CHECK(c.width == 100);
  CHECK(c.height == 50);
}

TEST_CASE("crop zero-fills outside the frame and rejects disjoint boxes") {
  const DrrFrame f = frame_of(2, 2, {1, 2, 3, 4});
  const DrrFrame c = crop(f, CropBox{1.5, 0.0, 1.0, 0.5});
  CHECK(c.width == 2);
  CHECK(c.values == std::vector<double>{2, 0});
  try {
    crop(f, CropBox{100.0, 100.0, 1.0, 1.0});
    FAIL("expected a geometry error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Geometry);
  }
}

TEST_CASE("normalize01 maps min and max onto 0 and 1") {
  CHECK(normalize01(frame_of(3, 1, {2, 4, 6})).values == std::vector<double>{0.0, 0.5, 1.0});
  const DrrFrame unit = frame_of(3, 1, {0.0, 0.25, 1.0});
  CHECK(normalize01(unit).values == unit.values);
  try {
    normalize01(frame_of(2, 1, {3, 3}));
    FAIL("expected a degenerate-input error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateInput);
  }
}

TEST_CASE("resample to the same size is the identity") {
  std::vector<double> v(64 * 64);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.01 * static_cast<double>(i));
  const DrrFrame f = frame_of(64, 64, v);
  CHECK(resample(f, 64, 64).values == v);
}

TEST_CASE("resampling a constant frame stays constant") {
  for (double x : resample(frame_of(37, 21, std::vector<double>(37 * 21, 0.7)), 64, 64).values) {
    CHECK(x == doctest::Approx(0.7).epsilon(1e-15));
  }
}

TEST_CASE("downsampled checkerboard stays within the input range") {
  std::vector<double> v(128 * 128);
  for (int r = 0; r < 128; ++r) {
    for (int c = 0; c < 128; ++c) v[r * 128 + c] = ((r + c) % 2 == 0) ? 0.2 : 0.9;
  }
  const DrrFrame out = resample(frame_of(128, 128, v), 64, 64);
  CHECK(out.width == 64);
  CHECK(out.height == 64);
  for (double x : out.values) {
    CHECK(x >= 0.2);
    CHECK(x <= 0.9);
  }
}

TEST_CASE("crop box encloses the projected tumour and stays on the detector") {
  const PatientPhantom ph = generate_phantom(test::small_spec(), 1);
  const CropBox box = make_crop_box(ph);
  CHECK(box.center_v == doctest::Approx(ph.p_ref[2]));
  const Grid& g = ph.reference.grid;
  CHECK(box.center_u - box.half_u < ph.p_ref[0] - 50.0);
  CHECK(box.center_u + box.half_u > ph.p_ref[0] + 50.0);
  CHECK(box.half_v > 50.0);
  CHECK(box.center_u - box.half_u >= g.origin[0] - 0.5 * g.spacing[0] - 1e-9);
  CHECK(box.center_u + box.half_u <= g.origin[0] + (g.dims[0] - 0.5) * g.spacing[0] + 1e-9);
}

TEST_CASE("render_frame matches the explicit pipeline") {
  const PatientPhantom ph = generate_phantom(test::small_spec(), 2);
  const CropBox box = make_crop_box(ph);
  const std::vector<float> fast = render_frame(ph, 4.0, {0.0, 0.0, 0.0}, box);
  const DrrFrame slow = normalize01(resample(crop(project_coronal(deform(ph, 4.0)), box), 64, 64));
  REQUIRE(fast.size() == slow.values.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < fast.size(); ++i) worst = std::max(worst, std::abs(fast[i] - slow.values[i]));
  CHECK(worst < 1e-5);
  for (float x : fast) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
}

TEST_CASE("write_pgm emits a 16-bit binary PGM") {
  const auto dir = test::temp_dir("pgm");
  write_pgm(frame_of(2, 1, {0.0, 1.0}), dir / "f.pgm");
  std::ifstream is(dir / "f.pgm", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string header = "P5\n2 1\n65535\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size()]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 0xff);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 0xff);
}
