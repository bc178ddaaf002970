#include <cmath>
#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "tmf/cohort.hpp"
#include "tmf/dataset.hpp"
#include "tmf/error.hpp"

using namespace tmf;

namespace {

const PatientPhantom& phantom() {
  static const PatientPhantom ph = generate_phantom(test::small_spec(), 5, "P5");
  return ph;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string two_patient_manifest() {
  return R"({"defaults": {"phantom": {"dims": [64, 64, 64], "spacing_mm": [4, 4, 4]}},
             "patients": [{"patient_id": "a"}, {"patient_id": "b"}]})";
}

}  // namespace

TEST_CASE("training set window arithmetic") {
  CHECK(build_training_set(phantom(), 100, 1).size() == 80);
  CHECK(build_training_set(phantom(), 21, 1).size() == 1);
  CHECK(code_of([] { build_training_set(phantom(), 20, 1); }) == ErrorCode::Parameter);
}

TEST_CASE("training samples carry consecutive windows") {
  const SessionDataset ds = build_training_set(phantom(), 30, 2);
  REQUIRE(ds.size() == 10);
  const FrameSequence& seq = *ds.sequences[0];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const DrrSample& s = ds.samples[i];
    CHECK(s.t0 == i);
    CHECK(s.observed.size() == 16);
    CHECK(s.targets.size() == 5);
    CHECK(s.observed[0] == seq.positions_norm[i]);
    CHECK(s.targets[0] == seq.positions_norm[i + 16]);
    CHECK(s.frames().data() == seq.frames.data() + i * 64 * 64);
  }
}

TEST_CASE("longer training traces extend shorter ones") {
  const SessionDataset a = build_training_set(phantom(), 40, 3);
  const SessionDataset b = build_training_set(phantom(), 60, 3);
  const std::vector<DrrSample> prefix = first_windows(b, 40);
  REQUIRE(prefix.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(prefix[i].observed == a.samples[i].observed);
    CHECK(prefix[i].targets == a.samples[i].targets);
    CHECK(std::equal(prefix[i].frames().begin(), prefix[i].frames().end(), a.samples[i].frames().begin()));
  }
}

TEST_CASE("test set arithmetic") {
  TestSetOptions o;
  const SessionDataset ds = build_test_set(phantom(), 4, o);
  CHECK(ds.sequences.size() == 10);
  for (const auto& seq : ds.sequences) CHECK(seq->length() == 100);
  CHECK(ds.size() == 800);
  o.duration_s = 4.0;
  CHECK(code_of([&] { build_test_set(phantom(), 4, o); }) == ErrorCode::Parameter);
}

TEST_CASE("zero-setup test targets match the training distribution") {
  const SessionDataset train = build_training_set(phantom(), 1000, 6);
  TestSetOptions o;
  o.n_sequences = 10;
  const SessionDataset test = build_test_set(phantom(), 7, o);
  for (int axis = 1; axis < 3; ++axis) {
    double sum = 0.0, sq = 0.0;
    for (const auto& s : train.samples) {
      sum += s.targets[0][axis];
      sq += s.targets[0][axis] * s.targets[0][axis];
    }
    const double n = static_cast<double>(train.size());
    const double mean_train = sum / n;
    const double sd = std::sqrt(sq / n - mean_train * mean_train);
    // One breathing cycle is 20 frames, so windows within a sequence are far from independent.
    const double effective = static_cast<double>(test.sequences.size()) * 100.0 / 20.0;
    double test_sum = 0.0;
    for (const auto& s : test.samples) test_sum += s.targets[0][axis];
    const double mean_test = test_sum / static_cast<double>(test.size());
    CHECK(std::abs(mean_test - mean_train) < 3.0 * sd / std::sqrt(effective));
  }
}

TEST_CASE("T1 test labels are exact and setup shifts move labels") {
  TestSetOptions o;
  o.n_sequences = 2;
  o.duration_s = 5.0;
  o.setup_error_mm = 3.0;
  const SessionDataset shifted = build_test_set(phantom(), 8, o);
  o.setup_error_mm = 0.0;
  const SessionDataset plain = build_test_set(phantom(), 8, o);
  for (std::size_t s = 0; s < 2; ++s) {
    const Vec3 d = shifted.sequences[s]->positions_mm[0] - plain.sequences[s]->positions_mm[0];
    for (int a = 0; a < 3; ++a) CHECK(std::abs(d[a]) <= 3.0);
    CHECK(norm(d) > 0.0);
    for (std::size_t t = 1; t < plain.sequences[s]->length(); ++t) {
      const Vec3 e = shifted.sequences[s]->positions_mm[t] - plain.sequences[s]->positions_mm[t];
      CHECK(distance(e, d) < 1e-9);
    }
  }
}

TEST_CASE("simulate_t2") {
  PhantomSpec s = test::small_spec();
  s.breathing.amplitude_mm = 12.0;
  const PatientPhantom ph = generate_phantom(s, 9);
  CHECK(simulate_t2(ph, T2Perturbation{}) == ph);

  T2Perturbation p;
  p.amplitude_scale = 0.82;
  CHECK(simulate_t2(ph, p).breathing.amplitude_mm == doctest::Approx(9.84).epsilon(1e-12));

  // Tumour 2 mm below the top of a short lung.
  PhantomSpec tight = test::small_spec();
  tight.lung_size_jitter = 0.0;
  tight.lung_center_mm = {0.0, 0.0, -4.0};
  tight.lung_semi_axes_mm = {40.0, 60.0, 20.0};
  tight.tumor_center_mm = {-55.0, 0.0, 2.0};
  tight.tumor_semi_axes_mm = {8.0, 8.0, 12.0};
  const PatientPhantom tp = generate_phantom(tight, 1);
  T2Perturbation up;
  up.baseline_shift_mm = {0.0, 0.0, 40.0};
  CHECK(code_of([&] { simulate_t2(tp, up); }) == ErrorCode::Geometry);
}

TEST_CASE("sampled T2 perturbations stay in range") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const T2Perturbation p = sample_t2_perturbation(seed);
    CHECK(p.amplitude_scale >= 0.8);
    CHECK(p.amplitude_scale <= 1.2);
    CHECK(p.tumor_scale >= 0.8);
    CHECK(p.tumor_scale <= 1.2);
    for (double v : p.baseline_shift_mm) CHECK(std::abs(v) <= 5.0);
  }
  CHECK(sample_t2_perturbation(3) == sample_t2_perturbation(3));
}

TEST_CASE("position normalization") {
  NormalizationParams n;
  n.p_ref = {1.0, 2.0, 3.0};
  n.amplitudes = {0.5, 4.0, 0.0};
  CHECK(normalize_position(n.p_ref, n) == Vec3{0.0, 0.0, 0.0});
  const Vec3 q = normalize_position({1.5, 6.0, 5.0}, n);
  CHECK(q[0] == 0.5);
  CHECK(q[1] == 1.0);
  CHECK(q[2] == 2.0);
  const Vec3 p{-3.25, 7.5, 11.0};
  const Vec3 back = denormalize_position(normalize_position(p, n), n);
  CHECK(distance(back, p) < 1e-12);
}

TEST_CASE("tmfd round trip is byte-exact") {
  const SessionDataset ds = build_training_set(phantom(), 30, 10);
  const auto bytes = serialize_dataset(ds);
  const SessionDataset back = deserialize_dataset(bytes);
  CHECK(equal_contents(ds, back));
  CHECK(serialize_dataset(back) == bytes);
  const auto dir = test::temp_dir("tmfd");
  write_dataset(ds, dir / "d.tmfd");
  CHECK(equal_contents(read_dataset(dir / "d.tmfd"), ds));
}

TEST_CASE("corrupt tmfd files yield format errors") {
  const auto bytes = serialize_dataset(build_training_set(phantom(), 25, 11));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { deserialize_dataset(bad_magic); }) == ErrorCode::Format);
  CHECK(message_of([&] { deserialize_dataset(bad_magic); }).find("\"TMFD\"") != std::string::npos);

  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  CHECK(code_of([&] { deserialize_dataset(cut); }) == ErrorCode::Format);
  CHECK(message_of([&] { deserialize_dataset(cut); }).find("offset") != std::string::npos);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { deserialize_dataset(trailing); }) == ErrorCode::Format);

  auto version = bytes;
  version[4] = 9;
  CHECK(code_of([&] { deserialize_dataset(version); }) == ErrorCode::Format);

  CHECK(code_of([] { read_dataset("/nonexistent/x.tmfd"); }) == ErrorCode::InputNotFound);
}

TEST_CASE("datasets are reproducible from their seeds") {
  CHECK(serialize_dataset(build_training_set(phantom(), 40, 12)) ==
        serialize_dataset(build_training_set(phantom(), 40, 12)));
  TrainingSetOptions threaded;
  threaded.workers = 3;
  CHECK(serialize_dataset(build_training_set(phantom(), 40, 12, threaded)) ==
        serialize_dataset(build_training_set(phantom(), 40, 12)));
  CHECK(serialize_dataset(build_training_set(phantom(), 40, 12)) !=
        serialize_dataset(build_training_set(phantom(), 40, 13)));
}

TEST_CASE("manifest parsing") {
  const CohortManifest m = parse_manifest(two_patient_manifest());
  REQUIRE(m.patients.size() == 2);
  CHECK(m.patients[0].spec.dims == std::array<int, 3>{64, 64, 64});
  CHECK(m.patients[0].seeds.phantom != m.patients[1].seeds.phantom);
  CHECK_FALSE(m.patients[0].t2_perturbation.has_value());

  const CohortManifest p = parse_manifest(R"({"patients": [
      {"patient_id": "a", "t2_perturbation": [0.9, 2.0, 1.1], "seeds": {"phantom": 7}},
      {"patient_id": "b", "phantom": {"tumor_radius_mm": 10},
       "t2_perturbation": {"amplitude_scale": 1.1, "baseline_shift_mm": [1, 2, 3]}}]})");
  CHECK(p.patients[0].seeds.phantom == 7);
  CHECK(p.patients[0].t2_perturbation->amplitude_scale == 0.9);
  CHECK(p.patients[0].t2_perturbation->baseline_shift_mm == Vec3{0.0, 0.0, 2.0});
  CHECK(p.patients[0].t2_perturbation->tumor_scale == 1.1);
  CHECK(p.patients[1].spec.tumor_semi_axes_mm == Vec3{10.0, 10.0, 10.0});
  CHECK(p.patients[1].t2_perturbation->baseline_shift_mm == Vec3{1.0, 2.0, 3.0});
}

TEST_CASE("manifest errors") {
  CHECK(code_of([] { parse_manifest(R"({"patients": [{"patient_id": "a"}]})"); }) == ErrorCode::Manifest);
  CHECK(code_of([] { parse_manifest(R"({"patients": [{"patient_id": "a"}, {"patient_id": "a"}]})"); }) ==
        ErrorCode::Manifest);
  CHECK(code_of([] { parse_manifest(R"({"patients": [{"patient_id": "a"}, {"patient_id": "b", "x": 1}]})"); }) ==
        ErrorCode::Manifest);
  CHECK(code_of([] { parse_manifest(R"({"patients": [{"patient_id": "a"}, {"patient_id": "b"}], "y": 2})"); }) ==
        ErrorCode::Manifest);
  CHECK(code_of([] {
          parse_manifest(R"({"patients": [{"patient_id": "a", "seeds": {"train": -1}}, {"patient_id": "b"}]})");
        }) == ErrorCode::Manifest);
  CHECK(code_of([] {
          parse_manifest(R"({"patients": [{"patient_id": "a", "t2_perturbation": [1, 2]}, {"patient_id": "b"}]})");
        }) == ErrorCode::Manifest);
  CHECK(code_of([] { parse_manifest("{not json"); }) == ErrorCode::Format);
  CHECK(code_of([] { load_manifest("/nonexistent/manifest.json"); }) == ErrorCode::InputNotFound);
}

TEST_CASE("leave-one-out splits and pools") {
  const std::string text = R"({"defaults": {"phantom": {"dims": [64, 64, 64], "spacing_mm": [4, 4, 4]}},
      "patients": [{"patient_id": "a"}, {"patient_id": "b"}, {"patient_id": "c"}, {"patient_id": "d"}]})";
  const Cohort cohort = build_cohort(parse_manifest(text), 2);
  const auto splits = leave_one_out(cohort);
  REQUIRE(splits.size() == 4);
  for (const auto& s : splits) {
    CHECK(s.pool.size() == 3);
    CHECK(std::find(s.pool.begin(), s.pool.end(), s.target) == s.pool.end());
  }

  CohortDataOptions o;
  o.max_n_drrs = 60;
  o.n_test_sequences = 1;
  o.test_duration_s = 6.0;
  const std::vector<PatientData> data = build_cohort_data(cohort, o);
  for (const auto& target : data) {
    const auto ps = ps_pool(target, 50);
    CHECK(ps.size() == 30);
    for (const auto& s : ps) CHECK(s.patient_id == target.patient_id);
    const auto mp = mp_pool(data, target.patient_id, 50, 30, 1);
    CHECK(mp.size() == 30);
    std::map<std::string, int> per;
    for (const auto& s : mp) {
      CHECK(s.patient_id != target.patient_id);
      CHECK(s.t0 + s.window.span() <= 50);
      ++per[s.patient_id];
    }
    CHECK(per.size() == 3);
    for (const auto& [id, n] : per) CHECK(n == 10);
  }
  CHECK(code_of([&] { mp_pool(data, "a", 50, 200, 1); }) == ErrorCode::Parameter);
  CHECK(data[0].test_t2.session == Session::T2);
  CHECK(data[0].test_t2.norm == data[0].train.norm);
}

TEST_CASE("cohort build is reproducible and redraws infeasible T2 anatomies") {
  const Cohort a = build_cohort(parse_manifest(two_patient_manifest()));
  const Cohort b = build_cohort(parse_manifest(two_patient_manifest()), 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.patients[i].planning == b.patients[i].planning);
    CHECK(a.patients[i].treatment == b.patients[i].treatment);
    CHECK(a.patients[i].perturbation == b.patients[i].perturbation);
  }
  CHECK(code_of([&] { a.index_of("zz"); }) == ErrorCode::Parameter);
}
