#include "tmf/cohort.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "parallel.hpp"
#include "tmf/error.hpp"
#include "tmf/json_io.hpp"
#include "tmf/seed.hpp"

namespace tmf {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTagT2Draw = 0x74326472u;
constexpr std::uint64_t kTagPool = 0x706f6f6cu;
constexpr std::uint64_t kTagDefaultSeed = 0x64656673u;
constexpr std::uint64_t kTagTestT2 = 0x74657332u;
constexpr int kMaxT2Draws = 20;

[[noreturn]] void manifest_error(const std::string& message) { fail(ErrorCode::Manifest, message); }

T2Perturbation parse_perturbation(const json& j, const std::string& where) {
  T2Perturbation p;
  if (j.is_array()) {
    if (j.size() != 3 || !std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); })) {
      manifest_error(where + ": t2_perturbation array must hold three numbers");
    }
    p.amplitude_scale = j[0].get<double>();
    p.baseline_shift_mm = {0.0, 0.0, j[1].get<double>()};
    p.tumor_scale = j[2].get<double>();
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "amplitude_scale" && it.key() != "baseline_shift_mm" && it.key() != "tumor_scale") {
        manifest_error(where + ": unknown key \"" + it.key() + "\" in t2_perturbation");
      }
    }
    try {
      if (j.contains("amplitude_scale")) p.amplitude_scale = j.at("amplitude_scale").get<double>();
      if (j.contains("tumor_scale")) p.tumor_scale = j.at("tumor_scale").get<double>();
      if (j.contains("baseline_shift_mm")) {
        const json& s = j.at("baseline_shift_mm");
        if (s.is_number()) {
          p.baseline_shift_mm = {0.0, 0.0, s.get<double>()};
        } else {
          p.baseline_shift_mm = s.get<Vec3>();
        }
      }
    } catch (const json::exception& e) {
      manifest_error(where + ": t2_perturbation: " + e.what());
    }
  } else {
    manifest_error(where + ": t2_perturbation must be an object or an array of three numbers");
  }
  if (!(p.amplitude_scale > 0.0) || !(p.tumor_scale > 0.0)) {
    manifest_error(where + ": t2_perturbation scales must be > 0");
  }
  return p;
}

std::uint64_t read_seed(const json& seeds, const char* key, std::uint64_t fallback, const std::string& where) {
  if (!seeds.contains(key)) return fallback;
  const json& v = seeds.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    manifest_error(where + ": seeds." + key + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace

CohortManifest parse_manifest(std::string_view text) {
  const json root = parse_json_text(text, "manifest");
  if (!root.is_object()) manifest_error("manifest must be a JSON object");
  for (auto it = root.begin(); it != root.end(); ++it) {
    if (it.key() != "defaults" && it.key() != "patients") manifest_error("unknown key \"" + it.key() + "\" in manifest");
  }
  json default_phantom = json::object();
  std::optional<json> default_t2;
  if (root.contains("defaults")) {
    const json& d = root.at("defaults");
    if (!d.is_object()) manifest_error("defaults must be an object");
    for (auto it = d.begin(); it != d.end(); ++it) {
      if (it.key() != "phantom" && it.key() != "t2_perturbation") {
        manifest_error("unknown key \"" + it.key() + "\" in defaults");
      }
    }
    if (d.contains("phantom")) default_phantom = d.at("phantom");
    if (d.contains("t2_perturbation")) default_t2 = d.at("t2_perturbation");
  }
  if (!root.contains("patients") || !root.at("patients").is_array()) manifest_error("manifest needs a patients array");
  const json& patients = root.at("patients");
  if (patients.size() < 2) {
    manifest_error("cohort needs at least 2 patients, got " + std::to_string(patients.size()));
  }

  CohortManifest manifest;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const json& p = patients[i];
    const std::string where = "patients[" + std::to_string(i) + "]";
    if (!p.is_object()) manifest_error(where + " must be an object");
    for (auto it = p.begin(); it != p.end(); ++it) {
      if (it.key() != "patient_id" && it.key() != "phantom" && it.key() != "seeds" && it.key() != "t2_perturbation") {
        manifest_error(where + ": unknown key \"" + it.key() + "\"");
      }
    }
    if (!p.contains("patient_id") || !p.at("patient_id").is_string() || p.at("patient_id").get<std::string>().empty()) {
      manifest_error(where + ": patient_id must be a non-empty string");
    }
    PatientEntry entry;
    entry.patient_id = p.at("patient_id").get<std::string>();
    if (!seen.insert(entry.patient_id).second) manifest_error("duplicate patient_id \"" + entry.patient_id + "\"");

    json spec_json = default_phantom;
    if (p.contains("phantom")) spec_json.merge_patch(p.at("phantom"));
    try {
      entry.spec = spec_json.get<PhantomSpec>();
    } catch (const Error& e) {
      manifest_error(where + ": " + e.what());
    }

    const std::uint64_t base = derive_seed(i, kTagDefaultSeed);
    const json seeds = p.contains("seeds") ? p.at("seeds") : json::object();
    if (!seeds.is_object()) manifest_error(where + ": seeds must be an object");
    for (auto it = seeds.begin(); it != seeds.end(); ++it) {
      if (it.key() != "phantom" && it.key() != "train" && it.key() != "test" && it.key() != "t2") {
        manifest_error(where + ": unknown key \"" + it.key() + "\" in seeds");
      }
    }
    entry.seeds.phantom = read_seed(seeds, "phantom", derive_seed(base, 1), where);
    entry.seeds.train = read_seed(seeds, "train", derive_seed(base, 2), where);
    entry.seeds.test = read_seed(seeds, "test", derive_seed(base, 3), where);
    entry.seeds.t2 = read_seed(seeds, "t2", derive_seed(base, 4), where);

    if (p.contains("t2_perturbation")) {
      entry.t2_perturbation = parse_perturbation(p.at("t2_perturbation"), where);
    } else if (default_t2) {
      entry.t2_perturbation = parse_perturbation(*default_t2, "defaults");
    }
    manifest.patients.push_back(std::move(entry));
  }
  return manifest;
}

CohortManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::InputNotFound, "cannot open manifest " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_manifest(buf.str());
}

std::size_t Cohort::index_of(const std::string& patient_id) const {
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (patients[i].entry.patient_id == patient_id) return i;
  }
  fail(ErrorCode::Parameter, "no patient \"" + patient_id + "\" in cohort");
}

Cohort build_cohort(const CohortManifest& manifest, unsigned workers) {
  require(manifest.patients.size() >= 2, ErrorCode::Manifest, "cohort needs at least 2 patients");
  Cohort cohort;
  cohort.patients.resize(manifest.patients.size());
  detail::parallel_for(manifest.patients.size(), workers, [&](std::size_t i) {
    const PatientEntry& e = manifest.patients[i];
    CohortPatient& out = cohort.patients[i];
    out.entry = e;
    out.planning = generate_phantom(e.spec, e.seeds.phantom, e.patient_id);
    if (e.t2_perturbation) {
      out.perturbation = *e.t2_perturbation;
      out.treatment = simulate_t2(out.planning, out.perturbation);
      return;
    }
    for (int attempt = 0;; ++attempt) {
      out.perturbation = sample_t2_perturbation(derive_seed(e.seeds.t2, kTagT2Draw, attempt));
      try {
        out.treatment = simulate_t2(out.planning, out.perturbation);
        return;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::Geometry || attempt + 1 >= kMaxT2Draws) throw;
      }
    }
  });
  return cohort;
}

std::vector<LooSplit> leave_one_out(const Cohort& cohort) {
  std::vector<LooSplit> splits;
  for (const auto& target : cohort.patients) {
    LooSplit s{target.entry.patient_id, {}};
    for (const auto& other : cohort.patients) {
      if (other.entry.patient_id != target.entry.patient_id) s.pool.push_back(other.entry.patient_id);
    }
    splits.push_back(std::move(s));
  }
  return splits;
}

SessionDataset patient_training_set(const CohortPatient& patient, std::size_t n_drrs, const CohortDataOptions& options) {
  TrainingSetOptions train_opts;
  train_opts.window = options.window;
  train_opts.render = options.render;
  train_opts.workers = options.workers;
  return build_training_set(patient.planning, n_drrs, patient.entry.seeds.train, train_opts);
}

SessionDataset patient_test_set(const CohortPatient& patient, Session session, const CohortDataOptions& options) {
  TestSetOptions test_opts;
  test_opts.n_sequences = options.n_test_sequences;
  test_opts.duration_s = options.test_duration_s;
  test_opts.window = options.window;
  test_opts.render = options.render;
  test_opts.workers = options.workers;
  if (session == Session::T1) {
    test_opts.session = Session::T1;
    test_opts.setup_error_mm = 0.0;
    return build_test_set(patient.planning, patient.entry.seeds.test, test_opts);
  }
  test_opts.session = Session::T2;
  test_opts.setup_error_mm = options.setup_error_mm;
  test_opts.reference = normalization_of(patient.planning);
  test_opts.crop = make_crop_box(patient.planning);
  return build_test_set(patient.treatment, derive_seed(patient.entry.seeds.test, kTagTestT2), test_opts);
}

std::vector<PatientData> build_cohort_data(const Cohort& cohort, const CohortDataOptions& options) {
  std::vector<PatientData> out(cohort.patients.size());
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    const CohortPatient& p = cohort.patients[i];
    PatientData& d = out[i];
    d.patient_id = p.entry.patient_id;
    d.train = patient_training_set(p, options.max_n_drrs, options);
    d.test_t1 = patient_test_set(p, Session::T1, options);
    d.test_t2 = patient_test_set(p, Session::T2, options);
  }
  return out;
}

std::vector<DrrSample> ps_pool(const PatientData& target, std::size_t n_drrs) {
  return first_windows(target.train, n_drrs);
}

std::vector<DrrSample> mp_pool(const std::vector<PatientData>& cohort, const std::string& target, std::size_t n_drrs,
                               std::size_t count, std::uint64_t seed) {
  std::vector<const PatientData*> others;
  bool found = false;
  for (const auto& p : cohort) {
    if (p.patient_id == target) {
      found = true;
    } else {
      others.push_back(&p);
    }
  }
  require(found, ErrorCode::Parameter, "no patient \"" + target + "\" in cohort");
  require(!others.empty(), ErrorCode::Manifest, "multi-patient pool needs at least one other patient");

  std::vector<DrrSample> pool;
  pool.reserve(count);
  const std::size_t k = others.size();
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t quota = count / k + (i < count % k ? 1 : 0);
    std::vector<DrrSample> windows = first_windows(others[i]->train, n_drrs);
    require(quota <= windows.size(), ErrorCode::Parameter,
            "patient " + others[i]->patient_id + " has " + std::to_string(windows.size()) +
                " windows, multi-patient pool needs " + std::to_string(quota));
    std::mt19937_64 rng(derive_seed(seed, kTagPool, i));
    std::shuffle(windows.begin(), windows.end(), rng);
    pool.insert(pool.end(), windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(quota));
  }
  return pool;
}

}  // namespace tmf
