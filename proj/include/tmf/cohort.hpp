#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tmf/dataset.hpp"

namespace tmf {

struct PatientSeeds {
  std::uint64_t phantom = 0;
  std::uint64_t train = 0;
  std::uint64_t test = 0;
  std::uint64_t t2 = 0;
  bool operator==(const PatientSeeds&) const = default;
};

struct PatientEntry {
  std::string patient_id;
  PhantomSpec spec;
  PatientSeeds seeds;
  std::optional<T2Perturbation> t2_perturbation;  // drawn from seeds.t2 when absent
};

struct CohortManifest {
  std::vector<PatientEntry> patients;
};

// {"defaults": {"phantom": {...}, "t2_perturbation": ...},
//  "patients": [{"patient_id", "phantom", "seeds", "t2_perturbation"}, ...]}
// Per-patient "phantom" objects are merge-patched onto the defaults. A
// perturbation is either an object or [amplitude_scale, si_shift_mm, tumor_scale].
// Throws Manifest for structural problems (fewer than 2 patients, duplicate
// ids, unknown keys), Format for invalid JSON text.
CohortManifest parse_manifest(std::string_view json_text);
CohortManifest load_manifest(const std::filesystem::path& path);

struct CohortPatient {
  PatientEntry entry;
  PatientPhantom planning;   // T1 anatomy
  PatientPhantom treatment;  // T2 anatomy
  T2Perturbation perturbation;
};

struct Cohort {
  std::vector<CohortPatient> patients;

  std::size_t index_of(const std::string& patient_id) const;
};

// Phantoms for every patient. Sampled T2 perturbations are redrawn (up to 20
// times) when the perturbed tumour leaves the lung.
Cohort build_cohort(const CohortManifest& manifest, unsigned workers = 1);

struct LooSplit {
  std::string target;
  std::vector<std::string> pool;  // every other patient, manifest order
};

std::vector<LooSplit> leave_one_out(const Cohort& cohort);

struct CohortDataOptions {
  std::size_t max_n_drrs = 1000;
  std::size_t n_test_sequences = 10;
  double test_duration_s = 20.0;
  double setup_error_mm = 3.0;  // T2 only
  WindowSpec window;
  RenderOptions render;
  unsigned workers = 1;
};

// Rendered data of one patient: the largest T1 training trace plus T1 and T2
// test sets. T2 frames use the planning crop box and labels the planning
// normalization.
struct PatientData {
  std::string patient_id;
  SessionDataset train;
  SessionDataset test_t1;
  SessionDataset test_t2;
};

// The patient's T1 training trace (seeds.train) and session test sets (seeds.test).
SessionDataset patient_training_set(const CohortPatient& patient, std::size_t n_drrs, const CohortDataOptions& options);
SessionDataset patient_test_set(const CohortPatient& patient, Session session, const CohortDataOptions& options);

std::vector<PatientData> build_cohort_data(const Cohort& cohort, const CohortDataOptions& options);

// Patient-specific pool: the target's windows within its first n_drrs frames.
std::vector<DrrSample> ps_pool(const PatientData& target, std::size_t n_drrs);

// Multi-patient pool for `target`: `count` windows drawn without replacement
// from the other patients' first-n_drrs windows, split as evenly as possible
// across them (earlier patients take the remainder).
std::vector<DrrSample> mp_pool(const std::vector<PatientData>& cohort, const std::string& target,
                               std::size_t n_drrs, std::size_t count, std::uint64_t seed);

}  // namespace tmf
