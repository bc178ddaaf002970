#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmf/cohort.hpp"
#include "tmf/dataset.hpp"
#include "tmf/model.hpp"
#include "tmf/train.hpp"

namespace tmf {

// Mean Euclidean distance over steps. Throws Shape on length mismatch or empty input.
double ade(std::span<const Vec3> pred, std::span<const Vec3> gt);
// Euclidean distance at the final step.
double fde(std::span<const Vec3> pred, std::span<const Vec3> gt);

// Maps samples to normalized forecasts (t_pred points each).
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<std::vector<Vec3>> predict(std::span<const DrrSample* const> batch) const = 0;
};

// Autoregressive model inference; never reads sample targets.
class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(const ForecastModel<float>& model) : model_(model) {}
  std::vector<std::vector<Vec3>> predict(std::span<const DrrSample* const> batch) const override;

 private:
  const ForecastModel<float>& model_;
};

// Repeats the last observed position.
class PersistencePredictor : public Predictor {
 public:
  std::vector<std::vector<Vec3>> predict(std::span<const DrrSample* const> batch) const override;
};

// Emits the ground-truth targets; a metric oracle for tests.
class OraclePredictor : public Predictor {
 public:
  std::vector<std::vector<Vec3>> predict(std::span<const DrrSample* const> batch) const override;
};

enum class Strategy : std::uint8_t { None = 0, PS = 1, MP = 2 };
const char* strategy_name(Strategy s);

struct ReportTags {
  std::string patient_id;
  Session session = Session::T1;
  Strategy strategy = Strategy::None;
  std::size_t n_train = 0;
  std::uint64_t seed = 0;
  bool operator==(const ReportTags&) const = default;
};

struct MetricsReport {
  ReportTags tags;
  std::vector<double> ade_mm;  // per sample
  std::vector<double> fde_mm;
  double ade_mean = 0.0;
  double ade_sd = 0.0;  // sample SD over samples (n - 1)
  double fde_mean = 0.0;
  double fde_sd = 0.0;
};

struct EvalOptions {
  std::size_t batch_size = 32;
  // Score only the first k forecast steps; 0 scores all (k = 1 is the 200 ms mode).
  std::size_t horizon_steps = 0;
};

// Forecasts are denormalized with each sample's NormalizationParams before scoring.
MetricsReport evaluate(const Predictor& predictor, std::span<const DrrSample> samples, const ReportTags& tags,
                       const EvalOptions& options = {});
// Throws Contract when the dataset window does not match the model.
MetricsReport evaluate(const ForecastModel<float>& model, const SessionDataset& dataset, const ReportTags& tags,
                       const EvalOptions& options = {});

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator; 0 for a single value
};
Summary summarize(std::span<const double> values);

struct PairedTTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
  bool significant = false;  // p < 0.05
  bool degenerate = false;   // zero variance of the differences
};

// Two-sided paired t-test on a - b. Zero-variance differences give t = 0,
// p = 1 for a zero mean and t = +-inf, p = 0 otherwise; both set `degenerate`.
// Throws Parameter unless both lists have the same length >= 2.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

struct SampleRef {
  std::string patient_id;
  Session session = Session::T1;
  std::uint64_t dataset_seed = 0;
  std::size_t t0 = 0;
  bool operator==(const SampleRef&) const = default;
};

struct CellResult {
  std::string patient_id;  // evaluation patient
  Strategy strategy = Strategy::PS;
  std::size_t n_train = 0;
  std::uint64_t seed = 0;
  std::optional<MetricsReport> t1;
  std::optional<MetricsReport> t2;
  std::vector<SampleRef> training_samples;  // every sample the cell's model was trained on
  std::vector<EpochRecord> history;
};

struct SessionTest {
  std::size_t n_train = 0;
  Session session = Session::T1;
  PairedTTest ade;  // per-patient PS vs MP, seeds averaged
};

struct ExperimentResult {
  std::vector<std::string> patients;
  std::vector<std::size_t> n_train_grid;
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;  // sorted by (patient order, n_train, seed, strategy)
  std::vector<SessionTest> tests;
};

struct SweepConfig {
  std::vector<std::size_t> n_train_grid{200, 500, 1000, 2500};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t n_test_sequences = 10;
  double test_duration_s = 20.0;
  double setup_error_mm = 3.0;
  double threshold_mm = 2.0;

  void validate() const;
};

struct SweepOptions {
  unsigned workers = 1;
  EvalOptions eval;
  std::function<void(const CellResult&)> on_cell;
};

// For every target patient, n_train and seed: a PS model on the target's own
// first-n_train trace and an MP model on an equal-size pool from the other
// patients, both evaluated on the target's T1 and T2 test sets.
ExperimentResult run_strategy_comparison(const std::vector<PatientData>& cohort, const SweepConfig& sweep,
                                         const ModelConfig& model_config, const TrainConfig& train_config,
                                         const SweepOptions& options = {});

// Paired PS-vs-MP tests per (n_train, session) over patients.
std::vector<SessionTest> strategy_tests(const ExperimentResult& result);

// Throws Contract naming the cell when an MP cell's training provenance
// contains a sample of its evaluation patient, or a PS cell's contains
// anyone else's. Returns the number of samples checked.
std::size_t check_loocv_exclusion(const ExperimentResult& result);

struct DecompositionRow {
  std::string patient_id;
  Strategy strategy = Strategy::PS;
  std::size_t n_train = 0;
  double modeling_error_mm = 0.0;         // T1 ADE, averaged over seeds
  double interfractional_error_mm = 0.0;  // T2 ADE, averaged over seeds
};

struct DecompositionCount {
  Strategy strategy = Strategy::PS;
  std::size_t n_train = 0;
  std::size_t n_patients = 0;
  std::size_t modeling_under = 0;  // patients with error < threshold
  std::size_t interfractional_under = 0;
};

struct ErrorDecomposition {
  double threshold_mm = 2.0;
  std::vector<DecompositionRow> rows;
  std::vector<DecompositionCount> counts;
};

// Throws Contract when a cell lacks either session.
ErrorDecomposition error_decomposition(const ExperimentResult& result, double threshold_mm = 2.0);

// One detail row per (patient, strategy, session, n_train, seed). Metric values
// are stored as float and written with nine significant digits.
struct ReportRow {
  std::string patient_id;
  Strategy strategy = Strategy::None;
  Session session = Session::T1;
  std::size_t n_train = 0;
  std::uint64_t seed = 0;
  std::size_t n_samples = 0;
  float ade_mean = 0.0f;
  float ade_sd = 0.0f;
  float fde_mean = 0.0f;
  float fde_sd = 0.0f;
  bool operator==(const ReportRow&) const = default;
};

ReportRow report_row(const MetricsReport& report);
std::vector<ReportRow> report_rows(const ExperimentResult& result);

// Per (strategy, n_train, session): patient means of seed-averaged ADE/FDE,
// inter-patient SD and the mean inter-sample SD.
struct SummaryRow {
  Strategy strategy = Strategy::None;
  std::size_t n_train = 0;
  Session session = Session::T1;
  std::size_t n_patients = 0;
  double ade_mean = 0.0;
  double ade_sd_patients = 0.0;
  double ade_sd_samples = 0.0;
  double fde_mean = 0.0;
  double fde_sd_patients = 0.0;
  double fde_sd_samples = 0.0;
};

std::vector<SummaryRow> summary_rows(std::span<const ReportRow> rows);

std::string detail_csv(std::span<const ReportRow> rows);
std::vector<ReportRow> parse_detail_csv(std::string_view text);
std::string summary_csv(std::span<const SummaryRow> rows);
std::string decomposition_csv(const ErrorDecomposition& decomposition);
std::string decomposition_counts_csv(const ErrorDecomposition& decomposition);
std::string tests_csv(std::span<const SessionTest> tests);

// Writes detail.csv, summary.csv, decomposition.csv, decomposition_counts.csv
// and tests.csv into `dir`.
void write_report(const ExperimentResult& result, const std::filesystem::path& dir, double threshold_mm = 2.0);
std::vector<ReportRow> read_report(const std::filesystem::path& detail_csv_path);

}  // namespace tmf
