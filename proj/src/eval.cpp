#include "tmf/eval.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "fmt_double.hpp"
#include "parallel.hpp"
#include "tmf/error.hpp"
#include "tmf/seed.hpp"

namespace tmf {

namespace {

constexpr std::uint64_t kTagInit = 0x696e6974u;
constexpr std::uint64_t kTagTrainSeed = 0x7472736eu;
constexpr std::uint64_t kTagMp = 0x6d70706cu;

void check_lengths(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    fail(ErrorCode::Shape, "prediction has " + std::to_string(pred.size()) + " points, ground truth " +
                               std::to_string(gt.size()) + " (need equal lengths >= 1)");
  }
}

std::vector<Vec3> denormalized(std::span<const Vec3> q, const NormalizationParams& norm) {
  std::vector<Vec3> out;
  out.reserve(q.size());
  for (const Vec3& v : q) out.push_back(denormalize_position(v, norm));
  return out;
}

void check_csv_field(const std::string& s) {
  require(s.find_first_of(",\"\n\r") == std::string::npos, ErrorCode::Parameter,
          "patient id \"" + s + "\" cannot be written to CSV");
}

}  // namespace

double ade(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  check_lengths(pred, gt);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += distance(pred[i], gt[i]);
  return total / static_cast<double>(pred.size());
}

double fde(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  check_lengths(pred, gt);
  return distance(pred.back(), gt.back());
}

std::vector<std::vector<Vec3>> ModelPredictor::predict(std::span<const DrrSample* const> batch) const {
  const Batch<float> b = make_batch<float>(batch, model_.config(), false);
  const ag::Tensor<float> out = model_.predict(b.frames, b.observed);
  const std::size_t T_pred = model_.config().T_pred;
  std::vector<std::vector<Vec3>> preds(batch.size(), std::vector<Vec3>(T_pred));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t t = 0; t < T_pred; ++t) {
      for (int a = 0; a < 3; ++a) preds[i][t][a] = static_cast<double>(out.data()[(i * T_pred + t) * 3 + a]);
    }
  }
  return preds;
}

std::vector<std::vector<Vec3>> PersistencePredictor::predict(std::span<const DrrSample* const> batch) const {
  std::vector<std::vector<Vec3>> preds;
  for (const DrrSample* s : batch) preds.emplace_back(s->window.t_pred, s->observed.back());
  return preds;
}

std::vector<std::vector<Vec3>> OraclePredictor::predict(std::span<const DrrSample* const> batch) const {
  std::vector<std::vector<Vec3>> preds;
  for (const DrrSample* s : batch) preds.push_back(s->targets);
  return preds;
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::PS:
      return "PS";
    case Strategy::MP:
      return "MP";
    default:
      return "none";
  }
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

MetricsReport evaluate(const Predictor& predictor, std::span<const DrrSample> samples, const ReportTags& tags,
                       const EvalOptions& options) {
  require(options.batch_size >= 1, ErrorCode::Parameter, "evaluation batch size must be >= 1");
  MetricsReport report;
  report.tags = tags;
  report.ade_mm.reserve(samples.size());
  report.fde_mm.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += options.batch_size) {
    std::vector<const DrrSample*> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + options.batch_size); ++i) {
      batch.push_back(&samples[i]);
    }
    const auto preds = predictor.predict(batch);
    require(preds.size() == batch.size(), ErrorCode::Contract, "predictor returned the wrong number of forecasts");
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const DrrSample& s = *batch[i];
      std::size_t k = s.targets.size();
      if (options.horizon_steps > 0) k = std::min(k, options.horizon_steps);
      require(preds[i].size() == s.targets.size(), ErrorCode::Shape,
              "forecast has " + std::to_string(preds[i].size()) + " points, expected " +
                  std::to_string(s.targets.size()));
      const auto p_mm = denormalized(std::span<const Vec3>(preds[i]).first(k), s.norm);
      const auto g_mm = denormalized(std::span<const Vec3>(s.targets).first(k), s.norm);
      report.ade_mm.push_back(ade(p_mm, g_mm));
      report.fde_mm.push_back(fde(p_mm, g_mm));
    }
  }
  const Summary a = summarize(report.ade_mm), f = summarize(report.fde_mm);
  report.ade_mean = a.mean;
  report.ade_sd = a.sd;
  report.fde_mean = f.mean;
  report.fde_sd = f.sd;
  return report;
}

MetricsReport evaluate(const ForecastModel<float>& model, const SessionDataset& dataset, const ReportTags& tags,
                       const EvalOptions& options) {
  const ModelConfig& c = model.config();
  if (dataset.window.t_obs != static_cast<std::size_t>(c.T_obs) ||
      dataset.window.t_pred != static_cast<std::size_t>(c.T_pred)) {
    fail(ErrorCode::Contract, "dataset window (" + std::to_string(dataset.window.t_obs) + ", " +
                                  std::to_string(dataset.window.t_pred) + ") does not match the model (" +
                                  std::to_string(c.T_obs) + ", " + std::to_string(c.T_pred) + ")");
  }
  ModelPredictor predictor(model);
  return evaluate(predictor, dataset.samples, tags, options);
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::Parameter,
          "paired t-test needs two lists of equal length >= 2, got " + std::to_string(a.size()) + " and " +
              std::to_string(b.size()));
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const Summary s = summarize(d);
  PairedTTest out;
  out.df = d.size() - 1;
  if (s.sd == 0.0) {
    out.degenerate = true;
    if (s.mean == 0.0) {
      out.t = 0.0;
      out.p = 1.0;
    } else {
      out.t = std::copysign(std::numeric_limits<double>::infinity(), s.mean);
      out.p = 0.0;
    }
  } else {
    out.t = s.mean / (s.sd / std::sqrt(static_cast<double>(d.size())));
    const boost::math::students_t_distribution<double> dist(static_cast<double>(out.df));
    out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  }
  out.significant = out.p < 0.05;
  return out;
}

void SweepConfig::validate() const {
  require(!n_train_grid.empty(), ErrorCode::Parameter, "sweep n_train_grid is empty");
  require(!seeds.empty(), ErrorCode::Parameter, "sweep seeds list is empty");
  require(n_test_sequences >= 1, ErrorCode::Parameter, "sweep needs at least one test sequence");
  require(test_duration_s > 0.0, ErrorCode::Parameter, "test duration must be > 0");
  require(setup_error_mm >= 0.0, ErrorCode::Parameter, "setup error must be >= 0");
  require(threshold_mm >= 0.0, ErrorCode::Parameter, "threshold must be >= 0");
}

ExperimentResult run_strategy_comparison(const std::vector<PatientData>& cohort, const SweepConfig& sweep,
                                         const ModelConfig& model_config, const TrainConfig& train_config,
                                         const SweepOptions& options) {
  sweep.validate();
  model_config.validate();
  train_config.validate();
  require(cohort.size() >= 2, ErrorCode::Manifest, "strategy comparison needs at least 2 patients");

  ExperimentResult result;
  result.n_train_grid = sweep.n_train_grid;
  result.seeds = sweep.seeds;
  std::map<std::string, std::uint64_t> dataset_seed;
  for (const auto& p : cohort) {
    result.patients.push_back(p.patient_id);
    dataset_seed[p.patient_id] = p.train.provenance.seed;
    require(!p.train.sequences.empty(), ErrorCode::Parameter, "patient " + p.patient_id + " has no training data");
    for (std::size_t n : sweep.n_train_grid) {
      require(n <= p.train.sequences.front()->length(), ErrorCode::Parameter,
              "n_train " + std::to_string(n) + " exceeds the " + std::to_string(p.train.sequences.front()->length()) +
                  " rendered DRRs of patient " + p.patient_id);
    }
  }

  for (std::size_t pi = 0; pi < cohort.size(); ++pi) {
    for (std::size_t n : sweep.n_train_grid) {
      for (std::uint64_t seed : sweep.seeds) {
        for (Strategy s : {Strategy::PS, Strategy::MP}) {
          CellResult cell;
          cell.patient_id = cohort[pi].patient_id;
          cell.strategy = s;
          cell.n_train = n;
          cell.seed = seed;
          result.cells.push_back(std::move(cell));
        }
      }
    }
  }

  detail::parallel_for(result.cells.size(), options.workers, [&](std::size_t ci) {
    CellResult& cell = result.cells[ci];
    std::size_t pi = 0;
    while (cohort[pi].patient_id != cell.patient_id) ++pi;
    const PatientData& target = cohort[pi];

    std::vector<DrrSample> pool = ps_pool(target, cell.n_train);
    if (cell.strategy == Strategy::MP) {
      pool = mp_pool(cohort, target.patient_id, cell.n_train, pool.size(),
                     derive_seed(derive_seed(cell.seed, kTagMp, pi), cell.n_train));
    }
    for (const DrrSample& s : pool) {
      cell.training_samples.push_back({s.patient_id, s.session, dataset_seed.at(s.patient_id), s.t0});
    }

    TrainConfig tc = train_config;
    tc.seed = derive_seed(cell.seed, kTagTrainSeed, pi);
    auto model = ForecastModel<float>::init_glorot(model_config, derive_seed(cell.seed, kTagInit, pi));
    TrainResult<float> trained = train(std::move(model), std::span<const DrrSample>(pool), tc);
    cell.history = std::move(trained.history);

    ReportTags tags{cell.patient_id, Session::T1, cell.strategy, cell.n_train, cell.seed};
    cell.t1 = evaluate(trained.model, target.test_t1, tags, options.eval);
    tags.session = Session::T2;
    cell.t2 = evaluate(trained.model, target.test_t2, tags, options.eval);
    if (options.on_cell) options.on_cell(cell);
  });

  result.tests = strategy_tests(result);
  return result;
}

namespace {

// Seed-averaged value per (strategy, n_train, session, patient).
using CellKey = std::tuple<Strategy, std::size_t, Session, std::string>;

std::map<CellKey, std::vector<double>> seed_values(const ExperimentResult& result) {
  std::map<CellKey, std::vector<double>> out;
  for (const CellResult& c : result.cells) {
    for (const auto* r : {&c.t1, &c.t2}) {
      if (*r) out[{c.strategy, c.n_train, (*r)->tags.session, c.patient_id}].push_back((*r)->ade_mean);
    }
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<SessionTest> strategy_tests(const ExperimentResult& result) {
  const auto values = seed_values(result);
  std::vector<SessionTest> tests;
  if (result.patients.size() < 2) return tests;
  for (std::size_t n : result.n_train_grid) {
    for (Session session : {Session::T1, Session::T2}) {
      std::vector<double> ps, mp;
      for (const std::string& p : result.patients) {
        auto a = values.find({Strategy::PS, n, session, p});
        auto b = values.find({Strategy::MP, n, session, p});
        if (a == values.end() || b == values.end()) break;
        ps.push_back(mean_of(a->second));
        mp.push_back(mean_of(b->second));
      }
      if (ps.size() != result.patients.size()) continue;
      tests.push_back({n, session, paired_t_test(ps, mp)});
    }
  }
  return tests;
}

std::size_t check_loocv_exclusion(const ExperimentResult& result) {
  std::size_t checked = 0;
  for (const CellResult& c : result.cells) {
    const std::string cell = std::string(strategy_name(c.strategy)) + " cell (patient " + c.patient_id +
                             ", n_train " + std::to_string(c.n_train) + ", seed " + std::to_string(c.seed) + ")";
    require(!c.training_samples.empty(), ErrorCode::Contract, cell + " has no training provenance");
    for (const SampleRef& s : c.training_samples) {
      if (c.strategy == Strategy::MP && s.patient_id == c.patient_id) {
        fail(ErrorCode::Contract, cell + " was trained on a sample of its evaluation patient (t0 " +
                                      std::to_string(s.t0) + ")");
      }
      if (c.strategy == Strategy::PS && s.patient_id != c.patient_id) {
        fail(ErrorCode::Contract, cell + " was trained on a sample of patient " + s.patient_id);
      }
      ++checked;
    }
  }
  return checked;
}

ErrorDecomposition error_decomposition(const ExperimentResult& result, double threshold_mm) {
  ErrorDecomposition out;
  out.threshold_mm = threshold_mm;
  for (const CellResult& c : result.cells) {
    if (!c.t1 || !c.t2) {
      fail(ErrorCode::Contract, std::string("cell (patient ") + c.patient_id + ", " + strategy_name(c.strategy) +
                                    ", n_train " + std::to_string(c.n_train) + ") lacks " + (c.t1 ? "T2" : "T1") +
                                    " results");
    }
  }
  const auto values = seed_values(result);
  for (Strategy s : {Strategy::PS, Strategy::MP}) {
    for (std::size_t n : result.n_train_grid) {
      DecompositionCount count{s, n, 0, 0, 0};
      for (const std::string& p : result.patients) {
        auto t1 = values.find({s, n, Session::T1, p});
        auto t2 = values.find({s, n, Session::T2, p});
        if (t1 == values.end() || t2 == values.end()) continue;
        DecompositionRow row{p, s, n, mean_of(t1->second), mean_of(t2->second)};
        ++count.n_patients;
        if (row.modeling_error_mm < threshold_mm) ++count.modeling_under;
        if (row.interfractional_error_mm < threshold_mm) ++count.interfractional_under;
        out.rows.push_back(std::move(row));
      }
      out.counts.push_back(count);
    }
  }
  return out;
}

ReportRow report_row(const MetricsReport& r) {
  return {r.tags.patient_id,
          r.tags.strategy,
          r.tags.session,
          r.tags.n_train,
          r.tags.seed,
          r.ade_mm.size(),
          static_cast<float>(r.ade_mean),
          static_cast<float>(r.ade_sd),
          static_cast<float>(r.fde_mean),
          static_cast<float>(r.fde_sd)};
}

std::vector<ReportRow> report_rows(const ExperimentResult& result) {
  std::vector<ReportRow> rows;
  for (const CellResult& c : result.cells) {
    for (const auto* r : {&c.t1, &c.t2}) {
      if (*r) rows.push_back(report_row(**r));
    }
  }
  return rows;
}

std::vector<SummaryRow> summary_rows(std::span<const ReportRow> rows) {
  struct Acc {
    std::vector<double> ade, ade_sd, fde, fde_sd;
  };
  // (strategy, n_train, session) -> patient -> per-seed values, patients in first-seen order.
  std::map<std::tuple<Strategy, std::size_t, Session>, std::vector<std::pair<std::string, Acc>>> groups;
  for (const ReportRow& r : rows) {
    auto& patients = groups[{r.strategy, r.n_train, r.session}];
    auto it = std::find_if(patients.begin(), patients.end(), [&](const auto& p) { return p.first == r.patient_id; });
    if (it == patients.end()) {
      patients.push_back({r.patient_id, {}});
      it = patients.end() - 1;
    }
    it->second.ade.push_back(r.ade_mean);
    it->second.ade_sd.push_back(r.ade_sd);
    it->second.fde.push_back(r.fde_mean);
    it->second.fde_sd.push_back(r.fde_sd);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, patients] : groups) {
    std::vector<double> ade, ade_sd, fde, fde_sd;
    for (const auto& [id, acc] : patients) {
      ade.push_back(mean_of(acc.ade));
      ade_sd.push_back(mean_of(acc.ade_sd));
      fde.push_back(mean_of(acc.fde));
      fde_sd.push_back(mean_of(acc.fde_sd));
    }
    SummaryRow s;
    std::tie(s.strategy, s.n_train, s.session) = key;
    s.n_patients = patients.size();
    const Summary a = summarize(ade), f = summarize(fde);
    s.ade_mean = a.mean;
    s.ade_sd_patients = a.sd;
    s.ade_sd_samples = mean_of(ade_sd);
    s.fde_mean = f.mean;
    s.fde_sd_patients = f.sd;
    s.fde_sd_samples = mean_of(fde_sd);
    out.push_back(s);
  }
  return out;
}

namespace {

constexpr const char* kDetailHeader =
    "patient_id,strategy,session,n_train,seed,n_samples,ade_mean_mm,ade_sd_mm,fde_mean_mm,fde_sd_mm";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename V>
V parse_number(const std::string& s, std::size_t line, const char* column) {
  V value{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), value);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    fail(ErrorCode::Format, "detail CSV line " + std::to_string(line) + ": bad " + column + " \"" + s + "\"");
  }
  return value;
}

}  // namespace

std::string detail_csv(std::span<const ReportRow> rows) {
  std::ostringstream os;
  os << kDetailHeader << '\n';
  for (const ReportRow& r : rows) {
    check_csv_field(r.patient_id);
    os << r.patient_id << ',' << strategy_name(r.strategy) << ',' << session_name(r.session) << ',' << r.n_train
       << ',' << r.seed << ',' << r.n_samples << ',' << format_float9(r.ade_mean) << ',' << format_float9(r.ade_sd)
       << ',' << format_float9(r.fde_mean) << ',' << format_float9(r.fde_sd) << '\n';
  }
  return os.str();
}

std::vector<ReportRow> parse_detail_csv(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line) || line != kDetailHeader) {
    fail(ErrorCode::Format, "detail CSV header mismatch, expected \"" + std::string(kDetailHeader) + "\"");
  }
  std::vector<ReportRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 10) {
      fail(ErrorCode::Format, "detail CSV line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                                  " fields, expected 10");
    }
    ReportRow r;
    r.patient_id = f[0];
    if (f[1] == "PS") {
      r.strategy = Strategy::PS;
    } else if (f[1] == "MP") {
      r.strategy = Strategy::MP;
    } else if (f[1] == "none") {
      r.strategy = Strategy::None;
    } else {
      fail(ErrorCode::Format, "detail CSV line " + std::to_string(line_no) + ": unknown strategy \"" + f[1] + "\"");
    }
    if (f[2] == "T1") {
      r.session = Session::T1;
    } else if (f[2] == "T2") {
      r.session = Session::T2;
    } else {
      fail(ErrorCode::Format, "detail CSV line " + std::to_string(line_no) + ": unknown session \"" + f[2] + "\"");
    }
    r.n_train = parse_number<std::size_t>(f[3], line_no, "n_train");
    r.seed = parse_number<std::uint64_t>(f[4], line_no, "seed");
    r.n_samples = parse_number<std::size_t>(f[5], line_no, "n_samples");
    r.ade_mean = parse_number<float>(f[6], line_no, "ade_mean_mm");
    r.ade_sd = parse_number<float>(f[7], line_no, "ade_sd_mm");
    r.fde_mean = parse_number<float>(f[8], line_no, "fde_mean_mm");
    r.fde_sd = parse_number<float>(f[9], line_no, "fde_sd_mm");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::ostringstream os;
  os << "strategy,n_train,session,n_patients,ade_mean_mm,ade_sd_patients_mm,ade_sd_samples_mm,fde_mean_mm,"
        "fde_sd_patients_mm,fde_sd_samples_mm\n";
  for (const SummaryRow& r : rows) {
    os << strategy_name(r.strategy) << ',' << r.n_train << ',' << session_name(r.session) << ',' << r.n_patients
       << ',' << format_double(r.ade_mean) << ',' << format_double(r.ade_sd_patients) << ','
       << format_double(r.ade_sd_samples) << ',' << format_double(r.fde_mean) << ','
       << format_double(r.fde_sd_patients) << ',' << format_double(r.fde_sd_samples) << '\n';
  }
  return os.str();
}

std::string decomposition_csv(const ErrorDecomposition& d) {
  std::ostringstream os;
  os << "patient_id,strategy,n_train,modeling_error_mm,interfractional_error_mm\n";
  for (const DecompositionRow& r : d.rows) {
    check_csv_field(r.patient_id);
    os << r.patient_id << ',' << strategy_name(r.strategy) << ',' << r.n_train << ','
       << format_double(r.modeling_error_mm) << ',' << format_double(r.interfractional_error_mm) << '\n';
  }
  return os.str();
}

std::string decomposition_counts_csv(const ErrorDecomposition& d) {
  std::ostringstream os;
  os << "strategy,n_train,threshold_mm,n_patients,modeling_under,interfractional_under\n";
  for (const DecompositionCount& c : d.counts) {
    os << strategy_name(c.strategy) << ',' << c.n_train << ',' << format_double(d.threshold_mm) << ','
       << c.n_patients << ',' << c.modeling_under << ',' << c.interfractional_under << '\n';
  }
  return os.str();
}

std::string tests_csv(std::span<const SessionTest> tests) {
  std::ostringstream os;
  os << "n_train,session,metric,df,t,p,significant,degenerate\n";
  for (const SessionTest& t : tests) {
    os << t.n_train << ',' << session_name(t.session) << ",ade," << t.ade.df << ',' << format_double(t.ade.t) << ','
       << format_double(t.ade.p) << ',' << (t.ade.significant ? 1 : 0) << ',' << (t.ade.degenerate ? 1 : 0) << '\n';
  }
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  os << text;
  if (!os) fail(ErrorCode::Io, "failed writing " + path.string());
}

}  // namespace

void write_report(const ExperimentResult& result, const std::filesystem::path& dir, double threshold_mm) {
  std::filesystem::create_directories(dir);
  const auto rows = report_rows(result);
  write_text(dir / "detail.csv", detail_csv(rows));
  write_text(dir / "summary.csv", summary_csv(summary_rows(rows)));
  const ErrorDecomposition d = error_decomposition(result, threshold_mm);
  write_text(dir / "decomposition.csv", decomposition_csv(d));
  write_text(dir / "decomposition_counts.csv", decomposition_counts_csv(d));
  write_text(dir / "tests.csv", tests_csv(result.tests));
}

std::vector<ReportRow> read_report(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::InputNotFound, "cannot open " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_detail_csv(buf.str());
}

}  // namespace tmf
