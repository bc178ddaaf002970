#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "tmf/error.hpp"
#include "tmf/eval.hpp"

using namespace tmf;

namespace {

const SessionDataset& test_set() {
  static const SessionDataset ds = [] {
    TestSetOptions o;
    o.n_sequences = 2;
    o.duration_s = 6.0;
    return build_test_set(generate_phantom(test::small_spec(), 8, "E"), 3, o);
  }();
  return ds;
}

MetricsReport report_of(const std::string& id, Session session, Strategy strategy, std::size_t n,
                        std::uint64_t seed, std::vector<double> ade_values) {
  MetricsReport r;
  r.tags = {id, session, strategy, n, seed};
  r.ade_mm = ade_values;
  r.fde_mm = ade_values;
  const Summary s = summarize(ade_values);
  r.ade_mean = r.fde_mean = s.mean;
  r.ade_sd = r.fde_sd = s.sd;
  return r;
}

ExperimentResult synthetic_result() {
  ExperimentResult r;
  r.patients = {"a", "b", "c"};
  r.n_train_grid = {200, 1000};
  r.seeds = {0, 1};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.5, 4.0);
  for (const auto& p : r.patients) {
    for (std::size_t n : r.n_train_grid) {
      for (std::uint64_t seed : r.seeds) {
        for (Strategy s : {Strategy::PS, Strategy::MP}) {
          CellResult c;
          c.patient_id = p;
          c.strategy = s;
          c.n_train = n;
          c.seed = seed;
          c.t1 = report_of(p, Session::T1, s, n, seed, {u(rng), u(rng), u(rng)});
          c.t2 = report_of(p, Session::T2, s, n, seed, {u(rng), u(rng), u(rng)});
          for (const auto& q : r.patients) {
            const bool include = s == Strategy::PS ? q == p : q != p;
            if (include) c.training_samples.push_back({q, Session::T1, 7, 0});
          }
          r.cells.push_back(std::move(c));
        }
      }
    }
  }
  r.tests = strategy_tests(r);
  return r;
}

}  // namespace

TEST_CASE("ade and fde worked example") {
  const std::vector<Vec3> pred{{0, 0, 0}, {3, 4, 0}};
  const std::vector<Vec3> gt{{0, 0, 0}, {0, 0, 0}};
  CHECK(ade(pred, gt) == 2.5);
  CHECK(fde(pred, gt) == 5.0);
  const std::vector<Vec3> one{{3, 4, 0}};
  const std::vector<Vec3> origin{{0, 0, 0}};
  CHECK(ade(one, origin) == fde(one, origin));
  CHECK_THROWS_AS(ade(pred, origin), Error);
  CHECK_THROWS_AS(fde(std::vector<Vec3>{}, std::vector<Vec3>{}), Error);
}

TEST_CASE("ade and fde match brute force on random pairs") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + trial % 7;
    std::vector<Vec3> p(len), g(len);
    for (std::size_t i = 0; i < len; ++i) {
      p[i] = {n(rng), n(rng), n(rng)};
      g[i] = {n(rng), n(rng), n(rng)};
    }
    double total = 0.0, last = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double dx = p[i][0] - g[i][0], dy = p[i][1] - g[i][1], dz = p[i][2] - g[i][2];
      last = std::sqrt(dx * dx + dy * dy + dz * dz);
      total += last;
    }
    CHECK(std::abs(ade(p, g) - total / static_cast<double>(len)) < 1e-9);
    CHECK(std::abs(fde(p, g) - last) < 1e-9);
  }
}

TEST_CASE("persistence baseline matches a brute-force evaluation in mm") {
  const SessionDataset& ds = test_set();
  REQUIRE(ds.size() == 2 * (30 - 21 + 1));
  const MetricsReport r = evaluate(PersistencePredictor{}, ds.samples, {"E", Session::T1});
  REQUIRE(r.ade_mm.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const DrrSample& s = ds.samples[i];
    const Vec3 last = denormalize_position(s.observed.back(), s.norm);
    double total = 0.0, final_error = 0.0;
    for (const Vec3& t : s.targets) {
      final_error = distance(last, denormalize_position(t, s.norm));
      total += final_error;
    }
    CHECK(std::abs(r.ade_mm[i] - total / 5.0) < 1e-9);
    CHECK(std::abs(r.fde_mm[i] - final_error) < 1e-9);
  }
  const Summary s = summarize(r.ade_mm);
  CHECK(r.ade_mean == s.mean);
  CHECK(r.ade_sd == s.sd);
}

TEST_CASE("the oracle scores zero and horizon 1 makes ade equal fde") {
  const SessionDataset& ds = test_set();
  const MetricsReport oracle = evaluate(OraclePredictor{}, ds.samples, {});
  for (double v : oracle.ade_mm) CHECK(v == 0.0);
  EvalOptions one;
  one.horizon_steps = 1;
  const MetricsReport first = evaluate(PersistencePredictor{}, ds.samples, {}, one);
  for (std::size_t i = 0; i < first.ade_mm.size(); ++i) CHECK(first.ade_mm[i] == first.fde_mm[i]);
}

TEST_CASE("evaluation rejects a model with another window") {
  ModelConfig c = ModelConfig::toy();
  c.T_pred = 4;
  const auto model = ForecastModel<float>::zeros(c);
  try {
    evaluate(model, test_set(), {});
    FAIL("expected a contract error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Contract);
  }
}

TEST_CASE("summarize uses the n - 1 denominator") {
  const std::vector<double> v{1, 2, 3, 4};
  const Summary s = summarize(v);
  CHECK(s.mean == 2.5);
  CHECK(s.sd == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(summarize(std::vector<double>{7.0}).sd == 0.0);
}

TEST_CASE("paired t-test") {
  const std::vector<double> a{2, 4, 6, 8}, b{1, 2, 3, 4};
  const PairedTTest t = paired_t_test(a, b);
  CHECK(t.t == doctest::Approx(3.8730).epsilon(1e-4));
  CHECK(t.df == 3);
  CHECK(t.p == doctest::Approx(0.030466).epsilon(1e-3));
  CHECK(t.significant);
  const PairedTTest zero = paired_t_test(a, a);
  CHECK(zero.degenerate);
  CHECK(zero.t == 0.0);
  CHECK(zero.p == 1.0);
  const std::vector<double> shifted{3, 5, 7, 9};
  const PairedTTest constant = paired_t_test(shifted, a);
  CHECK(constant.degenerate);
  CHECK(std::isinf(constant.t));
  CHECK(constant.t > 0);
  CHECK(constant.p == 0.0);
  CHECK_THROWS_AS(paired_t_test(std::vector<double>{1}, std::vector<double>{2}), Error);
  CHECK_THROWS_AS(paired_t_test(a, std::vector<double>{1, 2}), Error);
}

TEST_CASE("sweep over a two-patient cohort fills every cell") {
  const CohortManifest manifest = parse_manifest(R"({
    "defaults": {"phantom": {"dims": [64, 64, 64], "spacing_mm": [4, 4, 4]}},
    "patients": [{"patient_id": "a", "seeds": {"phantom": 1, "train": 2, "test": 3, "t2": 4}},
                 {"patient_id": "b", "seeds": {"phantom": 5, "train": 6, "test": 7, "t2": 8},
                  "phantom": {"breathing": {"period_s": 3.0}}}]})");
  const Cohort cohort = build_cohort(manifest);
  CohortDataOptions data;
  data.max_n_drrs = 30;
  data.n_test_sequences = 1;
  data.test_duration_s = 5.0;
  const auto patients = build_cohort_data(cohort, data);
  SweepConfig sweep;
  sweep.n_train_grid = {24, 30};
  sweep.seeds = {0, 1};
  sweep.n_test_sequences = 1;
  sweep.test_duration_s = 5.0;
  ModelConfig model;
  model.d_model = 8;
  model.n_heads = 2;
  model.n_layers_enc = 1;
  model.n_layers_dec = 1;
  model.d_ff = 16;
  model.patch_size = 32;
  TrainConfig train = TrainConfig::toy();
  train.epochs = 1;
  train.warmup_epochs = 0;
  std::size_t callbacks = 0;
  SweepOptions options;
  options.on_cell = [&](const CellResult&) { ++callbacks; };
  const ExperimentResult r = run_strategy_comparison(patients, sweep, model, train, options);
  CHECK(r.cells.size() == 2 * 2 * 2 * 2);
  CHECK(callbacks == r.cells.size());
  std::set<std::tuple<std::string, int, std::size_t, std::uint64_t>> keys;
  for (const CellResult& c : r.cells) {
    keys.insert({c.patient_id, int(c.strategy), c.n_train, c.seed});
    CHECK(c.t1.has_value());
    CHECK(c.t2.has_value());
    CHECK(c.history.size() == 1);
    const std::size_t windows = c.n_train - 20;
    CHECK(c.training_samples.size() == windows);
  }
  CHECK(keys.size() == r.cells.size());
  CHECK(check_loocv_exclusion(r) == 2 * 2 * (4 + 10) * 2);
  CHECK(report_rows(r).size() == 2 * r.cells.size());
  CHECK(r.tests.size() == 2 * 2);
}

TEST_CASE("LOOCV check rejects leaked samples") {
  ExperimentResult r = synthetic_result();
  CHECK(check_loocv_exclusion(r) > 0);
  for (CellResult& c : r.cells) {
    if (c.strategy == Strategy::MP) {
      c.training_samples.push_back({c.patient_id, Session::T1, 7, 3});
      break;
    }
  }
  try {
    check_loocv_exclusion(r);
    FAIL("expected a contract error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Contract);
    CHECK(std::string(e.what()).find("MP") != std::string::npos);
  }
  ExperimentResult ps = synthetic_result();
  ps.cells[0].training_samples.push_back({"zzz", Session::T1, 7, 3});
  CHECK_THROWS_AS(check_loocv_exclusion(ps), Error);
}

TEST_CASE("error decomposition averages seeds and counts under the threshold") {
  const ExperimentResult r = synthetic_result();
  const ErrorDecomposition d = error_decomposition(r, 2.0);
  CHECK(d.rows.size() == 2 * 2 * 3);
  for (const DecompositionCount& c : d.counts) {
    std::size_t m = 0, i = 0;
    for (const DecompositionRow& row : d.rows) {
      if (row.strategy != c.strategy || row.n_train != c.n_train) continue;
      double t1 = 0.0, t2 = 0.0;
      for (const CellResult& cell : r.cells) {
        if (cell.patient_id == row.patient_id && cell.strategy == row.strategy && cell.n_train == row.n_train) {
          t1 += cell.t1->ade_mean / 2.0;
          t2 += cell.t2->ade_mean / 2.0;
        }
      }
      CHECK(row.modeling_error_mm == doctest::Approx(t1).epsilon(1e-12));
      CHECK(row.interfractional_error_mm == doctest::Approx(t2).epsilon(1e-12));
      if (row.modeling_error_mm < 2.0) ++m;
      if (row.interfractional_error_mm < 2.0) ++i;
    }
    CHECK(c.n_patients == 3);
    CHECK(c.modeling_under == m);
    CHECK(c.interfractional_under == i);
  }
  for (const DecompositionCount& c : error_decomposition(r, 0.0).counts) {
    CHECK(c.modeling_under == 0);
    CHECK(c.interfractional_under == 0);
  }
  ExperimentResult missing = r;
  missing.cells[3].t2.reset();
  CHECK_THROWS_AS(error_decomposition(missing), Error);
}

TEST_CASE("detail CSV round-trips and the summary can be recomputed") {
  const ExperimentResult r = synthetic_result();
  const auto rows = report_rows(r);
  const std::string text = detail_csv(rows);
  CHECK(text.rfind("patient_id,", 0) == 0);
  const auto parsed = parse_detail_csv(text);
  CHECK(parsed == rows);
  CHECK(detail_csv(parsed) == text);
  CHECK(summary_csv(summary_rows(parsed)) == summary_csv(summary_rows(rows)));
  const auto summary = summary_rows(rows);
  CHECK(summary.size() == 2 * 2 * 2);
  for (const SummaryRow& s : summary) CHECK(s.n_patients == 3);
  const auto dir = test::temp_dir("report");
  write_report(r, dir);
  for (const char* f : {"detail.csv", "summary.csv", "decomposition.csv", "decomposition_counts.csv", "tests.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(read_report(dir / "detail.csv") == rows);
  try {
    parse_detail_csv("patient_id,bogus\n");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
  }
}
