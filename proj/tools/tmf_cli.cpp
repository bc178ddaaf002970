// tmf: command-line front end over the C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "tmf/tmf.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitGradcheck = 20;

// Exit code per status; documented in README.md.
int exit_code(tmf_status s) {
  switch (s) {
    case TMF_OK: return 0;
    case TMF_ERR_INPUT_NOT_FOUND: return 3;
    case TMF_ERR_FORMAT: return 4;
    case TMF_ERR_PARAMETER: return 5;
    case TMF_ERR_GEOMETRY: return 6;
    case TMF_ERR_SHAPE: return 7;
    case TMF_ERR_NUMERIC: return 8;
    case TMF_ERR_IO: return 9;
    case TMF_ERR_CONFIG_MISMATCH: return 10;
    case TMF_ERR_MANIFEST: return 11;
    case TMF_ERR_CONTRACT: return 12;
    case TMF_ERR_DEGENERATE_INPUT: return 13;
    case TMF_ERR_INTERNAL: return 1;
  }
  return 1;
}

struct Failure {
  tmf_status status;
  std::string message;
};

void check(tmf_status s) {
  if (s != TMF_OK) throw Failure{s, tmf_last_error()};
}

[[noreturn]] void fail(tmf_status s, const std::string& message) { throw Failure{s, message}; }

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (p != nullptr) Free(p);
  }
  T** out() { return &p; }
  T* get() const { return p; }
};

using Config = Handle<tmf_config, tmf_config_free>;
using Phantom = Handle<tmf_phantom, tmf_phantom_free>;
using Dataset = Handle<tmf_dataset, tmf_dataset_free>;
using Model = Handle<tmf_model, tmf_model_free>;
using Cohort = Handle<tmf_cohort, tmf_cohort_free>;
using Experiment = Handle<tmf_experiment, tmf_experiment_free>;

std::string take(char* s) {
  std::string out(s);
  tmf_string_free(s);
  return out;
}

std::string read_text(const std::string& path, const char* what) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(TMF_ERR_INPUT_NOT_FOUND, std::string("cannot open ") + what + " " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) fail(TMF_ERR_IO, "cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(TMF_ERR_IO, "cannot create directory " + dir.string() + ": " + ec.message());
}

// 64-bit mix for sub-seeds derived from --seed.
std::uint64_t sub_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t x = base ^ (tag * 0x9e3779b97f4a7c15ull);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  unsigned workers = 1;
  int epochs = 0;
  bool toy = false;
};

struct Args {
  Common c;
  std::string manifest;
  std::string patient;
  std::string phantom_spec;
  std::string dataset;
  std::string checkpoint;
  std::string detail;
  std::string session = "T1";
  std::string kind = "train";
  std::size_t n_drrs = 220;
  std::vector<std::size_t> n_drrs_grid;
  std::size_t n_frames = 100;
  std::size_t n_sequences = 10;
  double duration_s = 20.0;
  double setup_error_mm = 3.0;
  double tolerance = 1e-4;
  bool quiet = false;
};

void load_config(const Common& c, Config& cfg) {
  std::string text;
  if (!c.config_path.empty()) text = read_text(c.config_path, "config");
  check(tmf_config_create(c.config_path.empty() ? nullptr : text.c_str(), c.toy ? 1 : 0, cfg.out()));
  if (c.epochs > 0) check(tmf_config_set_epochs(cfg.get(), c.epochs));
  if (c.seed_given) check(tmf_config_set_seed(cfg.get(), c.seed));
}

json config_json(const Config& cfg) {
  char* s = nullptr;
  check(tmf_config_to_json(cfg.get(), &s));
  return json::parse(take(s));
}

void write_provenance(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                      const Common& c, json extra) {
  json j = {{"tool", "tmf"},
            {"version", tmf_version()},
            {"command", command},
            {"argv", argv},
            {"seed", c.seed},
            {"workers", c.workers}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(dir / "provenance.json", j.dump(2) + "\n");
}

tmf_session parse_session(const std::string& s) {
  if (s == "T1") return TMF_SESSION_T1;
  if (s == "T2") return TMF_SESSION_T2;
  fail(TMF_ERR_PARAMETER, "session must be T1 or T2, got " + s);
}

void print_epoch(int epoch, double loss, double lr, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::printf("epoch %d loss %.6g lr %.6g\n", epoch, loss, lr);
  std::fflush(stdout);
}

void print_cell(const char* patient, const char* strategy, size_t n_train, uint64_t seed, double t1, double t2,
                void* user) {
  if (*static_cast<bool*>(user)) return;
  std::printf("cell %s %s n=%zu seed=%llu T1 ADE %.4f T2 ADE %.4f\n", patient, strategy, n_train,
              static_cast<unsigned long long>(seed), t1, t2);
  std::fflush(stdout);
}

void run_gen_cohort(const Args& a, const std::vector<std::string>& argv) {
  Cohort cohort;
  check(tmf_cohort_load(a.manifest.c_str(), a.c.workers, cohort.out()));
  const fs::path dir(a.c.out);
  make_dir(dir);
  char* desc = nullptr;
  check(tmf_cohort_describe(cohort.get(), &desc));
  write_text(dir / "cohort.json", take(desc) + "\n");
  check(tmf_cohort_write_projections(cohort.get(), dir.string().c_str()));
  write_provenance(dir, "gen-cohort", argv, a.c, {{"manifest", a.manifest}});
  std::size_t n = 0;
  check(tmf_cohort_patient_count(cohort.get(), &n));
  std::printf("%zu patients written to %s\n", n, dir.string().c_str());
}

void load_phantom(const Args& a, Phantom& ph, Cohort& cohort, tmf_session session) {
  if (!a.manifest.empty()) {
    if (a.patient.empty()) fail(TMF_ERR_PARAMETER, "--manifest needs --patient");
    check(tmf_cohort_load(a.manifest.c_str(), a.c.workers, cohort.out()));
    check(tmf_cohort_phantom(cohort.get(), a.patient.c_str(), session, ph.out()));
    return;
  }
  std::string spec;
  if (!a.phantom_spec.empty()) spec = read_text(a.phantom_spec, "phantom spec");
  const std::string id = a.patient.empty() ? "P0" : a.patient;
  check(tmf_phantom_create(a.phantom_spec.empty() ? nullptr : spec.c_str(), a.c.seed, id.c_str(), ph.out()));
}

void run_render(const Args& a, const std::vector<std::string>& argv) {
  Phantom ph;
  Cohort cohort;
  load_phantom(a, ph, cohort, parse_session(a.session));
  const fs::path dir(a.c.out);
  make_dir(dir);
  check(tmf_phantom_render(ph.get(), a.n_frames, sub_seed(a.c.seed, 1), dir.string().c_str()));
  char* desc = nullptr;
  check(tmf_phantom_describe(ph.get(), &desc));
  write_text(dir / "phantom.json", take(desc) + "\n");
  write_provenance(dir, "render", argv, a.c,
                   {{"manifest", a.manifest}, {"patient", a.patient}, {"phantom_spec", a.phantom_spec},
                    {"session", a.session}, {"n_frames", a.n_frames}});
  std::printf("%zu frames written to %s\n", a.n_frames, dir.string().c_str());
}

void run_build_dataset(const Args& a, const std::vector<std::string>& argv) {
  Config cfg;
  load_config(a.c, cfg);
  const tmf_session session = parse_session(a.session);
  const bool test = a.kind == "test";
  if (!test && a.kind != "train") fail(TMF_ERR_PARAMETER, "--kind must be train or test");
  Dataset ds;
  if (!a.manifest.empty()) {
    if (a.patient.empty()) fail(TMF_ERR_PARAMETER, "--manifest needs --patient");
    Cohort cohort;
    check(tmf_cohort_load(a.manifest.c_str(), a.c.workers, cohort.out()));
    check(tmf_cohort_dataset(cohort.get(), a.patient.c_str(), cfg.get(), session, test ? 1 : 0, a.n_drrs,
                             a.c.workers, ds.out()));
  } else {
    Phantom ph;
    Cohort unused;
    load_phantom(a, ph, unused, TMF_SESSION_T1);
    if (test) {
      check(tmf_dataset_build_test(ph.get(), cfg.get(), session, a.n_sequences, a.duration_s, a.setup_error_mm,
                                   sub_seed(a.c.seed, 3), sub_seed(a.c.seed, 4), a.c.workers, ds.out()));
    } else {
      if (session != TMF_SESSION_T1) fail(TMF_ERR_PARAMETER, "training sets exist for T1 only");
      check(tmf_dataset_build_train(ph.get(), cfg.get(), a.n_drrs, sub_seed(a.c.seed, 2), a.c.workers, ds.out()));
    }
  }
  const fs::path dir(a.c.out);
  make_dir(dir);
  const fs::path file = dir / "dataset.tmfd";
  check(tmf_dataset_save(ds.get(), file.string().c_str()));
  char* desc = nullptr;
  check(tmf_dataset_describe(ds.get(), &desc));
  const std::string d = take(desc);
  write_provenance(dir, "build-dataset", argv, a.c,
                   {{"manifest", a.manifest}, {"patient", a.patient}, {"phantom_spec", a.phantom_spec},
                    {"kind", a.kind}, {"session", a.session}, {"n_drrs", a.n_drrs},
                    {"n_sequences", a.n_sequences}, {"duration_s", a.duration_s},
                    {"setup_error_mm", a.setup_error_mm}, {"config", config_json(cfg)},
                    {"dataset", json::parse(d)}});
  std::size_t n = 0;
  check(tmf_dataset_sample_count(ds.get(), &n));
  std::printf("%zu samples written to %s\n", n, file.string().c_str());
}

void run_train(const Args& a, const std::vector<std::string>& argv) {
  Config cfg;
  load_config(a.c, cfg);
  Dataset ds;
  check(tmf_dataset_load(a.dataset.c_str(), ds.out()));
  Model model;
  if (!a.checkpoint.empty()) {
    check(tmf_model_load(a.checkpoint.c_str(), cfg.get(), model.out()));
  } else {
    check(tmf_model_create(cfg.get(), sub_seed(a.c.seed, 5), model.out()));
  }
  const fs::path dir(a.c.out);
  make_dir(dir);
  write_provenance(dir, "train", argv, a.c,
                   {{"dataset", a.dataset}, {"init_checkpoint", a.checkpoint}, {"config", config_json(cfg)}});
  bool quiet = a.quiet;
  check(tmf_train(model.get(), ds.get(), cfg.get(), dir.string().c_str(), print_epoch, &quiet));
  std::printf("checkpoints and history written to %s\n", dir.string().c_str());
}

void run_eval(const Args& a, const std::vector<std::string>& argv) {
  Dataset ds;
  check(tmf_dataset_load(a.dataset.c_str(), ds.out()));
  Model model;
  check(tmf_model_load(a.checkpoint.c_str(), nullptr, model.out()));
  const fs::path dir(a.c.out);
  make_dir(dir);
  double ade = 0.0;
  double fde = 0.0;
  check(tmf_evaluate(model.get(), ds.get(), dir.string().c_str(), &ade, &fde));
  write_provenance(dir, "eval", argv, a.c, {{"dataset", a.dataset}, {"checkpoint", a.checkpoint}});
  std::printf("ADE %.6f mm FDE %.6f mm\n", ade, fde);
}

void run_sweep(const Args& a, const std::vector<std::string>& argv) {
  Config cfg;
  load_config(a.c, cfg);
  if (!a.n_drrs_grid.empty()) check(tmf_config_set_sweep(cfg.get(), a.n_drrs_grid.data(), a.n_drrs_grid.size(), nullptr, 0));
  if (a.c.seed_given) {
    json j = config_json(cfg);
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < j["sweep"]["seeds"].size(); ++k) seeds.push_back(sub_seed(a.c.seed, 100 + k));
    check(tmf_config_set_sweep(cfg.get(), nullptr, 0, seeds.data(), seeds.size()));
  }
  Cohort cohort;
  check(tmf_cohort_load(a.manifest.c_str(), a.c.workers, cohort.out()));
  const fs::path dir(a.c.out);
  make_dir(dir);
  write_provenance(dir, "sweep", argv, a.c, {{"manifest", a.manifest}, {"config", config_json(cfg)}});
  Experiment exp;
  bool quiet = a.quiet;
  check(tmf_sweep_run(cohort.get(), cfg.get(), a.c.workers, print_cell, &quiet, exp.out()));
  std::size_t checked = 0;
  check(tmf_experiment_check_loocv(exp.get(), &checked));
  check(tmf_experiment_write_report(exp.get(), dir.string().c_str()));
  std::size_t rows = 0;
  check(tmf_experiment_row_count(exp.get(), &rows));
  std::printf("%zu report rows written to %s; leave-one-out exclusion verified over %zu training samples\n", rows,
              dir.string().c_str(), checked);
}

int run_gradcheck(const Args& a, const std::vector<std::string>& argv) {
  Config cfg;
  const bool custom = !a.c.config_path.empty() || a.c.toy;
  if (custom) load_config(a.c, cfg);
  double err = 0.0;
  check(tmf_gradcheck(custom ? cfg.get() : nullptr, a.c.seed, &err));
  if (!a.c.out.empty()) {
    const fs::path dir(a.c.out);
    make_dir(dir);
    write_provenance(dir, "gradcheck", argv, a.c, {{"max_rel_error", err}, {"tolerance", a.tolerance}});
  }
  std::printf("max relative error %.3e (tolerance %.1e)\n", err, a.tolerance);
  if (!(err < a.tolerance)) {
    std::fprintf(stderr, "error: gradcheck-failed: max relative error %.3e exceeds %.1e\n", err, a.tolerance);
    return kExitGradcheck;
  }
  return 0;
}

void run_report(const Args& a, const std::vector<std::string>& argv) {
  const fs::path dir(a.c.out);
  make_dir(dir);
  const fs::path summary = dir / "summary.csv";
  check(tmf_report_summarize(a.detail.c_str(), summary.string().c_str()));
  write_provenance(dir, "report", argv, a.c, {{"detail", a.detail}});
  std::printf("summary written to %s\n", summary.string().c_str());
}

void add_common(CLI::App* sub, Common& c, bool needs_out = true) {
  sub->add_option("--config", c.config_path, "JSON config with model/train/sweep sections");
  sub->add_option_function<std::uint64_t>("--seed", [&c](const std::uint64_t& s) {
    c.seed = s;
    c.seed_given = true;
  }, "Global seed");
  auto* out = sub->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  sub->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--epochs", c.epochs, "Override train.epochs")->check(CLI::PositiveNumber);
  sub->add_flag("--toy", c.toy, "Start from the small preset model and training config");
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  std::vector<std::string> args(argv, argv + argc);
  Args a;
  CLI::App app{"Tumour-motion forecasting toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tmf_version()));

  auto* gen = app.add_subcommand("gen-cohort", "Manifest -> phantoms, cohort.json and projections");
  add_common(gen, a.c);
  gen->add_option("--manifest", a.manifest, "Cohort manifest JSON")->required();

  auto* render = app.add_subcommand("render", "Phantom -> DRR sequence dump (PGM frames + positions.csv)");
  add_common(render, a.c);
  render->add_option("--manifest", a.manifest, "Cohort manifest JSON (with --patient)");
  render->add_option("--patient", a.patient, "Patient id");
  render->add_option("--phantom", a.phantom_spec, "Phantom spec JSON");
  render->add_option("--session", a.session, "T1 or T2 (manifest patients)");
  render->add_option("--n-frames", a.n_frames, "Frames to render")->check(CLI::PositiveNumber);

  auto* build = app.add_subcommand("build-dataset", "Phantom -> .tmfd dataset");
  add_common(build, a.c);
  build->add_option("--manifest", a.manifest, "Cohort manifest JSON (with --patient)");
  build->add_option("--patient", a.patient, "Patient id");
  build->add_option("--phantom", a.phantom_spec, "Phantom spec JSON");
  build->add_option("--kind", a.kind, "train or test");
  build->add_option("--session", a.session, "T1 or T2");
  build->add_option("--n-drrs", a.n_drrs, "Training trace length in frames");
  build->add_option("--n-sequences", a.n_sequences, "Test sequences");
  build->add_option("--duration", a.duration_s, "Test sequence duration in seconds");
  build->add_option("--setup-error", a.setup_error_mm, "T2 setup error half-range in mm");

  auto* train = app.add_subcommand("train", "Dataset + config -> checkpoints + history");
  add_common(train, a.c);
  train->add_option("--dataset", a.dataset, ".tmfd training set")->required();
  train->add_option("--checkpoint", a.checkpoint, "Initial TMCK checkpoint");
  train->add_flag("--quiet", a.quiet, "No per-epoch output");

  auto* eval = app.add_subcommand("eval", "Checkpoint + dataset -> ADE/FDE report");
  add_common(eval, a.c);
  eval->add_option("--dataset", a.dataset, ".tmfd test set")->required();
  eval->add_option("--checkpoint", a.checkpoint, "TMCK checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep", "Cohort -> PS vs MP leave-one-out grid");
  add_common(sweep, a.c);
  sweep->add_option("--manifest", a.manifest, "Cohort manifest JSON")->required();
  sweep->add_option("--n-drrs", a.n_drrs_grid, "Override the n_train grid");
  sweep->add_flag("--quiet", a.quiet, "No per-cell output");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference audit of the forecaster gradients");
  add_common(grad, a.c, false);
  grad->add_option("--tolerance", a.tolerance, "Maximum relative error");

  auto* report = app.add_subcommand("report", "detail.csv -> summary.csv");
  add_common(report, a.c);
  report->add_option("--detail", a.detail, "detail.csv from a sweep")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::fprintf(stderr, "error: usage: %s\n", msg.c_str());
    return kExitUsage;
  }

  try {
    if (*gen) run_gen_cohort(a, args);
    if (*render) run_render(a, args);
    if (*build) run_build_dataset(a, args);
    if (*train) run_train(a, args);
    if (*eval) run_eval(a, args);
    if (*sweep) run_sweep(a, args);
    if (*grad) return run_gradcheck(a, args);
    if (*report) run_report(a, args);
  } catch (const Failure& f) {
    std::string msg = f.message;
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::fprintf(stderr, "error: %s: %s\n", tmf_status_category(f.status), msg.c_str());
    return exit_code(f.status);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
