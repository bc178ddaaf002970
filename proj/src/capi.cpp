#include "tmf/tmf.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <random>
#include <sstream>
#include <string>

#include "fmt_double.hpp"
#include "tmf/cohort.hpp"
#include "tmf/error.hpp"
#include "tmf/eval.hpp"
#include "tmf/json_io.hpp"
#include "tmf/model.hpp"
#include "tmf/seed.hpp"
#include "tmf/train.hpp"

using nlohmann::json;

struct tmf_config {
  tmf::ModelConfig model;
  tmf::TrainConfig train;
  tmf::SweepConfig sweep;
};

struct tmf_phantom {
  tmf::PatientPhantom phantom;
};

struct tmf_dataset {
  tmf::SessionDataset dataset;
};

struct tmf_model {
  tmf::ForecastModel<float> model;
};

struct tmf_cohort {
  tmf::Cohort cohort;
};

struct tmf_experiment {
  tmf::ExperimentResult result;
  double threshold_mm = 2.0;
};

namespace {

thread_local std::string g_last_error;

tmf_status to_status(tmf::ErrorCode code) {
  switch (code) {
    case tmf::ErrorCode::Parameter: return TMF_ERR_PARAMETER;
    case tmf::ErrorCode::Geometry: return TMF_ERR_GEOMETRY;
    case tmf::ErrorCode::Shape: return TMF_ERR_SHAPE;
    case tmf::ErrorCode::Numeric: return TMF_ERR_NUMERIC;
    case tmf::ErrorCode::Format: return TMF_ERR_FORMAT;
    case tmf::ErrorCode::ConfigMismatch: return TMF_ERR_CONFIG_MISMATCH;
    case tmf::ErrorCode::Manifest: return TMF_ERR_MANIFEST;
    case tmf::ErrorCode::Contract: return TMF_ERR_CONTRACT;
    case tmf::ErrorCode::Io: return TMF_ERR_IO;
    case tmf::ErrorCode::InputNotFound: return TMF_ERR_INPUT_NOT_FOUND;
    case tmf::ErrorCode::DegenerateInput: return TMF_ERR_DEGENERATE_INPUT;
    case tmf::ErrorCode::Internal: return TMF_ERR_INTERNAL;
  }
  return TMF_ERR_INTERNAL;
}

tmf_status set_error(tmf_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename Fn>
tmf_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return TMF_OK;
  } catch (const tmf::Error& e) {
    return set_error(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(TMF_ERR_INTERNAL, "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(TMF_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return set_error(TMF_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(TMF_ERR_INTERNAL, "unknown exception");
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) tmf::fail(tmf::ErrorCode::Parameter, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) tmf::fail(tmf::ErrorCode::Io, "cannot open " + path.string() + " for writing");
  os << text;
  if (!os) tmf::fail(tmf::ErrorCode::Io, "write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) tmf::fail(tmf::ErrorCode::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

tmf::WindowSpec window_of(const tmf::ModelConfig& c) {
  return {static_cast<std::size_t>(c.T_obs), static_cast<std::size_t>(c.T_pred)};
}

tmf::ModelConfig model_or_default(const tmf_config* config) {
  return config != nullptr ? config->model : tmf::ModelConfig{};
}

tmf::RenderOptions render_of(const tmf::ModelConfig& c) {
  tmf::RenderOptions r;
  r.out_size = c.image_size;
  return r;
}

tmf::CohortDataOptions data_options(const tmf_config& config, unsigned workers) {
  const tmf::SweepConfig& sweep = config.sweep;
  tmf::CohortDataOptions o;
  o.max_n_drrs = *std::max_element(sweep.n_train_grid.begin(), sweep.n_train_grid.end());
  o.n_test_sequences = sweep.n_test_sequences;
  o.test_duration_s = sweep.test_duration_s;
  o.setup_error_mm = sweep.setup_error_mm;
  o.window = window_of(config.model);
  o.render = render_of(config.model);
  o.workers = workers;
  return o;
}

json dataset_json(const tmf::SessionDataset& d) {
  return {{"patient_id", d.patient_id},
          {"session", tmf::session_name(d.session)},
          {"n_sequences", d.sequences.size()},
          {"n_samples", d.samples.size()},
          {"t_obs", d.window.t_obs},
          {"t_pred", d.window.t_pred},
          {"spec_hash", d.provenance.spec_hash},
          {"seed", d.provenance.seed},
          {"p_ref_mm", d.norm.p_ref},
          {"amplitudes_mm", d.norm.amplitudes}};
}

tmf::DrrFrame image_frame(const std::vector<float>& values, int size) {
  tmf::DrrFrame f;
  f.width = size;
  f.height = size;
  f.values.assign(values.begin(), values.end());
  return f;
}

}  // namespace

extern "C" {

const char* tmf_version(void) { return "1.0.0"; }

const char* tmf_status_category(tmf_status status) {
  switch (status) {
    case TMF_OK: return "ok";
    case TMF_ERR_PARAMETER: return "parameter";
    case TMF_ERR_GEOMETRY: return "geometry";
    case TMF_ERR_SHAPE: return "shape";
    case TMF_ERR_NUMERIC: return "numeric";
    case TMF_ERR_FORMAT: return "format";
    case TMF_ERR_CONFIG_MISMATCH: return "config-mismatch";
    case TMF_ERR_MANIFEST: return "manifest";
    case TMF_ERR_CONTRACT: return "contract";
    case TMF_ERR_IO: return "io";
    case TMF_ERR_INPUT_NOT_FOUND: return "input-not-found";
    case TMF_ERR_DEGENERATE_INPUT: return "degenerate-input";
    case TMF_ERR_INTERNAL: return "internal";
  }
  return "internal";
}

const char* tmf_last_error(void) { return g_last_error.c_str(); }

void tmf_string_free(char* s) { std::free(s); }

tmf_status tmf_config_create(const char* json_text, int toy, tmf_config** out) {
  return guarded([&] {
    need(out, "out");
    auto cfg = std::make_unique<tmf_config>();
    if (toy) {
      cfg->model = tmf::ModelConfig::toy();
      cfg->train = tmf::TrainConfig::toy();
    }
    if (json_text != nullptr) {
      const json root = tmf::parse_json_text(json_text, "config");
      if (!root.is_object()) tmf::fail(tmf::ErrorCode::Parameter, "config must be a JSON object");
      tmf::reject_unknown_keys(root, {"model", "train", "sweep"}, "config");
      if (root.contains("model")) {
        json merged = cfg->model;
        merged.merge_patch(root.at("model"));
        cfg->model = merged.get<tmf::ModelConfig>();
      }
      if (root.contains("train")) {
        json merged = cfg->train;
        merged.merge_patch(root.at("train"));
        cfg->train = merged.get<tmf::TrainConfig>();
      }
      if (root.contains("sweep")) tmf::from_json(root.at("sweep"), cfg->sweep);
    }
    cfg->model.validate();
    cfg->train.validate();
    cfg->sweep.validate();
    *out = cfg.release();
  });
}

tmf_status tmf_config_set_epochs(tmf_config* config, int epochs) {
  return guarded([&] {
    need(config, "config");
    tmf::TrainConfig t = config->train;
    t.warmup_epochs = static_cast<int>(static_cast<long long>(t.warmup_epochs) * epochs / std::max(1, t.epochs));
    t.epochs = epochs;
    t.validate();
    config->train = t;
  });
}

tmf_status tmf_config_set_seed(tmf_config* config, uint64_t seed) {
  return guarded([&] {
    need(config, "config");
    config->train.seed = seed;
  });
}

tmf_status tmf_config_set_sweep(tmf_config* config, const size_t* n_train_grid, size_t n_grid, const uint64_t* seeds,
                                size_t n_seeds) {
  return guarded([&] {
    need(config, "config");
    tmf::SweepConfig s = config->sweep;
    if (n_grid > 0) {
      need(n_train_grid, "n_train_grid");
      s.n_train_grid.assign(n_train_grid, n_train_grid + n_grid);
    }
    if (n_seeds > 0) {
      need(seeds, "seeds");
      s.seeds.assign(seeds, seeds + n_seeds);
    }
    s.validate();
    config->sweep = s;
  });
}

tmf_status tmf_config_to_json(const tmf_config* config, char** out_json) {
  return guarded([&] {
    need(config, "config");
    need(out_json, "out_json");
    json j = {{"model", config->model}, {"train", config->train}, {"sweep", config->sweep}};
    *out_json = dup_string(j.dump(2));
  });
}

void tmf_config_free(tmf_config* config) { delete config; }

tmf_status tmf_phantom_create(const char* spec_json, uint64_t seed, const char* patient_id, tmf_phantom** out) {
  return guarded([&] {
    need(out, "out");
    tmf::PhantomSpec spec;
    if (spec_json != nullptr) spec = tmf::parse_json_text(spec_json, "phantom spec").get<tmf::PhantomSpec>();
    auto p = std::make_unique<tmf_phantom>();
    p->phantom = tmf::generate_phantom(spec, seed, patient_id != nullptr ? patient_id : "P0");
    *out = p.release();
  });
}

tmf_status tmf_phantom_describe(const tmf_phantom* phantom, char** out_json) {
  return guarded([&] {
    need(phantom, "phantom");
    need(out_json, "out_json");
    const tmf::PatientPhantom& p = phantom->phantom;
    json j = {{"patient_id", p.patient_id},
              {"seed", p.seed},
              {"spec", p.spec},
              {"spec_hash", tmf::spec_hash(p.spec)},
              {"p_ref_mm", p.p_ref},
              {"amplitudes_mm", p.amplitudes},
              {"motion_direction", p.motion_direction},
              {"gtv_voxels", p.gtv_voxels},
              {"gtv_mean_weight", p.gtv_mean_weight}};
    *out_json = dup_string(j.dump(2));
  });
}

tmf_status tmf_phantom_render(const tmf_phantom* phantom, size_t n_frames, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    need(phantom, "phantom");
    need(out_dir, "out_dir");
    tmf::require(n_frames > 0, tmf::ErrorCode::Parameter, "n_frames must be > 0");
    const tmf::PatientPhantom& p = phantom->phantom;
    const std::filesystem::path dir(out_dir);
    ensure_dir(dir);
    const tmf::BreathingSignal signal = tmf::sample_breathing(p.breathing, n_frames, tmf::kFrameRateHz, seed);
    const tmf::CropBox box = tmf::make_crop_box(p);
    const tmf::RenderOptions opts;
    std::ostringstream csv;
    csv << "frame,time_s,displacement_mm,x_mm,y_mm,z_mm\n";
    for (std::size_t t = 0; t < n_frames; ++t) {
      const double d = signal.samples[t];
      const std::vector<float> img = tmf::render_frame(p, d, {0.0, 0.0, 0.0}, box, opts);
      char name[32];
      std::snprintf(name, sizeof name, "frame_%04zu.pgm", t);
      tmf::write_pgm(image_frame(img, opts.out_size), dir / name);
      const tmf::Vec3 c = tmf::tumor_center(p, d);
      csv << t << ',' << tmf::format_double(signal.time_of(t)) << ',' << tmf::format_double(d) << ','
          << tmf::format_double(c[0]) << ',' << tmf::format_double(c[1]) << ',' << tmf::format_double(c[2]) << '\n';
    }
    write_text(dir / "positions.csv", csv.str());
  });
}

void tmf_phantom_free(tmf_phantom* phantom) { delete phantom; }

tmf_status tmf_dataset_build_train(const tmf_phantom* phantom, const tmf_config* config, size_t n_drrs, uint64_t seed,
                                   unsigned workers, tmf_dataset** out) {
  return guarded([&] {
    need(phantom, "phantom");
    need(out, "out");
    const tmf::ModelConfig mc = model_or_default(config);
    tmf::TrainingSetOptions opts;
    opts.window = window_of(mc);
    opts.render = render_of(mc);
    opts.workers = workers;
    auto d = std::make_unique<tmf_dataset>();
    d->dataset = tmf::build_training_set(phantom->phantom, n_drrs, seed, opts);
    *out = d.release();
  });
}

tmf_status tmf_dataset_build_test(const tmf_phantom* phantom, const tmf_config* config, tmf_session session,
                                  size_t n_sequences, double duration_s, double setup_error_mm, uint64_t seed,
                                  uint64_t t2_seed, unsigned workers, tmf_dataset** out) {
  return guarded([&] {
    need(phantom, "phantom");
    need(out, "out");
    const tmf::ModelConfig mc = model_or_default(config);
    tmf::TestSetOptions opts;
    opts.window = window_of(mc);
    opts.render = render_of(mc);
    opts.n_sequences = n_sequences;
    opts.duration_s = duration_s;
    opts.workers = workers;
    auto d = std::make_unique<tmf_dataset>();
    if (session == TMF_SESSION_T1) {
      opts.session = tmf::Session::T1;
      d->dataset = tmf::build_test_set(phantom->phantom, seed, opts);
    } else if (session == TMF_SESSION_T2) {
      const tmf::PatientPhantom& planning = phantom->phantom;
      opts.session = tmf::Session::T2;
      opts.setup_error_mm = setup_error_mm;
      opts.reference = tmf::normalization_of(planning);
      opts.crop = tmf::make_crop_box(planning);
      const tmf::PatientPhantom treatment =
          tmf::simulate_t2(planning, tmf::sample_t2_perturbation(t2_seed));
      d->dataset = tmf::build_test_set(treatment, seed, opts);
    } else {
      tmf::fail(tmf::ErrorCode::Parameter, "session must be T1 or T2");
    }
    *out = d.release();
  });
}

tmf_status tmf_dataset_load(const char* path, tmf_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto d = std::make_unique<tmf_dataset>();
    d->dataset = tmf::read_dataset(path);
    *out = d.release();
  });
}

tmf_status tmf_dataset_save(const tmf_dataset* dataset, const char* path) {
  return guarded([&] {
    need(dataset, "dataset");
    need(path, "path");
    tmf::write_dataset(dataset->dataset, path);
  });
}

tmf_status tmf_dataset_sample_count(const tmf_dataset* dataset, size_t* out) {
  return guarded([&] {
    need(dataset, "dataset");
    need(out, "out");
    *out = dataset->dataset.size();
  });
}

tmf_status tmf_dataset_describe(const tmf_dataset* dataset, char** out_json) {
  return guarded([&] {
    need(dataset, "dataset");
    need(out_json, "out_json");
    *out_json = dup_string(dataset_json(dataset->dataset).dump(2));
  });
}

void tmf_dataset_free(tmf_dataset* dataset) { delete dataset; }

tmf_status tmf_model_create(const tmf_config* config, uint64_t seed, tmf_model** out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    *out = new tmf_model{tmf::ForecastModel<float>::init_glorot(config->model, seed)};
  });
}

tmf_status tmf_model_load(const char* path, const tmf_config* expected, tmf_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    if (expected != nullptr) {
      *out = new tmf_model{tmf::load_checkpoint(path, expected->model)};
    } else {
      *out = new tmf_model{tmf::load_checkpoint(path)};
    }
  });
}

tmf_status tmf_model_save(const tmf_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    tmf::save_checkpoint(model->model, path);
  });
}

tmf_status tmf_model_parameter_count(const tmf_model* model, size_t* out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = model->model.parameter_count();
  });
}

void tmf_model_free(tmf_model* model) { delete model; }

tmf_status tmf_train(tmf_model* model, const tmf_dataset* dataset, const tmf_config* config, const char* out_dir,
                     tmf_epoch_callback on_epoch, void* user) {
  return guarded([&] {
    need(model, "model");
    need(dataset, "dataset");
    need(config, "config");
    tmf::require(model->model.config() == config->model, tmf::ErrorCode::ConfigMismatch,
                 "model was created with a different model config");
    tmf::TrainOptions opts;
    if (out_dir != nullptr) {
      ensure_dir(out_dir);
      opts.out_dir = std::filesystem::path(out_dir);
    }
    if (on_epoch != nullptr) {
      opts.on_epoch = [&](const tmf::EpochRecord& r) { on_epoch(r.epoch, r.mean_loss, r.lr, user); };
    }
    auto result = tmf::train(model->model, std::span<const tmf::DrrSample>(dataset->dataset.samples), config->train,
                             opts);
    model->model = std::move(result.model);
  });
}

tmf_status tmf_evaluate(const tmf_model* model, const tmf_dataset* dataset, const char* out_dir, double* ade_mean_mm,
                        double* fde_mean_mm) {
  return guarded([&] {
    need(model, "model");
    need(dataset, "dataset");
    tmf::ReportTags tags;
    tags.patient_id = dataset->dataset.patient_id;
    tags.session = dataset->dataset.session;
    const tmf::MetricsReport r = tmf::evaluate(model->model, dataset->dataset, tags);
    if (out_dir != nullptr) {
      const std::filesystem::path dir(out_dir);
      ensure_dir(dir);
      const tmf::ReportRow row = tmf::report_row(r);
      write_text(dir / "detail.csv", tmf::detail_csv(std::span<const tmf::ReportRow>(&row, 1)));
      std::ostringstream csv;
      csv << "sequence,t0,ade_mm,fde_mm\n";
      const auto& samples = dataset->dataset.samples;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        std::size_t seq = 0;
        while (seq < dataset->dataset.sequences.size() && dataset->dataset.sequences[seq] != samples[i].sequence) ++seq;
        csv << seq << ',' << samples[i].t0 << ',' << tmf::format_double(r.ade_mm[i]) << ','
            << tmf::format_double(r.fde_mm[i]) << '\n';
      }
      write_text(dir / "samples.csv", csv.str());
    }
    if (ade_mean_mm != nullptr) *ade_mean_mm = r.ade_mean;
    if (fde_mean_mm != nullptr) *fde_mean_mm = r.fde_mean;
  });
}

tmf_status tmf_cohort_load(const char* manifest_path, unsigned workers, tmf_cohort** out) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out, "out");
    *out = new tmf_cohort{tmf::build_cohort(tmf::load_manifest(manifest_path), workers)};
  });
}

tmf_status tmf_cohort_patient_count(const tmf_cohort* cohort, size_t* out) {
  return guarded([&] {
    need(cohort, "cohort");
    need(out, "out");
    *out = cohort->cohort.patients.size();
  });
}

tmf_status tmf_cohort_describe(const tmf_cohort* cohort, char** out_json) {
  return guarded([&] {
    need(cohort, "cohort");
    need(out_json, "out_json");
    json patients = json::array();
    for (const auto& p : cohort->cohort.patients) {
      patients.push_back({{"patient_id", p.entry.patient_id},
                          {"seeds",
                           {{"phantom", p.entry.seeds.phantom},
                            {"train", p.entry.seeds.train},
                            {"test", p.entry.seeds.test},
                            {"t2", p.entry.seeds.t2}}},
                          {"spec_hash", tmf::spec_hash(p.entry.spec)},
                          {"amplitudes_mm", p.planning.amplitudes},
                          {"period_s", p.planning.breathing.period_s},
                          {"t2_perturbation",
                           {{"amplitude_scale", p.perturbation.amplitude_scale},
                            {"baseline_shift_mm", p.perturbation.baseline_shift_mm},
                            {"tumor_scale", p.perturbation.tumor_scale}}}});
    }
    *out_json = dup_string(json{{"patients", patients}}.dump(2));
  });
}

tmf_status tmf_cohort_phantom(const tmf_cohort* cohort, const char* patient_id, tmf_session session,
                              tmf_phantom** out) {
  return guarded([&] {
    need(cohort, "cohort");
    need(patient_id, "patient_id");
    need(out, "out");
    const tmf::CohortPatient& p = cohort->cohort.patients[cohort->cohort.index_of(patient_id)];
    tmf::require(session == TMF_SESSION_T1 || session == TMF_SESSION_T2, tmf::ErrorCode::Parameter,
                 "session must be T1 or T2");
    *out = new tmf_phantom{session == TMF_SESSION_T1 ? p.planning : p.treatment};
  });
}

tmf_status tmf_cohort_dataset(const tmf_cohort* cohort, const char* patient_id, const tmf_config* config,
                              tmf_session session, int test, size_t n_drrs, unsigned workers, tmf_dataset** out) {
  return guarded([&] {
    need(cohort, "cohort");
    need(patient_id, "patient_id");
    need(config, "config");
    need(out, "out");
    const tmf::CohortPatient& p = cohort->cohort.patients[cohort->cohort.index_of(patient_id)];
    const tmf::CohortDataOptions opts = data_options(*config, workers);
    auto d = std::make_unique<tmf_dataset>();
    if (!test) {
      tmf::require(session == TMF_SESSION_T1, tmf::ErrorCode::Parameter, "training sets exist for T1 only");
      d->dataset = tmf::patient_training_set(p, n_drrs, opts);
    } else if (session == TMF_SESSION_T1 || session == TMF_SESSION_T2) {
      d->dataset = tmf::patient_test_set(p, session == TMF_SESSION_T1 ? tmf::Session::T1 : tmf::Session::T2, opts);
    } else {
      tmf::fail(tmf::ErrorCode::Parameter, "session must be T1 or T2");
    }
    *out = d.release();
  });
}

tmf_status tmf_cohort_write_projections(const tmf_cohort* cohort, const char* out_dir) {
  return guarded([&] {
    need(cohort, "cohort");
    need(out_dir, "out_dir");
    const std::filesystem::path dir(out_dir);
    ensure_dir(dir);
    for (const auto& p : cohort->cohort.patients) {
      tmf::write_pgm(tmf::normalize01(tmf::project_coronal(p.planning.reference)),
                     dir / (p.entry.patient_id + "_T1.pgm"));
      tmf::write_pgm(tmf::normalize01(tmf::project_coronal(p.treatment.reference)),
                     dir / (p.entry.patient_id + "_T2.pgm"));
    }
  });
}

void tmf_cohort_free(tmf_cohort* cohort) { delete cohort; }

tmf_status tmf_sweep_run(const tmf_cohort* cohort, const tmf_config* config, unsigned workers,
                         tmf_cell_callback on_cell, void* user, tmf_experiment** out) {
  return guarded([&] {
    need(cohort, "cohort");
    need(config, "config");
    need(out, "out");
    const tmf::SweepConfig& sweep = config->sweep;
    const tmf::CohortDataOptions data_opts = data_options(*config, workers);
    const std::vector<tmf::PatientData> data = tmf::build_cohort_data(cohort->cohort, data_opts);

    tmf::SweepOptions opts;
    opts.workers = workers;
    if (on_cell != nullptr) {
      opts.on_cell = [&](const tmf::CellResult& c) {
        on_cell(c.patient_id.c_str(), tmf::strategy_name(c.strategy), c.n_train, c.seed, c.t1 ? c.t1->ade_mean : 0.0,
                c.t2 ? c.t2->ade_mean : 0.0, user);
      };
    }
    auto exp = std::make_unique<tmf_experiment>();
    exp->result = tmf::run_strategy_comparison(data, sweep, config->model, config->train, opts);
    exp->threshold_mm = sweep.threshold_mm;
    *out = exp.release();
  });
}

tmf_status tmf_experiment_write_report(const tmf_experiment* experiment, const char* out_dir) {
  return guarded([&] {
    need(experiment, "experiment");
    need(out_dir, "out_dir");
    ensure_dir(out_dir);
    tmf::write_report(experiment->result, out_dir, experiment->threshold_mm);
  });
}

tmf_status tmf_experiment_row_count(const tmf_experiment* experiment, size_t* out) {
  return guarded([&] {
    need(experiment, "experiment");
    need(out, "out");
    *out = tmf::report_rows(experiment->result).size();
  });
}

tmf_status tmf_experiment_check_loocv(const tmf_experiment* experiment, size_t* samples_checked) {
  return guarded([&] {
    need(experiment, "experiment");
    const std::size_t n = tmf::check_loocv_exclusion(experiment->result);
    if (samples_checked != nullptr) *samples_checked = n;
  });
}

void tmf_experiment_free(tmf_experiment* experiment) { delete experiment; }

tmf_status tmf_report_summarize(const char* detail_csv_path, const char* summary_csv_path) {
  return guarded([&] {
    need(detail_csv_path, "detail_csv_path");
    need(summary_csv_path, "summary_csv_path");
    const std::vector<tmf::ReportRow> rows = tmf::read_report(detail_csv_path);
    const std::vector<tmf::SummaryRow> summary = tmf::summary_rows(rows);
    write_text(summary_csv_path, tmf::summary_csv(summary));
  });
}

tmf_status tmf_gradcheck(const tmf_config* config, uint64_t seed, double* max_rel_error) {
  return guarded([&] {
    need(max_rel_error, "max_rel_error");
    tmf::ModelConfig c;
    if (config != nullptr) {
      c = config->model;
    } else {
      c.d_model = 8;
      c.n_heads = 2;
      c.n_layers_enc = 1;
      c.n_layers_dec = 1;
      c.d_ff = 16;
    }
    c.dropout = 0.0;
    c.validate();
    auto model = tmf::ForecastModel<double>::init_glorot(c, seed);
    std::mt19937_64 rng(tmf::derive_seed(seed, 0x67636b00u));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t b = 2;
    const std::size_t s = static_cast<std::size_t>(c.image_size);
    std::vector<double> frames(b * c.T_obs * s * s);
    for (double& v : frames) v = unit(rng);
    std::vector<double> positions(b * c.decoder_tokens() * 3);
    for (double& v : positions) v = 2.0 * unit(rng) - 1.0;
    std::vector<double> targets(b * c.T_pred * 3);
    for (double& v : targets) v = 2.0 * unit(rng) - 1.0;
    const auto f = tmf::ag::Tensor<double>::from_data({b, static_cast<std::size_t>(c.T_obs), s, s}, frames);
    const auto p = tmf::ag::Tensor<double>::from_data({b, static_cast<std::size_t>(c.decoder_tokens()), 3}, positions);
    const auto t = tmf::ag::Tensor<double>::from_data({b, static_cast<std::size_t>(c.T_pred), 3}, targets);
    std::vector<tmf::ag::Tensor<double>> params = model.parameter_tensors();
    *max_rel_error = tmf::ag::gradcheck_parameters(
        [&] { return tmf::rmse_loss(model.forward_teacher_forced(f, p), t); }, params);
  });
}

}  // extern "C"
