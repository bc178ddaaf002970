#include "tmf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "parallel.hpp"
#include "tmf/error.hpp"
#include "tmf/seed.hpp"

namespace tmf {

namespace {

constexpr std::uint64_t kTagBreathing = 0x62726561u;
constexpr std::uint64_t kTagSetup = 0x73657475u;
constexpr std::uint64_t kTagPhase = 0x70686173u;
constexpr std::uint64_t kTagNoise = 0x6e6f6973u;

void render_into(FrameSequence& seq, const PatientPhantom& phantom, const BreathingSignal& signal,
                 const Vec3& shift, const CropBox& box, const RenderOptions& render,
                 std::uint64_t noise_base, unsigned workers) {
  const std::size_t n = signal.length();
  seq.height = render.out_size;
  seq.width = render.out_size;
  seq.rate_hz = signal.rate_hz;
  seq.frames.assign(n * seq.frame_size(), 0.0f);
  detail::parallel_for(n, workers, [&](std::size_t t) {
    RenderOptions opts = render;
    opts.noise_seed = derive_seed(noise_base, kTagNoise, t);
    const std::vector<float> frame = render_frame(phantom, signal.samples[t], shift, box, opts);
    std::copy(frame.begin(), frame.end(), seq.frames.begin() + static_cast<std::ptrdiff_t>(t * seq.frame_size()));
  });
}

void window_sequence(SessionDataset& ds, std::size_t seq_index) {
  const auto& seq = ds.sequences[seq_index];
  const std::size_t count = ds.window.count(seq->length());
  for (std::size_t t0 = 0; t0 < count; ++t0) {
    ds.samples.push_back(make_sample(seq, t0, ds.window, ds.patient_id, ds.session, ds.norm));
  }
}

}  // namespace

const char* session_name(Session s) { return s == Session::T2 ? "T2" : "T1"; }

NormalizationParams normalization_of(const PatientPhantom& phantom) {
  return {phantom.p_ref, phantom.amplitudes};
}

Vec3 normalize_position(const Vec3& p_mm, const NormalizationParams& norm) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    out[a] = (p_mm[a] - norm.p_ref[a]) / std::max(norm.amplitudes[a], kAmplitudeFloorMm);
  }
  return out;
}

Vec3 denormalize_position(const Vec3& q, const NormalizationParams& norm) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    out[a] = q[a] * std::max(norm.amplitudes[a], kAmplitudeFloorMm) + norm.p_ref[a];
  }
  return out;
}

DrrSample make_sample(std::shared_ptr<const FrameSequence> sequence, std::size_t t0,
                      const WindowSpec& window, const std::string& patient_id, Session session,
                      const NormalizationParams& norm) {
  require(sequence != nullptr, ErrorCode::Contract, "sample needs a frame sequence");
  require(t0 + window.span() <= sequence->length(), ErrorCode::Parameter,
          "sample window exceeds the sequence length");
  DrrSample s;
  s.t0 = t0;
  s.window = window;
  s.patient_id = patient_id;
  s.session = session;
  s.norm = norm;
  s.observed.assign(sequence->positions_norm.begin() + static_cast<std::ptrdiff_t>(t0),
                    sequence->positions_norm.begin() + static_cast<std::ptrdiff_t>(t0 + window.t_obs));
  s.targets.assign(sequence->positions_norm.begin() + static_cast<std::ptrdiff_t>(t0 + window.t_obs),
                   sequence->positions_norm.begin() + static_cast<std::ptrdiff_t>(t0 + window.span()));
  s.sequence = std::move(sequence);
  return s;
}

bool equal_contents(const SessionDataset& a, const SessionDataset& b) {
  if (a.patient_id != b.patient_id || a.session != b.session || !(a.provenance == b.provenance) ||
      !(a.window == b.window) || !(a.norm == b.norm) || a.sequences.size() != b.sequences.size() ||
      a.samples.size() != b.samples.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    if (!(*a.sequences[i] == *b.sequences[i])) return false;
  }
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const DrrSample& x = a.samples[i];
    const DrrSample& y = b.samples[i];
    if (x.t0 != y.t0 || x.observed != y.observed || x.targets != y.targets || !(x.norm == y.norm) ||
        x.patient_id != y.patient_id || x.session != y.session) {
      return false;
    }
    if (!std::equal(x.frames().begin(), x.frames().end(), y.frames().begin(), y.frames().end())) return false;
  }
  return true;
}

SessionDataset build_training_set(const PatientPhantom& phantom, std::size_t n_drrs,
                                  std::uint64_t seed, const TrainingSetOptions& options) {
  require(n_drrs >= options.window.span(), ErrorCode::Parameter,
          "training set needs n_drrs >= T_obs + T_pred (" + std::to_string(options.window.span()) +
              "), got " + std::to_string(n_drrs));
  SessionDataset ds;
  ds.patient_id = phantom.patient_id;
  ds.session = Session::T1;
  ds.provenance = {spec_hash(phantom.spec), seed};
  ds.window = options.window;
  ds.norm = normalization_of(phantom);

  const BreathingSignal signal =
      sample_breathing(phantom.breathing, n_drrs, kFrameRateHz, derive_seed(seed, kTagBreathing));
  auto seq = std::make_shared<FrameSequence>();
  seq->positions_mm.resize(n_drrs);
  seq->positions_norm.resize(n_drrs);
  for (std::size_t t = 0; t < n_drrs; ++t) {
    seq->positions_mm[t] = tumor_center(phantom, signal.samples[t]);
    seq->positions_norm[t] = normalize_position(seq->positions_mm[t], ds.norm);
  }
  render_into(*seq, phantom, signal, {0.0, 0.0, 0.0}, make_crop_box(phantom), options.render, seed,
              options.workers);
  ds.sequences.push_back(std::move(seq));
  window_sequence(ds, 0);
  return ds;
}

SessionDataset build_test_set(const PatientPhantom& phantom, std::uint64_t seed,
                              const TestSetOptions& options) {
  require(options.n_sequences >= 1, ErrorCode::Parameter, "test set needs at least one sequence");
  require(options.duration_s > 0.0 && std::isfinite(options.duration_s), ErrorCode::Parameter,
          "test sequence duration must be positive");
  require(options.setup_error_mm >= 0.0, ErrorCode::Parameter, "setup error range must be >= 0");
  const auto length = static_cast<std::size_t>(std::llround(options.duration_s * kFrameRateHz));
  require(length >= options.window.span(), ErrorCode::Parameter,
          "test sequence of " + std::to_string(length) + " frames is shorter than T_obs + T_pred");

  SessionDataset ds;
  ds.patient_id = phantom.patient_id;
  ds.session = options.session;
  ds.provenance = {spec_hash(phantom.spec), seed};
  ds.window = options.window;
  ds.norm = options.reference.value_or(normalization_of(phantom));
  const CropBox box = options.crop.value_or(make_crop_box(phantom));

  std::mt19937_64 setup_rng(derive_seed(seed, kTagSetup));
  std::uniform_real_distribution<double> setup(-options.setup_error_mm, options.setup_error_mm);
  for (std::size_t s = 0; s < options.n_sequences; ++s) {
    Vec3 shift{0.0, 0.0, 0.0};
    if (options.setup_error_mm > 0.0) shift = {setup(setup_rng), setup(setup_rng), setup(setup_rng)};

    std::mt19937_64 phase_rng(derive_seed(seed, kTagPhase, s));
    BreathingParams params = phantom.breathing;
    params.phase_rad += std::uniform_real_distribution<double>(0.0, std::numbers::pi)(phase_rng);
    const BreathingSignal signal =
        sample_breathing(params, length, kFrameRateHz, derive_seed(seed, kTagBreathing, s + 1));

    auto seq = std::make_shared<FrameSequence>();
    seq->positions_mm.resize(length);
    seq->positions_norm.resize(length);
    for (std::size_t t = 0; t < length; ++t) {
      seq->positions_mm[t] = tumor_center(phantom, signal.samples[t], shift);
      seq->positions_norm[t] = normalize_position(seq->positions_mm[t], ds.norm);
    }
    render_into(*seq, phantom, signal, shift, box, options.render, derive_seed(seed, s), options.workers);
    ds.sequences.push_back(std::move(seq));
    window_sequence(ds, ds.sequences.size() - 1);
  }
  return ds;
}

std::vector<DrrSample> first_windows(const SessionDataset& dataset, std::size_t n_drrs) {
  std::vector<DrrSample> out;
  for (const DrrSample& s : dataset.samples) {
    if (s.t0 + s.window.span() <= n_drrs) out.push_back(s);
  }
  return out;
}

PatientPhantom simulate_t2(const PatientPhantom& phantom, const T2Perturbation& p) {
  require(p.amplitude_scale > 0.0 && p.tumor_scale > 0.0, ErrorCode::Parameter,
          "T2 perturbation scales must be > 0");
  PhantomSpec spec = phantom.spec;
  spec.breathing.amplitude_mm *= p.amplitude_scale;
  spec.tumor_center_mm = spec.tumor_center_mm + p.baseline_shift_mm;
  spec.tumor_semi_axes_mm = p.tumor_scale * spec.tumor_semi_axes_mm;
  return generate_phantom(spec, phantom.seed, phantom.patient_id);
}

T2Perturbation sample_t2_perturbation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(0.8, 1.2);
  std::uniform_real_distribution<double> shift(-5.0, 5.0);
  T2Perturbation p;
  p.amplitude_scale = scale(rng);
  p.baseline_shift_mm = {shift(rng), shift(rng), shift(rng)};
  p.tumor_scale = scale(rng);
  return p;
}

}  // namespace tmf
