#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmf/drr.hpp"
#include "tmf/phantom.hpp"

namespace tmf {

inline constexpr double kFrameRateHz = 5.0;
inline constexpr double kAmplitudeFloorMm = 1.0;

enum class Session : std::uint8_t { T1 = 1, T2 = 2 };

const char* session_name(Session s);

struct NormalizationParams {
  Vec3 p_ref{0.0, 0.0, 0.0};
  Vec3 amplitudes{0.0, 0.0, 0.0};

  bool operator==(const NormalizationParams&) const = default;
};

NormalizationParams normalization_of(const PatientPhantom& phantom);

// (p - p_ref) / max(A, floor), per axis.
Vec3 normalize_position(const Vec3& p_mm, const NormalizationParams& norm);
Vec3 denormalize_position(const Vec3& q, const NormalizationParams& norm);

struct WindowSpec {
  std::size_t t_obs = 16;
  std::size_t t_pred = 5;

  std::size_t span() const { return t_obs + t_pred; }
  // L - (t_obs + t_pred) + 1, or 0 when the sequence is too short.
  std::size_t count(std::size_t length) const { return length >= span() ? length - span() + 1 : 0; }
  bool operator==(const WindowSpec&) const = default;
};

// One rendered acquisition: frames plus the tumour trace that produced them.
struct FrameSequence {
  int height = 64;
  int width = 64;
  double rate_hz = kFrameRateHz;
  std::vector<float> frames;         // length * height * width
  std::vector<Vec3> positions_mm;    // tumour centre per frame
  std::vector<Vec3> positions_norm;  // normalized against the dataset's reference

  std::size_t length() const { return positions_mm.size(); }
  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::span<const float> frames_from(std::size_t t, std::size_t count) const {
    return {frames.data() + t * frame_size(), count * frame_size()};
  }
  bool operator==(const FrameSequence&) const = default;
};

// A sliding window into a FrameSequence. Frames are shared, not copied.
struct DrrSample {
  std::shared_ptr<const FrameSequence> sequence;
  std::size_t t0 = 0;
  WindowSpec window;
  std::string patient_id;
  Session session = Session::T1;
  NormalizationParams norm;
  std::vector<Vec3> observed;  // t_obs normalized positions
  std::vector<Vec3> targets;   // t_pred normalized positions

  // t_obs contiguous frames, each height * width.
  std::span<const float> frames() const { return sequence->frames_from(t0, window.t_obs); }
  int height() const { return sequence->height; }
  int width() const { return sequence->width; }
};

DrrSample make_sample(std::shared_ptr<const FrameSequence> sequence, std::size_t t0,
                      const WindowSpec& window, const std::string& patient_id, Session session,
                      const NormalizationParams& norm);

struct Provenance {
  std::uint64_t spec_hash = 0;
  std::uint64_t seed = 0;
  bool operator==(const Provenance&) const = default;
};

struct SessionDataset {
  std::string patient_id;
  Session session = Session::T1;
  Provenance provenance;
  WindowSpec window;
  NormalizationParams norm;
  std::vector<std::shared_ptr<const FrameSequence>> sequences;
  std::vector<DrrSample> samples;

  std::size_t size() const { return samples.size(); }
};

// Structural equality including frame and position contents.
bool equal_contents(const SessionDataset& a, const SessionDataset& b);

struct TrainingSetOptions {
  WindowSpec window;
  RenderOptions render;
  unsigned workers = 1;
};

// One breathing trace of n_drrs points at 5 Hz rendered through the planning
// crop box and windowed. The trace for n extends the trace for any m < n.
SessionDataset build_training_set(const PatientPhantom& phantom, std::size_t n_drrs,
                                  std::uint64_t seed, const TrainingSetOptions& options = {});

struct TestSetOptions {
  std::size_t n_sequences = 10;
  double duration_s = 20.0;
  double setup_error_mm = 0.0;  // per-axis uniform half-range of the rigid setup translation
  Session session = Session::T1;
  std::optional<NormalizationParams> reference;  // defaults to the phantom's own
  std::optional<CropBox> crop;                   // defaults to the phantom's own
  WindowSpec window;
  RenderOptions render;
  unsigned workers = 1;
};

// Independent breathing realisations (fresh cycle jitter and start phase) with
// a per-sequence rigid setup translation. Labels include the translation and
// are normalized against `reference`.
SessionDataset build_test_set(const PatientPhantom& phantom, std::uint64_t seed,
                              const TestSetOptions& options = {});

// Samples whose full window fits in the first n_drrs frames of each sequence.
std::vector<DrrSample> first_windows(const SessionDataset& dataset, std::size_t n_drrs);

struct T2Perturbation {
  double amplitude_scale = 1.0;
  Vec3 baseline_shift_mm{0.0, 0.0, 0.0};
  double tumor_scale = 1.0;
  bool operator==(const T2Perturbation&) const = default;
};

// Regenerates the phantom with scaled breathing amplitude, shifted tumour
// centroid and scaled tumour; anatomy draws reuse the original seed.
PatientPhantom simulate_t2(const PatientPhantom& phantom, const T2Perturbation& perturbation);

// amplitude_scale ~ U(0.8, 1.2), baseline shift ~ U(-5, 5) mm per axis,
// tumor_scale ~ U(0.8, 1.2).
T2Perturbation sample_t2_perturbation(std::uint64_t seed);

// Binary .tmfd format. Throws Format with the byte offset on malformed input.
void write_dataset(const SessionDataset& dataset, const std::filesystem::path& path);
SessionDataset read_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_dataset(const SessionDataset& dataset);
SessionDataset deserialize_dataset(std::span<const std::uint8_t> bytes);

}  // namespace tmf
