#include <fstream>
#include <iterator>

#include "binary.hpp"
#include "tmf/dataset.hpp"

namespace tmf {

namespace {

constexpr std::uint16_t kDatasetVersion = 1;

void put_vec3s(binary::Writer& w, const std::vector<Vec3>& v) {
  w.put_array(std::span<const double>(v.empty() ? nullptr : v.front().data(), v.size() * 3));
}

void get_vec3s(binary::Reader& r, std::vector<Vec3>& v, std::size_t n) {
  v.resize(n);
  r.get_array(std::span<double>(n == 0 ? nullptr : v.front().data(), n * 3));
}

}  // namespace

namespace binary {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::InputNotFound, "cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::Io, "cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorCode::Io, "failed writing " + path);
}

}  // namespace binary

std::vector<std::uint8_t> serialize_dataset(const SessionDataset& ds) {
  binary::Writer w;
  w.put_bytes("TMFD", 4);
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.session));
  w.put_string16(ds.patient_id);
  w.put<std::uint64_t>(ds.provenance.spec_hash);
  w.put<std::uint64_t>(ds.provenance.seed);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.window.t_obs));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.window.t_pred));
  w.put_array(std::span<const double>(ds.norm.p_ref));
  w.put_array(std::span<const double>(ds.norm.amplitudes));

  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.sequences.size()));
  for (const auto& seq : ds.sequences) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(seq->length()));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(seq->height));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(seq->width));
    w.put<double>(seq->rate_hz);
    put_vec3s(w, seq->positions_mm);
    put_vec3s(w, seq->positions_norm);
    w.put_array(std::span<const float>(seq->frames));
  }

  // Map each sample back to its sequence index.
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.samples.size()));
  for (const DrrSample& s : ds.samples) {
    std::uint32_t index = 0;
    while (index < ds.sequences.size() && ds.sequences[index] != s.sequence) ++index;
    require(index < ds.sequences.size(), ErrorCode::Contract,
            "sample references a sequence outside its dataset");
    w.put<std::uint32_t>(index);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.t0));
  }
  return std::move(w.bytes());
}

SessionDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "tmfd");
  r.expect_magic("TMFD");
  const auto version = r.get<std::uint16_t>();
  if (version != kDatasetVersion) {
    r.invalid("version mismatch: expected " + std::to_string(kDatasetVersion) + ", got " +
              std::to_string(version));
  }
  SessionDataset ds;
  const auto session = r.get<std::uint8_t>();
  if (session != 1 && session != 2) r.invalid("unknown session tag " + std::to_string(session));
  ds.session = static_cast<Session>(session);
  ds.patient_id = r.get_string16();
  ds.provenance.spec_hash = r.get<std::uint64_t>();
  ds.provenance.seed = r.get<std::uint64_t>();
  ds.window.t_obs = r.get<std::uint16_t>();
  ds.window.t_pred = r.get<std::uint16_t>();
  if (ds.window.t_obs == 0 || ds.window.t_pred == 0) r.invalid("window sizes must be >= 1");
  r.get_array(std::span<double>(ds.norm.p_ref));
  r.get_array(std::span<double>(ds.norm.amplitudes));

  const auto n_sequences = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_sequences; ++i) {
    auto seq = std::make_shared<FrameSequence>();
    const auto length = r.get<std::uint32_t>();
    seq->height = r.get<std::uint16_t>();
    seq->width = r.get<std::uint16_t>();
    seq->rate_hz = r.get<double>();
    const std::size_t need = static_cast<std::size_t>(length) * (6 * sizeof(double) + seq->frame_size() * sizeof(float));
    r.require_available(need);
    get_vec3s(r, seq->positions_mm, length);
    get_vec3s(r, seq->positions_norm, length);
    seq->frames.resize(static_cast<std::size_t>(length) * seq->frame_size());
    r.get_array(std::span<float>(seq->frames));
    ds.sequences.push_back(std::move(seq));
  }

  const auto n_samples = r.get<std::uint32_t>();
  r.require_available(static_cast<std::size_t>(n_samples) * 8);
  ds.samples.reserve(n_samples);
  for (std::uint32_t i = 0; i < n_samples; ++i) {
    const auto index = r.get<std::uint32_t>();
    const auto t0 = r.get<std::uint32_t>();
    if (index >= ds.sequences.size()) r.invalid("sample references missing sequence " + std::to_string(index));
    if (t0 + ds.window.span() > ds.sequences[index]->length()) r.invalid("sample window exceeds its sequence");
    ds.samples.push_back(make_sample(ds.sequences[index], t0, ds.window, ds.patient_id, ds.session, ds.norm));
  }
  r.expect_end();
  return ds;
}

void write_dataset(const SessionDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = serialize_dataset(dataset);
  binary::write_file(path.string(), bytes);
}

SessionDataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path.string());
  return deserialize_dataset(bytes);
}

}  // namespace tmf
