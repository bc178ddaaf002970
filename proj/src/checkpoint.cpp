#include "binary.hpp"
#include "tmf/model.hpp"

namespace tmf {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

void put_config(binary::Writer& w, const ModelConfig& c) {
  for (int v : {c.d_model, c.n_heads, c.n_layers_enc, c.n_layers_dec, c.d_ff, c.patch_size, c.T_obs, c.T_pred}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.put<double>(c.dropout);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.image_size));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.activation));
}

ModelConfig get_config(binary::Reader& r) {
  ModelConfig c;
  for (int* v : {&c.d_model, &c.n_heads, &c.n_layers_enc, &c.n_layers_dec, &c.d_ff, &c.patch_size, &c.T_obs,
                 &c.T_pred}) {
    const auto raw = r.get<std::uint32_t>();
    if (raw > 1u << 20) r.invalid("implausible config value " + std::to_string(raw));
    *v = static_cast<int>(raw);
  }
  c.dropout = r.get<double>();
  const auto image = r.get<std::uint32_t>();
  if (image > 1u << 16) r.invalid("implausible image size " + std::to_string(image));
  c.image_size = static_cast<int>(image);
  const auto act = r.get<std::uint8_t>();
  if (act > 1) r.invalid("unknown activation tag " + std::to_string(act));
  c.activation = static_cast<Activation>(act);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigMismatch, std::string("checkpoint config is invalid: ") + e.what());
  }
  return c;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ForecastModel<T>& model) {
  binary::Writer w;
  w.put_bytes("TMCK", 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  put_config(w, model.config());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, tensor] : model.parameters()) {
    w.put_string16(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (T v : tensor.data()) w.put<float>(static_cast<float>(v));
  }
  return std::move(w.bytes());
}

ForecastModel<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "tmck");
  r.expect_magic("TMCK");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    r.invalid("version mismatch: expected " + std::to_string(kCheckpointVersion) + ", got " +
              std::to_string(version));
  }
  const ModelConfig config = get_config(r);
  ForecastModel<float> model = ForecastModel<float>::zeros(config);
  auto& params = model.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    fail(ErrorCode::ConfigMismatch, "checkpoint has " + std::to_string(count) + " parameters, config implies " +
                                        std::to_string(params.size()));
  }
  for (auto& [name, tensor] : params) {
    const std::string stored = r.get_string16();
    if (stored != name) {
      fail(ErrorCode::ConfigMismatch, "checkpoint parameter \"" + stored + "\" where config implies \"" + name + "\"");
    }
    const auto rank = r.get<std::uint8_t>();
    ag::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != tensor.shape()) {
      fail(ErrorCode::ConfigMismatch, "parameter " + name + " has shape " + ag::to_string(shape) +
                                          ", config implies " + ag::to_string(tensor.shape()));
    }
    r.get_array(tensor.mutable_data());
  }
  r.expect_end();
  return model;
}

template <typename T>
void save_checkpoint(const ForecastModel<T>& model, const std::filesystem::path& path) {
  binary::write_file(path.string(), serialize_checkpoint(model));
}

ForecastModel<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(binary::read_file(path.string()));
}

ForecastModel<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  ForecastModel<float> model = load_checkpoint(path);
  if (!(model.config() == expected)) {
    fail(ErrorCode::ConfigMismatch, "checkpoint " + path.string() + " was written for a different model config");
  }
  return model;
}

template std::vector<std::uint8_t> serialize_checkpoint(const ForecastModel<float>&);
template std::vector<std::uint8_t> serialize_checkpoint(const ForecastModel<double>&);
template void save_checkpoint(const ForecastModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const ForecastModel<double>&, const std::filesystem::path&);

}  // namespace tmf
