#pragma once

// JSON mappings for the configuration types. Reading starts from the struct's
// defaults, so documents only need the fields they override; unknown keys are
// rejected so typos do not silently fall back to defaults.

#include <initializer_list>
#include <string_view>

#include "json.hpp"
#include "tmf/phantom.hpp"

namespace tmf {

struct ModelConfig;
struct TrainConfig;
struct SweepConfig;

void to_json(nlohmann::json& j, const BreathingParams& p);
void from_json(const nlohmann::json& j, BreathingParams& p);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SweepConfig& s);
void from_json(const nlohmann::json& j, SweepConfig& s);

// Throws Parameter naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view context);

// Parses JSON text, mapping syntax errors to ErrorCode::Format.
nlohmann::json parse_json_text(std::string_view text, std::string_view context);

}  // namespace tmf
