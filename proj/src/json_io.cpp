#include "tmf/json_io.hpp"

#include <algorithm>

#include "tmf/error.hpp"
#include "tmf/eval.hpp"
#include "tmf/model.hpp"
#include "tmf/train.hpp"

namespace tmf {

using nlohmann::json;

namespace {

template <typename V>
void read_field(const json& j, const char* key, V& out, std::string_view context) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    it->get_to(out);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parameter, std::string(context) + "." + key + ": " + e.what());
  }
}

void require_object(const json& j, std::string_view context) {
  require(j.is_object(), ErrorCode::Parameter, std::string(context) + " must be a JSON object");
}

}  // namespace

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      fail(ErrorCode::Parameter, "unknown key \"" + it.key() + "\" in " + std::string(context));
    }
  }
}

json parse_json_text(std::string_view text, std::string_view context) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Format, std::string(context) + ": " + e.what());
  }
}

void to_json(json& j, const BreathingParams& p) {
  j = json{{"amplitude_mm", p.amplitude_mm},
           {"period_s", p.period_s},
           {"shape_exponent", p.shape_exponent},
           {"phase_rad", p.phase_rad},
           {"amplitude_jitter_sd", p.amplitude_jitter_sd},
           {"period_jitter_sd", p.period_jitter_sd},
           {"drift_mm_per_min", p.drift_mm_per_min}};
}

void from_json(const json& j, BreathingParams& p) {
  require_object(j, "breathing");
  reject_unknown_keys(j,
                      {"amplitude_mm", "period_s", "shape_exponent", "phase_rad", "amplitude_jitter_sd",
                       "period_jitter_sd", "drift_mm_per_min"},
                      "breathing");
  read_field(j, "amplitude_mm", p.amplitude_mm, "breathing");
  read_field(j, "period_s", p.period_s, "breathing");
  read_field(j, "shape_exponent", p.shape_exponent, "breathing");
  read_field(j, "phase_rad", p.phase_rad, "breathing");
  read_field(j, "amplitude_jitter_sd", p.amplitude_jitter_sd, "breathing");
  read_field(j, "period_jitter_sd", p.period_jitter_sd, "breathing");
  read_field(j, "drift_mm_per_min", p.drift_mm_per_min, "breathing");
}

void to_json(json& j, const PhantomSpec& s) {
  j = json{{"dims", s.dims},
           {"spacing_mm", s.spacing_mm},
           {"body_semi_axes_mm", s.body_semi_axes_mm},
           {"lung_offset_x_mm", s.lung_offset_x_mm},
           {"lung_center_mm", s.lung_center_mm},
           {"lung_semi_axes_mm", s.lung_semi_axes_mm},
           {"lung_size_jitter", s.lung_size_jitter},
           {"tumor_center_mm", s.tumor_center_mm},
           {"tumor_semi_axes_mm", s.tumor_semi_axes_mm},
           {"rib_period_mm", s.rib_period_mm},
           {"rib_thickness_mm", s.rib_thickness_mm},
           {"shell_thickness_mm", s.shell_thickness_mm},
           {"spine_radius_mm", s.spine_radius_mm},
           {"mu_body", s.mu_body},
           {"mu_lung", s.mu_lung},
           {"mu_tumor", s.mu_tumor},
           {"mu_bone", s.mu_bone},
           {"motion_direction", s.motion_direction},
           {"uniform_motion", s.uniform_motion},
           {"taper_margin_mm", s.taper_margin_mm},
           {"taper_length_mm", s.taper_length_mm},
           {"apex_weight", s.apex_weight},
           {"breathing", s.breathing}};
}

void from_json(const json& j, PhantomSpec& s) {
  const char* ctx = "phantom";
  require_object(j, ctx);
  reject_unknown_keys(j,
                      {"dims", "spacing_mm", "body_semi_axes_mm", "lung_offset_x_mm", "lung_center_mm",
                       "lung_semi_axes_mm", "lung_size_jitter", "tumor_center_mm", "tumor_semi_axes_mm",
                       "tumor_radius_mm", "rib_period_mm", "rib_thickness_mm", "shell_thickness_mm",
                       "spine_radius_mm", "mu_body", "mu_lung", "mu_tumor", "mu_bone", "motion_direction",
                       "uniform_motion", "taper_margin_mm", "taper_length_mm", "apex_weight", "breathing"},
                      ctx);
  read_field(j, "dims", s.dims, ctx);
  read_field(j, "spacing_mm", s.spacing_mm, ctx);
  read_field(j, "body_semi_axes_mm", s.body_semi_axes_mm, ctx);
  read_field(j, "lung_offset_x_mm", s.lung_offset_x_mm, ctx);
  read_field(j, "lung_center_mm", s.lung_center_mm, ctx);
  read_field(j, "lung_semi_axes_mm", s.lung_semi_axes_mm, ctx);
  read_field(j, "lung_size_jitter", s.lung_size_jitter, ctx);
  read_field(j, "tumor_center_mm", s.tumor_center_mm, ctx);
  read_field(j, "tumor_semi_axes_mm", s.tumor_semi_axes_mm, ctx);
  if (j.contains("tumor_radius_mm")) {
    double r = 0.0;
    read_field(j, "tumor_radius_mm", r, ctx);
    s.tumor_semi_axes_mm = {r, r, r};
  }
  read_field(j, "rib_period_mm", s.rib_period_mm, ctx);
  read_field(j, "rib_thickness_mm", s.rib_thickness_mm, ctx);
  read_field(j, "shell_thickness_mm", s.shell_thickness_mm, ctx);
  read_field(j, "spine_radius_mm", s.spine_radius_mm, ctx);
  read_field(j, "mu_body", s.mu_body, ctx);
  read_field(j, "mu_lung", s.mu_lung, ctx);
  read_field(j, "mu_tumor", s.mu_tumor, ctx);
  read_field(j, "mu_bone", s.mu_bone, ctx);
  read_field(j, "motion_direction", s.motion_direction, ctx);
  read_field(j, "uniform_motion", s.uniform_motion, ctx);
  read_field(j, "taper_margin_mm", s.taper_margin_mm, ctx);
  read_field(j, "taper_length_mm", s.taper_length_mm, ctx);
  read_field(j, "apex_weight", s.apex_weight, ctx);
  if (j.contains("breathing")) {
    BreathingParams b = s.breathing;
    from_json(j.at("breathing"), b);
    s.breathing = b;
  }
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"d_model", c.d_model},
           {"n_heads", c.n_heads},
           {"n_layers_enc", c.n_layers_enc},
           {"n_layers_dec", c.n_layers_dec},
           {"d_ff", c.d_ff},
           {"patch_size", c.patch_size},
           {"T_obs", c.T_obs},
           {"T_pred", c.T_pred},
           {"dropout", c.dropout},
           {"image_size", c.image_size},
           {"activation", c.activation == Activation::Relu ? "relu" : "gelu"}};
}

void from_json(const json& j, ModelConfig& c) {
  const char* ctx = "model";
  require_object(j, ctx);
  reject_unknown_keys(j,
                      {"d_model", "n_heads", "n_layers_enc", "n_layers_dec", "d_ff", "patch_size", "T_obs",
                       "T_pred", "dropout", "image_size", "activation"},
                      ctx);
  read_field(j, "d_model", c.d_model, ctx);
  read_field(j, "n_heads", c.n_heads, ctx);
  read_field(j, "n_layers_enc", c.n_layers_enc, ctx);
  read_field(j, "n_layers_dec", c.n_layers_dec, ctx);
  read_field(j, "d_ff", c.d_ff, ctx);
  read_field(j, "patch_size", c.patch_size, ctx);
  read_field(j, "T_obs", c.T_obs, ctx);
  read_field(j, "T_pred", c.T_pred, ctx);
  read_field(j, "dropout", c.dropout, ctx);
  read_field(j, "image_size", c.image_size, ctx);
  if (j.contains("activation")) {
    std::string act;
    read_field(j, "activation", act, ctx);
    if (act == "gelu") {
      c.activation = Activation::Gelu;
    } else if (act == "relu") {
      c.activation = Activation::Relu;
    } else {
      fail(ErrorCode::Parameter, "model.activation must be \"gelu\" or \"relu\", got \"" + act + "\"");
    }
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr_min", c.lr_min},
           {"lr_max", c.lr_max},
           {"warmup_epochs", c.warmup_epochs},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  const char* ctx = "train";
  require_object(j, ctx);
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "lr_min", "lr_max", "warmup_epochs", "adam_beta1", "adam_beta2",
                       "adam_eps", "seed"},
                      ctx);
  read_field(j, "epochs", c.epochs, ctx);
  read_field(j, "batch_size", c.batch_size, ctx);
  read_field(j, "lr_min", c.lr_min, ctx);
  read_field(j, "lr_max", c.lr_max, ctx);
  read_field(j, "warmup_epochs", c.warmup_epochs, ctx);
  read_field(j, "adam_beta1", c.adam_beta1, ctx);
  read_field(j, "adam_beta2", c.adam_beta2, ctx);
  read_field(j, "adam_eps", c.adam_eps, ctx);
  read_field(j, "seed", c.seed, ctx);
}

void to_json(json& j, const SweepConfig& s) {
  j = json{{"n_train_grid", s.n_train_grid},
           {"seeds", s.seeds},
           {"n_test_sequences", s.n_test_sequences},
           {"test_duration_s", s.test_duration_s},
           {"setup_error_mm", s.setup_error_mm},
           {"threshold_mm", s.threshold_mm}};
}

void from_json(const json& j, SweepConfig& s) {
  const char* ctx = "sweep";
  require_object(j, ctx);
  reject_unknown_keys(
      j, {"n_train_grid", "seeds", "n_test_sequences", "test_duration_s", "setup_error_mm", "threshold_mm"}, ctx);
  read_field(j, "n_train_grid", s.n_train_grid, ctx);
  read_field(j, "seeds", s.seeds, ctx);
  read_field(j, "n_test_sequences", s.n_test_sequences, ctx);
  read_field(j, "test_duration_s", s.test_duration_s, ctx);
  read_field(j, "setup_error_mm", s.setup_error_mm, ctx);
  read_field(j, "threshold_mm", s.threshold_mm, ctx);
}

}  // namespace tmf
