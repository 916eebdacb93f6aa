#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/math.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace vegs::train {

struct LearningRates {
    /// Means decay log-linearly from init to final (both times the scene extent).
    double means_init = 1.6e-4;
    double means_final = 1.6e-6;
    double rotations = 1e-3;
    double scales = 5e-3;
    double opacities = 5e-2;
    double sh_dc = 2.5e-3;
    /// Higher-order SH use sh_dc / sh_rest_divisor.
    double sh_rest_divisor = 20.0;
    double residual_rotation = 1e-4;
    double residual_translation = 1e-4;
    /// Multiplier on every instance-Gaussian group; 0 freezes instance models.
    double instance_scale = 1.0;
    /// Multiplier on every static-Gaussian group; 0 freezes the static model.
    double static_scale = 1.0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

struct DensifyConfig {
    bool enabled = true;
    int start = 500;
    int stop = 15000;
    int interval = 100;
    double grad_threshold = 2e-4;
    /// Split instead of clone when the largest scale exceeds this fraction of the extent.
    double percent_dense = 0.01;
    double split_factor = 1.6;
    double prune_opacity = 0.005;
    int opacity_reset_interval = 3000;
    double opacity_reset_value = 0.01;
    /// Densification is skipped once the total count reaches this; 0 is unlimited.
    std::size_t max_gaussians = 0;
};

struct LossWeights {
    double lambda_c = 1.0;
    double lambda_box = 0.001;
    double lambda_cov = 0.1;
    double lambda_axis = 0.8;
    double lambda_score = 1e-11;
    double lambda_dssim = 0.2;
};

struct ScoreConfig {
    int tau = 25;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    /// "as_printed" uses (1 - alpha_bar) on the noise; "ddpm" uses sqrt(1 - alpha_bar).
    std::string noise_form = "as_printed";
    /// Square crop side after upscaling; 0 sends the native render.
    int crop = 512;
    std::string prompt_id = "scene";
    /// Augmentation modes drawn uniformly: any of "LR", "D".
    std::vector<std::string> evs_modes{"LR", "D"};
    int retries = 3;
    int timeout_s = 60;
    /// Prior width of the offline mock provider.
    double mock_sigma = 0.25;
};

struct TrainConfig {
    int iterations = 30000;
    int score_start = 25000;
    std::uint64_t seed = 0;
    /// Worker threads; 0 keeps the OpenMP default.
    int threads = 0;
    LearningRates lr;
    AdamConfig adam;
    DensifyConfig densify;
    LossWeights weights;
    ScoreConfig score;
    bool optimize_boxes = true;
    /// Hold out every test_stride-th frame (index % stride == 0); 0 trains on all frames.
    int test_stride = 8;
    double mask_threshold = 0.5;
    Vec3 background = Vec3::Zero();
    int log_interval = 100;
    /// Training views rendered for the metrics PSNR column.
    int psnr_views = 4;
    /// Save a checkpoint every K iterations; 0 saves only at the end.
    int checkpoint_interval = 0;

    void validate() const {
        auto nonneg = [](double v, const char* name) {
            if (!(v >= 0.0)) throw InvalidParameter(std::string(name) + " must be >= 0");
        };
        if (iterations < 0) throw InvalidParameter("iterations must be >= 0");
        if (score_start > iterations) throw InvalidParameter("score_start must be <= iterations");
        if (!(score.tau >= 1 && score.tau < score.T)) throw InvalidParameter("score.tau must be in [1, T)");
        if (score.noise_form != "as_printed" && score.noise_form != "ddpm")
            throw InvalidParameter("score.noise_form must be as_printed or ddpm");
        for (const auto& m : score.evs_modes)
            if (m != "LR" && m != "D") throw InvalidParameter("score.evs_modes entries must be LR or D");
        if (score.crop < 0) throw InvalidParameter("score.crop must be >= 0");
        nonneg(weights.lambda_c, "weights.lambda_c");
        nonneg(weights.lambda_box, "weights.lambda_box");
        nonneg(weights.lambda_cov, "weights.lambda_cov");
        nonneg(weights.lambda_score, "weights.lambda_score");
        if (!(weights.lambda_axis >= 0.0 && weights.lambda_axis <= 1.0))
            throw InvalidParameter("weights.lambda_axis must be in [0, 1]");
        if (!(weights.lambda_dssim >= 0.0 && weights.lambda_dssim <= 1.0))
            throw InvalidParameter("weights.lambda_dssim must be in [0, 1]");
        if (densify.interval <= 0) throw InvalidParameter("densify.interval must be > 0");
        if (!(densify.split_factor > 0.0)) throw InvalidParameter("densify.split_factor must be > 0");
        if (test_stride < 0) throw InvalidParameter("test_stride must be >= 0");
        if (log_interval <= 0) throw InvalidParameter("log_interval must be > 0");
        if (checkpoint_interval < 0) throw InvalidParameter("checkpoint_interval must be >= 0");
        if (threads < 0) throw InvalidParameter("threads must be >= 0");
    }
};

// Field lists for the config sub-structs; missing keys keep their defaults.
#define VEGS_JSON_TO(f) j[#f] = v.f;
#define VEGS_JSON_FROM(f) v.f = j.value(#f, d.f);
#define VEGS_JSON_STRUCT(Type, ...)                                                                        \
    inline void to_json(nlohmann::json& j, const Type& v) {                                                 \
        NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(VEGS_JSON_TO, __VA_ARGS__))                                \
    }                                                                                                       \
    inline void from_json(const nlohmann::json& j, Type& v) {                                               \
        const Type d{};                                                                                     \
        NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(VEGS_JSON_FROM, __VA_ARGS__))                              \
    }

VEGS_JSON_STRUCT(LearningRates, means_init, means_final, rotations, scales,
                                                opacities, sh_dc, sh_rest_divisor, residual_rotation,
                                                residual_translation, instance_scale, static_scale)
VEGS_JSON_STRUCT(AdamConfig, beta1, beta2, eps)
VEGS_JSON_STRUCT(DensifyConfig, enabled, start, stop, interval, grad_threshold,
                                                percent_dense, split_factor, prune_opacity,
                                                opacity_reset_interval, opacity_reset_value, max_gaussians)
VEGS_JSON_STRUCT(LossWeights, lambda_c, lambda_box, lambda_cov, lambda_axis,
                                                lambda_score, lambda_dssim)
VEGS_JSON_STRUCT(ScoreConfig, tau, T, beta_start, beta_end, noise_form, crop,
                                                prompt_id, evs_modes, retries, timeout_s, mock_sigma)

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"iterations", c.iterations},
         {"score_start", c.score_start},
         {"seed", c.seed},
         {"threads", c.threads},
         {"lr", c.lr},
         {"adam", c.adam},
         {"densify", c.densify},
         {"weights", c.weights},
         {"score", c.score},
         {"optimize_boxes", c.optimize_boxes},
         {"test_stride", c.test_stride},
         {"mask_threshold", c.mask_threshold},
         {"background", {c.background.x(), c.background.y(), c.background.z()}},
         {"log_interval", c.log_interval},
         {"psnr_views", c.psnr_views},
         {"checkpoint_interval", c.checkpoint_interval}};
}

namespace detail {

/// Reports keys of `given` that do not exist in `schema`, recursively.
inline void check_keys(const nlohmann::json& given, const nlohmann::json& schema, const std::string& path) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!schema.contains(key)) throw InvalidInput("unknown config key: " + full);
        if (schema.at(key).is_object()) {
            if (!value.is_object()) throw InvalidInput("config key " + full + " must be an object");
            check_keys(value, schema.at(key), full);
        }
    }
}

} // namespace detail

/// Strict parse: unknown keys and type mismatches are InvalidInput; missing
/// keys keep their defaults.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    detail::check_keys(j, nlohmann::json(TrainConfig{}), "");
    const TrainConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.score_start = j.value("score_start", d.score_start);
    c.seed = j.value("seed", d.seed);
    c.threads = j.value("threads", d.threads);
    c.lr = j.value("lr", d.lr);
    c.adam = j.value("adam", d.adam);
    c.densify = j.value("densify", d.densify);
    c.weights = j.value("weights", d.weights);
    c.score = j.value("score", d.score);
    c.optimize_boxes = j.value("optimize_boxes", d.optimize_boxes);
    c.test_stride = j.value("test_stride", d.test_stride);
    c.mask_threshold = j.value("mask_threshold", d.mask_threshold);
    if (j.contains("background")) {
        const auto& b = j.at("background");
        if (!b.is_array() || b.size() != 3) throw InvalidInput("background must be a 3-element array");
        c.background = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>()};
    } else {
        c.background = d.background;
    }
    c.log_interval = j.value("log_interval", d.log_interval);
    c.psnr_views = j.value("psnr_views", d.psnr_views);
    c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
}

inline TrainConfig parse_config(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c = j.get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Applies `key.sub=value`; the value is parsed as JSON, falling back to a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidInput("override must be key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    const nlohmann::json schema = TrainConfig{};
    nlohmann::json::json_pointer ptr;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        ptr /= key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (!schema.contains(ptr)) throw InvalidInput("unknown config key: " + key);
    j[ptr] = value;
}

} // namespace vegs::train
