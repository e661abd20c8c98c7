#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gled/core.hpp"
#include "gled/diffusion.hpp"
#include "gled/dynamics.hpp"
#include "gled/ks.hpp"
#include "gled/scalespace.hpp"

namespace gled {

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kToolVersion = "gled 0.1.0";

struct CaseConfig {
    std::string kind = "ks";  // ks | ingest
    ks::KsConfig ks;
    Shape micro_shape{64};
    int n_train = 500;
    int n_valid = 50;
    int n_test = 50;
    double burn_in = 50.0;
    double horizon = 96.0;
    // ingest-backed cases
    std::vector<std::string> ingest_files;
    double ingest_step = 1.0;
};

struct ScheduleConfig {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    int steps = 20;
};

struct TrainStageConfig {
    int epochs = 8;
    int batch = 16;
    long samples_per_epoch = 20000;
};

struct PropTrainStageConfig {
    int epochs = 4;
    long max_trajectories_per_epoch = 0;
    int batch_sequences = 1;
    double lr_decay = 1.0;
};

struct ForecastConfig {
    double warmup = 16.0;
    double horizon = 80.0;
};

struct ResidualConfig {
    std::string kind = "none";
    double sigma_r = 1.0;
    double beta_guide = 1.0;
    double sigma_guide = 0.002;
    std::vector<int> pin_indices;
    std::vector<double> pin_values;
    int components = 1;
    std::string stress_target_file;
};

struct RunConfig {
    int config_version = kConfigVersion;
    std::string preset = "ks";
    uint64_t seed = 1234;
    bool deterministic = false;
    std::string out_dir = "out";

    CaseConfig task;
    scale::RestrictionSpec restriction;
    ScheduleConfig schedule;
    diffusion::DenoiserConfig denoiser;
    dyn::AttentionConfig attention;
    std::string attention_activation = "relu";  // fixed; recorded for snapshots
    ResidualConfig residual;
    nn::AdamConfig optimizer;
    TrainStageConfig decoder_train;
    PropTrainStageConfig propagator_train;
    ForecastConfig forecast;

    long micro_size() const { return shape_numel(task.micro_shape); }
    long macro_size() const { return shape_numel(restriction.macro_shape); }

    void validate() const {
        if (config_version != kConfigVersion)
            throw ConfigError("unsupported config_version " + std::to_string(config_version));
        if (task.kind != "ks" && task.kind != "ingest")
            throw ConfigError("case kind must be 'ks' or 'ingest'");
        if (task.kind == "ks") {
            task.ks.validate();
            if (task.micro_shape != Shape{task.ks.grid_points})
                throw ConfigError("micro_shape must match ks grid_points");
        }
        scale::RestrictionSpec r = restriction;
        r.validate();
        if (schedule.steps < 2 || !(schedule.sigma_min > 0) ||
            !(schedule.sigma_max > schedule.sigma_min))
            throw ConfigError("bad noise schedule parameters");
        diffusion::DenoiserConfig d = denoiser;
        d.micro_len = static_cast<int>(micro_size());
        d.validate();
        dyn::AttentionConfig a = attention;
        a.d_z = static_cast<int>(macro_size());
        a.validate();
        if (attention_activation != "relu")
            throw ConfigError("attention activation is fixed to relu");
        if (!(forecast.warmup > 0) || !(forecast.horizon > 0))
            throw ConfigError("forecast spans must be positive");
    }

    diffusion::DenoiserConfig denoiser_for_case() const {
        auto d = denoiser;
        d.micro_len = static_cast<int>(micro_size());
        return d;
    }
    dyn::AttentionConfig attention_for_case() const {
        auto a = attention;
        a.d_z = static_cast<int>(macro_size());
        return a;
    }
    diffusion::ResidualSpec residual_spec() const;  // defined after helpers
};

// ---------------------------------------------------------------------------
// Presets (the three benchmark columns of the hyperparameter table)
// ---------------------------------------------------------------------------

inline RunConfig make_preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "ks") {
        c.task.kind = "ks";
        c.task.micro_shape = {64};
        c.restriction.micro_shape = {64};
        c.restriction.macro_shape = {16};
        c.restriction.mode = scale::RestrictMode::subsample;
        c.attention.window = 512;
        c.attention.layers = 8;
        c.attention.heads = 4;
        c.attention.d_model = 128;
        return c;
    }
    if (name == "bfs2d") {
        c.task.kind = "ingest";
        c.task.micro_shape = {512, 512};
        c.task.ingest_step = 0.05;
        c.restriction.micro_shape = {512, 512};
        c.restriction.macro_shape = {32, 32};
        c.restriction.mode = scale::RestrictMode::subsample;  // 512/32 divides evenly
        c.restriction.periodic = {false, false};
        c.attention.window = 40;
        c.attention.layers = 8;
        c.attention.heads = 4;
        c.attention.d_model = 256;
        return c;
    }
    if (name == "channel3d") {
        c.task.kind = "ingest";
        c.task.micro_shape = {40, 50, 30};
        c.task.ingest_step = 4.0;
        c.restriction.micro_shape = {40, 50, 30};
        c.restriction.macro_shape = {8, 32, 8};
        c.restriction.mode = scale::RestrictMode::linear_interpolate;  // 50 -> 32 has no stride
        c.restriction.periodic = {true, false, true};
        c.attention.window = 20;
        c.attention.layers = 2;
        c.attention.heads = 1;
        c.attention.d_model = 256;
        c.residual.kind = "reynolds_stress_target";
        c.residual.components = 1;
        return c;
    }
    throw ConfigError("unknown preset: " + name + " (expected ks, bfs2d or channel3d)");
}

// ---------------------------------------------------------------------------
// Strict JSON round trip: unknown keys are configuration errors.
// ---------------------------------------------------------------------------

namespace cfgio {

inline void expect_keys(const nlohmann::json& j, const std::string& where,
                        const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config key: " + where + "." + it.key());
}

template <class T>
void fetch(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
        }
    }
}

}  // namespace cfgio

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["config_version"] = c.config_version;
    j["preset"] = c.preset;
    j["seed"] = c.seed;
    j["deterministic"] = c.deterministic;
    j["out_dir"] = c.out_dir;
    j["case"] = {{"kind", c.task.kind},
                 {"ks", ks::ks_config_json(c.task.ks)},
                 {"micro_shape", c.task.micro_shape},
                 {"n_train", c.task.n_train},
                 {"n_valid", c.task.n_valid},
                 {"n_test", c.task.n_test},
                 {"burn_in", c.task.burn_in},
                 {"horizon", c.task.horizon},
                 {"ingest_files", c.task.ingest_files},
                 {"ingest_step", c.task.ingest_step}};
    std::vector<bool> periodic = c.restriction.periodic;
    j["restriction"] = {{"macro_shape", c.restriction.macro_shape},
                        {"mode", scale::to_string(c.restriction.mode)},
                        {"periodic", periodic}};
    j["schedule"] = {{"sigma_min", c.schedule.sigma_min},
                     {"sigma_max", c.schedule.sigma_max},
                     {"steps", c.schedule.steps}};
    j["denoiser"] = {{"channels", c.denoiser.channels},
                     {"conv_layers", c.denoiser.conv_layers},
                     {"kernel", c.denoiser.kernel},
                     {"time_embed", c.denoiser.time_embed},
                     {"levels", c.denoiser.levels}};
    j["attention"] = {{"d_model", c.attention.d_model},
                      {"heads", c.attention.heads},
                      {"layers", c.attention.layers},
                      {"window", c.attention.window},
                      {"d_qk", c.attention.qk_width()},
                      {"ffn_mult", c.attention.ffn_mult},
                      {"ln_eps", c.attention.ln_eps},
                      {"activation", c.attention_activation}};
    j["residual"] = {{"kind", c.residual.kind},
                     {"sigma_r", c.residual.sigma_r},
                     {"beta_guide", c.residual.beta_guide},
                     {"sigma_guide", c.residual.sigma_guide},
                     {"pin_indices", c.residual.pin_indices},
                     {"pin_values", c.residual.pin_values},
                     {"components", c.residual.components},
                     {"stress_target_file", c.residual.stress_target_file}};
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"beta1", c.optimizer.beta1},
                      {"beta2", c.optimizer.beta2},
                      {"eps", c.optimizer.eps}};
    j["decoder_train"] = {{"epochs", c.decoder_train.epochs},
                          {"batch", c.decoder_train.batch},
                          {"samples_per_epoch", c.decoder_train.samples_per_epoch}};
    j["propagator_train"] = {{"epochs", c.propagator_train.epochs},
                             {"max_trajectories_per_epoch",
                              c.propagator_train.max_trajectories_per_epoch},
                             {"batch_sequences", c.propagator_train.batch_sequences},
                             {"lr_decay", c.propagator_train.lr_decay}};
    j["forecast"] = {{"warmup", c.forecast.warmup}, {"horizon", c.forecast.horizon}};
    return j;
}

/// Overlays a JSON document on top of a preset-derived config. Every key is
/// validated; anything unrecognized is an error, not a warning.
inline RunConfig config_from_json(const nlohmann::json& j) {
    using cfgio::expect_keys;
    using cfgio::fetch;
    expect_keys(j, "config",
                {"config_version", "preset", "seed", "deterministic", "out_dir", "case",
                 "restriction", "schedule", "denoiser", "attention", "residual", "optimizer",
                 "decoder_train", "propagator_train", "forecast"});
    std::string preset = "ks";
    fetch(j, "preset", preset);
    RunConfig c = make_preset(preset);
    fetch(j, "config_version", c.config_version);
    fetch(j, "seed", c.seed);
    fetch(j, "deterministic", c.deterministic);
    fetch(j, "out_dir", c.out_dir);

    if (j.contains("case")) {
        const auto& jc = j.at("case");
        expect_keys(jc, "case",
                    {"kind", "ks", "micro_shape", "n_train", "n_valid", "n_test", "burn_in",
                     "horizon", "ingest_files", "ingest_step"});
        fetch(jc, "kind", c.task.kind);
        if (jc.contains("ks")) {
            const auto& jk = jc.at("ks");
            expect_keys(jk, "case.ks",
                        {"domain_length", "grid_points", "viscosity", "micro_step", "macro_step"});
            fetch(jk, "domain_length", c.task.ks.domain_length);
            fetch(jk, "grid_points", c.task.ks.grid_points);
            fetch(jk, "viscosity", c.task.ks.viscosity);
            fetch(jk, "micro_step", c.task.ks.micro_step);
            fetch(jk, "macro_step", c.task.ks.macro_step);
        }
        fetch(jc, "micro_shape", c.task.micro_shape);
        fetch(jc, "n_train", c.task.n_train);
        fetch(jc, "n_valid", c.task.n_valid);
        fetch(jc, "n_test", c.task.n_test);
        fetch(jc, "burn_in", c.task.burn_in);
        fetch(jc, "horizon", c.task.horizon);
        fetch(jc, "ingest_files", c.task.ingest_files);
        fetch(jc, "ingest_step", c.task.ingest_step);
        c.restriction.micro_shape = c.task.micro_shape;
    }
    if (j.contains("restriction")) {
        const auto& jr = j.at("restriction");
        expect_keys(jr, "restriction", {"macro_shape", "mode", "periodic"});
        fetch(jr, "macro_shape", c.restriction.macro_shape);
        if (jr.contains("mode"))
            c.restriction.mode = scale::restrict_mode_from(jr.at("mode").get<std::string>());
        if (jr.contains("periodic")) {
            std::vector<bool> p = jr.at("periodic").get<std::vector<bool>>();
            c.restriction.periodic = p;
        }
    }
    if (j.contains("schedule")) {
        const auto& js = j.at("schedule");
        expect_keys(js, "schedule", {"sigma_min", "sigma_max", "steps"});
        fetch(js, "sigma_min", c.schedule.sigma_min);
        fetch(js, "sigma_max", c.schedule.sigma_max);
        fetch(js, "steps", c.schedule.steps);
    }
    if (j.contains("denoiser")) {
        const auto& jd = j.at("denoiser");
        expect_keys(jd, "denoiser", {"channels", "conv_layers", "kernel", "time_embed", "levels"});
        fetch(jd, "channels", c.denoiser.channels);
        fetch(jd, "conv_layers", c.denoiser.conv_layers);
        fetch(jd, "kernel", c.denoiser.kernel);
        fetch(jd, "time_embed", c.denoiser.time_embed);
        fetch(jd, "levels", c.denoiser.levels);
    }
    if (j.contains("attention")) {
        const auto& ja = j.at("attention");
        expect_keys(ja, "attention",
                    {"d_model", "heads", "layers", "window", "d_qk", "ffn_mult", "ln_eps",
                     "activation"});
        fetch(ja, "d_model", c.attention.d_model);
        fetch(ja, "heads", c.attention.heads);
        fetch(ja, "layers", c.attention.layers);
        fetch(ja, "window", c.attention.window);
        fetch(ja, "d_qk", c.attention.d_qk);
        fetch(ja, "ffn_mult", c.attention.ffn_mult);
        fetch(ja, "ln_eps", c.attention.ln_eps);
        fetch(ja, "activation", c.attention_activation);
    }
    if (j.contains("residual")) {
        const auto& jr = j.at("residual");
        expect_keys(jr, "residual",
                    {"kind", "sigma_r", "beta_guide", "sigma_guide", "pin_indices", "pin_values",
                     "components", "stress_target_file"});
        fetch(jr, "kind", c.residual.kind);
        fetch(jr, "sigma_r", c.residual.sigma_r);
        fetch(jr, "beta_guide", c.residual.beta_guide);
        fetch(jr, "sigma_guide", c.residual.sigma_guide);
        fetch(jr, "pin_indices", c.residual.pin_indices);
        fetch(jr, "pin_values", c.residual.pin_values);
        fetch(jr, "components", c.residual.components);
        fetch(jr, "stress_target_file", c.residual.stress_target_file);
    }
    if (j.contains("optimizer")) {
        const auto& jo = j.at("optimizer");
        expect_keys(jo, "optimizer", {"lr", "beta1", "beta2", "eps"});
        fetch(jo, "lr", c.optimizer.lr);
        fetch(jo, "beta1", c.optimizer.beta1);
        fetch(jo, "beta2", c.optimizer.beta2);
        fetch(jo, "eps", c.optimizer.eps);
    }
    if (j.contains("decoder_train")) {
        const auto& jt = j.at("decoder_train");
        expect_keys(jt, "decoder_train", {"epochs", "batch", "samples_per_epoch"});
        fetch(jt, "epochs", c.decoder_train.epochs);
        fetch(jt, "batch", c.decoder_train.batch);
        fetch(jt, "samples_per_epoch", c.decoder_train.samples_per_epoch);
    }
    if (j.contains("propagator_train")) {
        const auto& jt = j.at("propagator_train");
        expect_keys(jt, "propagator_train",
                    {"epochs", "max_trajectories_per_epoch", "batch_sequences", "lr_decay"});
        fetch(jt, "epochs", c.propagator_train.epochs);
        fetch(jt, "max_trajectories_per_epoch", c.propagator_train.max_trajectories_per_epoch);
        fetch(jt, "batch_sequences", c.propagator_train.batch_sequences);
        fetch(jt, "lr_decay", c.propagator_train.lr_decay);
    }
    if (j.contains("forecast")) {
        const auto& jf = j.at("forecast");
        expect_keys(jf, "forecast", {"warmup", "horizon"});
        fetch(jf, "warmup", c.forecast.warmup);
        fetch(jf, "horizon", c.forecast.horizon);
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

inline diffusion::ResidualSpec RunConfig::residual_spec() const {
    diffusion::ResidualSpec rs;
    rs.kind = residual.kind;
    rs.sigma_r = residual.sigma_r;
    rs.beta_guide = residual.beta_guide;
    rs.sigma_guide = residual.sigma_guide;
    rs.pin_indices = residual.pin_indices;
    rs.pin_values = residual.pin_values;
    rs.components = residual.components;
    if (rs.kind == "reynolds_stress_target" && !residual.stress_target_file.empty()) {
        ks::Trajectory t = read_trajectory(residual.stress_target_file);
        rs.stress_targets = t.states.data;
    } else if (rs.kind == "reynolds_stress_target" && rs.stress_targets.empty()) {
        size_t pairs = static_cast<size_t>(rs.components) * (rs.components + 1) / 2;
        rs.stress_targets.assign(pairs, 0.0);
    }
    return rs;
}

}  // namespace gled
