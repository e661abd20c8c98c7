// Command-line front end: generate -> encode -> train-decoder ->
// train-propagator -> forecast -> evaluate, plus ingestion of external
// snapshot files. Every stage writes artifacts under --out and updates the
// run manifest for bit-exact replay in deterministic mode.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gled/config.hpp"
#include "gled/pipeline.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string preset = "ks";
    uint64_t seed = 0;
    bool seed_set = false;
    bool deterministic = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON run configuration (strict schema)");
    cmd->add_option("--preset", o.preset, "built-in preset: ks, bfs2d or channel3d");
    cmd->add_option("--seed", o.seed, "master seed for every stochastic stage")
        ->each([&o](const std::string&) { o.seed_set = true; });
    cmd->add_flag("--deterministic", o.deterministic,
                  "single-threaded execution for bit-exact replay");
    cmd->add_option("--out", o.out_dir, "output directory for artifacts");
}

gled::RunConfig resolve_config(const CommonOpts& o) {
    gled::RunConfig cfg =
        o.config_path.empty() ? gled::make_preset(o.preset) : gled::load_config(o.config_path);
    if (o.seed_set) cfg.seed = o.seed;
    if (o.deterministic) cfg.deterministic = true;
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-dynamics forecasting with a diffusion decoder"};
    app.require_subcommand(1);

    CommonOpts gen_o, enc_o, dec_o, prop_o, fc_o, ev_o;
    int n_train_override = -1;
    int dec_epochs = -1, prop_epochs = -1;
    double beta_guide_override = -1.0;
    long forecast_steps = -1;

    auto* gen = app.add_subcommand("generate", "integrate ground-truth trajectories");
    add_common(gen, gen_o);
    gen->add_option("--n-train", n_train_override, "number of training trajectories");

    auto* enc = app.add_subcommand("encode", "restrict the micro dataset to macro states");
    add_common(enc, enc_o);

    auto* dec = app.add_subcommand("train-decoder", "train the diffusion decoder");
    add_common(dec, dec_o);
    dec->add_option("--epochs", dec_epochs, "training epochs");

    auto* prop = app.add_subcommand("train-propagator", "train the attention propagator");
    add_common(prop, prop_o);
    prop->add_option("--epochs", prop_epochs, "training epochs");

    auto* fc = app.add_subcommand("forecast", "roll out macro dynamics and decode micro states");
    add_common(fc, fc_o);
    fc->add_option("--beta-guide", beta_guide_override, "guidance strength override");
    fc->add_option("--steps", forecast_steps, "prediction steps (overrides forecast horizon)");

    auto* ev = app.add_subcommand("evaluate", "compare forecasts against held-out truth");
    add_common(ev, ev_o);

    std::vector<std::string> ingest_files;
    std::vector<int> ingest_dims;
    double ingest_step = 1.0;
    std::string ingest_out = "ingested";
    auto* ing = app.add_subcommand("ingest", "convert raw snapshot files to the dataset format");
    ing->add_option("--files", ingest_files, "raw little-endian scalar files")->required();
    ing->add_option("--dims", ingest_dims, "time-major dims of each file")->required();
    ing->add_option("--step", ingest_step, "time step between stored states");
    ing->add_option("--out", ingest_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    auto log = gled::stdout_logger();
    try {
        if (*gen) {
            auto cfg = resolve_config(gen_o);
            if (n_train_override >= 1) cfg.task.n_train = n_train_override;
            gled::stage_generate(cfg, log);
        } else if (*enc) {
            gled::stage_encode(resolve_config(enc_o), log);
        } else if (*dec) {
            auto cfg = resolve_config(dec_o);
            if (dec_epochs >= 0) cfg.decoder_train.epochs = dec_epochs;
            gled::stage_train_decoder(cfg, log);
        } else if (*prop) {
            auto cfg = resolve_config(prop_o);
            if (prop_epochs >= 0) cfg.propagator_train.epochs = prop_epochs;
            gled::stage_train_propagator(cfg, log);
        } else if (*fc) {
            auto cfg = resolve_config(fc_o);
            if (beta_guide_override >= 0) cfg.residual.beta_guide = beta_guide_override;
            if (forecast_steps >= 0) {
                double dt = cfg.task.kind == "ks" ? cfg.task.ks.macro_step : cfg.task.ingest_step;
                cfg.forecast.horizon = forecast_steps * dt;
            }
            gled::stage_forecast(cfg, log);
        } else if (*ev) {
            gled::stage_evaluate(resolve_config(ev_o), 2.0, log);
        } else if (*ing) {
            std::vector<std::filesystem::path> paths(ingest_files.begin(), ingest_files.end());
            gled::stage_ingest(paths, ingest_dims, ingest_step, ingest_out, log);
        }
    } catch (const gled::ConfigError& e) {
        std::cerr << "error kind=config msg=" << e.what() << "\n";
        return 2;
    } catch (const gled::ContractError& e) {
        std::cerr << "error kind=contract msg=" << e.what() << "\n";
        return 3;
    } catch (const gled::NumericalError& e) {
        std::cerr << "error kind=numerical msg=" << e.what() << "\n";
        return 4;
    } catch (const gled::IngestionError& e) {
        std::cerr << "error kind=ingestion msg=" << e.what() << "\n";
        return 5;
    } catch (const gled::PersistenceError& e) {
        std::cerr << "error kind=persistence msg=" << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error kind=internal msg=" << e.what() << "\n";
        return 7;
    }
    return 0;
}
