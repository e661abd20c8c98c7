#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "gled/config.hpp"
#include "gled/dataset.hpp"
#include "gled/diffusion.hpp"
#include "gled/dynamics.hpp"
#include "gled/ks.hpp"
#include "gled/scalespace.hpp"
#include "gled/stats.hpp"

namespace gled {

using LogFn = std::function<void(const std::string&)>;

inline LogFn stdout_logger() {
    return [](const std::string& line) { std::cout << line << std::endl; };
}

struct RunPaths {
    std::filesystem::path root;
    std::filesystem::path dataset() const { return root / "dataset"; }
    std::filesystem::path macro() const { return root / "macro"; }
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path forecast() const { return root / "forecast"; }
    std::filesystem::path metrics() const { return root / "metrics"; }
    std::filesystem::path manifest() const { return root / "run_manifest.json"; }
    std::filesystem::path decoder_ckpt() const { return checkpoints() / "decoder.gckpt"; }
    std::filesystem::path propagator_ckpt() const { return checkpoints() / "propagator.gckpt"; }
};

/// Everything needed to replay a run: config snapshot, artifact paths and the
/// tool version. Stages merge their outputs in as they complete.
struct RunManifest {
    nlohmann::json doc;

    static RunManifest load_or_create(const RunPaths& paths, const RunConfig& cfg) {
        RunManifest m;
        std::ifstream is(paths.manifest());
        if (is) {
            try {
                is >> m.doc;
            } catch (const nlohmann::json::exception&) {
                m.doc = nlohmann::json::object();
            }
        }
        m.doc["tool_version"] = kToolVersion;
        m.doc["config"] = to_json(cfg);
        if (!m.doc.contains("artifacts")) m.doc["artifacts"] = nlohmann::json::object();
        return m;
    }

    void set_artifact(const std::string& key, const std::string& value) {
        doc["artifacts"][key] = value;
    }

    void save(const RunPaths& paths) const {
        std::filesystem::create_directories(paths.root);
        std::ofstream os(paths.manifest(), std::ios::trunc);
        if (!os) throw PersistenceError("cannot write run manifest");
        os << doc.dump(2) << "\n";
    }
};

inline RunPaths run_paths(const RunConfig& cfg) {
    return RunPaths{std::filesystem::path(cfg.out_dir)};
}

inline void apply_determinism(const RunConfig& cfg) {
    if (cfg.deterministic) set_max_threads(1);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline DatasetManifest stage_generate(const RunConfig& cfg, const LogFn& log = {}) {
    cfg.validate();
    apply_determinism(cfg);
    require(cfg.task.kind == "ks", "generate applies to the ks case; use ingest otherwise");
    RunPaths paths = run_paths(cfg);
    auto manifest = ks::generate_dataset(cfg.task.ks, cfg.task.n_train, cfg.task.n_valid,
                                         cfg.task.burn_in, cfg.seed, paths.dataset(),
                                         cfg.task.horizon, cfg.task.n_test);
    if (log)
        log("stage=generate n_train=" + std::to_string(cfg.task.n_train) +
            " n_valid=" + std::to_string(cfg.task.n_valid) +
            " n_test=" + std::to_string(cfg.task.n_test) + " dir=" + paths.dataset().string());
    auto rm = RunManifest::load_or_create(paths, cfg);
    rm.set_artifact("dataset_manifest", (paths.dataset() / "manifest.json").string());
    rm.save(paths);
    return manifest;
}

inline DatasetManifest stage_encode(const RunConfig& cfg, const LogFn& log = {}) {
    cfg.validate();
    apply_determinism(cfg);
    RunPaths paths = run_paths(cfg);
    auto micro = DatasetManifest::load(paths.dataset() / "manifest.json");
    auto macro = scale::encode_dataset(micro, cfg.restriction, paths.macro());
    if (log)
        log("stage=encode trajectories=" + std::to_string(macro.entries.size()) +
            " macro_shape=" + shape_str(cfg.restriction.macro_shape));
    auto rm = RunManifest::load_or_create(paths, cfg);
    rm.set_artifact("macro_manifest", (paths.macro() / "manifest.json").string());
    rm.save(paths);
    return macro;
}

inline void stage_train_decoder(const RunConfig& cfg, const LogFn& log = {}) {
    cfg.validate();
    apply_determinism(cfg);
    RunPaths paths = run_paths(cfg);
    auto micro = DatasetManifest::load(paths.dataset() / "manifest.json");

    diffusion::Denoiser<float> net(cfg.denoiser_for_case(), cfg.seed);
    auto sched = diffusion::build_schedule(cfg.schedule.sigma_min, cfg.schedule.sigma_max,
                                           cfg.schedule.steps);
    diffusion::DecoderTrainConfig tc;
    tc.epochs = cfg.decoder_train.epochs;
    tc.batch = cfg.decoder_train.batch;
    tc.samples_per_epoch = cfg.decoder_train.samples_per_epoch;
    tc.adam = cfg.optimizer;
    tc.seed = cfg.seed;
    diffusion::train_decoder(net, micro, cfg.restriction, sched, tc, log);

    std::filesystem::create_directories(paths.checkpoints());
    nn::save_checkpoint(net.params(), paths.decoder_ckpt());
    if (log) log("stage=train-decoder checkpoint=" + paths.decoder_ckpt().string());
    auto rm = RunManifest::load_or_create(paths, cfg);
    rm.set_artifact("decoder_checkpoint", paths.decoder_ckpt().string());
    rm.save(paths);
}

inline void stage_train_propagator(const RunConfig& cfg, const LogFn& log = {}) {
    cfg.validate();
    apply_determinism(cfg);
    RunPaths paths = run_paths(cfg);
    auto macro = DatasetManifest::load(paths.macro() / "manifest.json");

    dyn::Propagator<float> model(cfg.attention_for_case(), cfg.seed);
    dyn::PropagatorTrainConfig tc;
    tc.epochs = cfg.propagator_train.epochs;
    tc.max_trajectories_per_epoch = cfg.propagator_train.max_trajectories_per_epoch;
    tc.batch_sequences = cfg.propagator_train.batch_sequences;
    tc.lr_decay = cfg.propagator_train.lr_decay;
    tc.adam = cfg.optimizer;
    tc.seed = cfg.seed;
    dyn::train_propagator(model, macro, tc, log);

    std::filesystem::create_directories(paths.checkpoints());
    nn::save_checkpoint(model.params(), paths.propagator_ckpt());
    if (log) log("stage=train-propagator checkpoint=" + paths.propagator_ckpt().string());
    auto rm = RunManifest::load_or_create(paths, cfg);
    rm.set_artifact("propagator_checkpoint", paths.propagator_ckpt().string());
    rm.save(paths);
}

struct ForecastSummary {
    long trajectories = 0;
    long steps = 0;
    long warmup_states = 0;
};

/// Warm-up restriction -> attention rollout -> per-state diffusion decode.
/// Guidance is active only when the residual kind is not "none".
inline ForecastSummary stage_forecast(const RunConfig& cfg, const LogFn& log = {}) {
    cfg.validate();
    apply_determinism(cfg);
    RunPaths paths = run_paths(cfg);

    if (!std::filesystem::exists(paths.decoder_ckpt()) ||
        !std::filesystem::exists(paths.propagator_ckpt()))
        throw ContractError("forecast needs trained decoder and propagator checkpoints");

    diffusion::Denoiser<float> net(cfg.denoiser_for_case(), cfg.seed);
    nn::load_checkpoint(net.params(), paths.decoder_ckpt());
    dyn::Propagator<float> model(cfg.attention_for_case(), cfg.seed);
    nn::load_checkpoint(model.params(), paths.propagator_ckpt());

    auto sched = diffusion::build_schedule(cfg.schedule.sigma_min, cfg.schedule.sigma_max,
                                           cfg.schedule.steps);
    auto rs = cfg.residual_spec();

    auto dataset = DatasetManifest::load(paths.dataset() / "manifest.json");
    auto test_files = dataset.files("test");
    require(!test_files.empty(), "forecast needs test trajectories in the dataset");

    const double dt = cfg.task.kind == "ks" ? cfg.task.ks.macro_step : cfg.task.ingest_step;
    const long warmup_states = static_cast<long>(std::round(cfg.forecast.warmup / dt)) + 1;
    const long n_steps = static_cast<long>(std::round(cfg.forecast.horizon / dt));

    std::filesystem::create_directories(paths.forecast());
    const Shape micro_shape = cfg.task.micro_shape;
    const int d_z = static_cast<int>(cfg.macro_size());

    parallel_for(static_cast<long>(test_files.size()), [&](long ti) {
        ks::Trajectory truth = read_trajectory(test_files[ti]);
        require(truth.count() >= warmup_states,
                "test trajectory shorter than the warm-up span");

        // restrict the warm-up micro states
        NdArray warm({static_cast<int>(warmup_states), d_z});
        for (long s = 0; s < warmup_states; ++s) {
            NdArray ms(micro_shape,
                       std::vector<double>(truth.state(s).begin(), truth.state(s).end()));
            auto z = scale::restrict(ms, cfg.restriction);
            std::copy(z.data.begin(), z.data.end(), warm.ptr() + s * d_z);
        }

        auto roll = model.rollout(warm, n_steps);
        if (!roll.completed && log)
            log("warn stage=forecast traj=" + std::to_string(ti) + " msg=" + roll.diagnostic);

        // decode every macro state; one rng stream per (trajectory, step)
        long got = roll.states.extent(0);
        Shape pred_shape = micro_shape;
        pred_shape.insert(pred_shape.begin(), static_cast<int>(got));
        ks::Trajectory pred;
        pred.states = NdArray(pred_shape);
        pred.step = dt;
        pred.t0 = truth.t0 + warmup_states * dt;
        for (long s = 0; s < got; ++s) {
            NdArray z({d_z});
            std::copy_n(roll.states.ptr() + s * d_z, d_z, z.data.begin());
            z.shape = cfg.restriction.macro_shape;
            CounterRng rng(cfg.seed ^ (0xF0C5ull + static_cast<uint64_t>(ti)),
                           static_cast<uint64_t>(s));
            std::vector<double> micro =
                rs.active() ? diffusion::guided_sample(net, z, cfg.restriction, sched, rs, rng)
                            : diffusion::sample(net, z, cfg.restriction, sched, rng);
            std::copy(micro.begin(), micro.end(), pred.states.ptr() + s * pred.states.stride(0));
        }

        char buf[32];
        std::snprintf(buf, sizeof(buf), "pred_%04ld.gled", ti);
        write_trajectory(paths.forecast() / buf, pred, 8);

        ks::Trajectory zroll;
        zroll.states = roll.states;
        zroll.step = dt;
        zroll.t0 = pred.t0;
        std::snprintf(buf, sizeof(buf), "macro_%04ld.gled", ti);
        write_trajectory(paths.forecast() / buf, zroll, 8);
    });

    if (log)
        log("stage=forecast trajectories=" + std::to_string(test_files.size()) +
            " warmup_states=" + std::to_string(warmup_states) +
            " steps=" + std::to_string(n_steps) + " guided=" + (rs.active() ? "yes" : "no"));
    auto rm = RunManifest::load_or_create(paths, cfg);
    rm.set_artifact("forecast_dir", paths.forecast().string());
    rm.save(paths);
    return {static_cast<long>(test_files.size()), n_steps, warmup_states};
}

struct EvaluationReport {
    double mean_e_short = 0;   // mean e(t) over the first `short_span` time units
    double max_e_short = 0;    // max of the per-time mean e(t) within the span
    double max_abs_u = 0;      // over all predicted states
    double tv_distance = 0;    // ux-uxx density, prediction vs truth
    double mean_pred = 0, mean_truth = 0;
    double var_pred = 0, var_truth = 0;
    double std_truth = 0;
    long trajectories = 0;
};

/// Compares forecast output against the held-out truth tails and emits CSV
/// plus a metrics JSON with stable keys.
inline EvaluationReport stage_evaluate(const RunConfig& cfg, double short_span = 2.0,
                                       const LogFn& log = {}) {
    cfg.validate();
    apply_determinism(cfg);
    RunPaths paths = run_paths(cfg);
    require(cfg.task.kind == "ks", "evaluate currently applies to the ks case");

    auto dataset = DatasetManifest::load(paths.dataset() / "manifest.json");
    auto test_files = dataset.files("test");
    require(!test_files.empty(), "evaluate needs test trajectories");

    const double dt = cfg.task.ks.macro_step;
    const long warmup_states = static_cast<long>(std::round(cfg.forecast.warmup / dt)) + 1;

    EvaluationReport rep;
    std::vector<double> e_sum;
    std::vector<long> e_count;
    std::vector<NdArray> pred_blocks, truth_blocks;
    double sum_p = 0, sq_p = 0, sum_t = 0, sq_t = 0;
    long n_p = 0, n_t = 0;

    for (size_t ti = 0; ti < test_files.size(); ++ti) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "pred_%04zu.gled", ti);
        auto pred_path = paths.forecast() / buf;
        if (!std::filesystem::exists(pred_path)) continue;
        ks::Trajectory pred = read_trajectory(pred_path);
        ks::Trajectory truth = read_trajectory(test_files[ti]);

        long avail = std::min<long>(pred.count(), truth.count() - warmup_states);
        require(avail > 0, "no overlapping span between forecast and truth");
        ks::Trajectory truth_tail;
        truth_tail.states = NdArray({static_cast<int>(avail), truth.states.extent(1)});
        std::copy_n(truth.states.ptr() + warmup_states * truth.states.stride(0),
                    truth_tail.states.size(), truth_tail.states.ptr());
        truth_tail.step = dt;
        ks::Trajectory pred_cut;
        pred_cut.states = NdArray({static_cast<int>(avail), pred.states.extent(1)});
        std::copy_n(pred.states.ptr(), pred_cut.states.size(), pred_cut.states.ptr());
        pred_cut.step = dt;

        auto series = stats::relative_error(pred_cut, truth_tail);
        if (e_sum.size() < series.e.size()) {
            e_sum.resize(series.e.size(), 0.0);
            e_count.resize(series.e.size(), 0);
        }
        for (size_t s = 0; s < series.e.size(); ++s)
            if (series.valid[s]) {
                e_sum[s] += series.e[s];
                e_count[s] += 1;
            }

        for (double v : pred_cut.states.data) {
            rep.max_abs_u = std::max(rep.max_abs_u, std::abs(v));
            sum_p += v;
            sq_p += v * v;
            ++n_p;
        }
        for (double v : truth_tail.states.data) {
            sum_t += v;
            sq_t += v * v;
            ++n_t;
        }
        pred_blocks.push_back(std::move(pred_cut.states));
        truth_blocks.push_back(std::move(truth_tail.states));
        ++rep.trajectories;
    }
    require(rep.trajectories > 0, "evaluate found no forecast trajectories");

    // e(t) aggregate and short-horizon mean
    std::vector<std::vector<double>> rows;
    double short_acc = 0;
    long short_n = 0;
    for (size_t s = 0; s < e_sum.size(); ++s) {
        double t = (static_cast<double>(s) + 1) * dt;
        double mean_e = e_count[s] ? e_sum[s] / e_count[s] : 0.0;
        rows.push_back({t, mean_e, static_cast<double>(e_count[s])});
        if (t <= short_span + 1e-9) {
            short_acc += mean_e;
            rep.max_e_short = std::max(rep.max_e_short, mean_e);
            ++short_n;
        }
    }
    rep.mean_e_short = short_n ? short_acc / short_n : 0.0;
    std::filesystem::create_directories(paths.metrics());
    stats::write_csv(paths.metrics() / "relative_error.csv", {"t", "mean_e", "count"}, rows);

    // ux-uxx density agreement on matched bins spanning the truth percentiles
    std::vector<const NdArray*> tptr, pptr;
    std::vector<double> all_ux, all_uxx;
    for (const auto& b : truth_blocks) {
        auto cloud = stats::derivative_cloud(b, cfg.task.ks.domain_length);
        all_ux.insert(all_ux.end(), cloud.ux.begin(), cloud.ux.end());
        all_uxx.insert(all_uxx.end(), cloud.uxx.begin(), cloud.uxx.end());
        tptr.push_back(&b);
    }
    for (const auto& b : pred_blocks) pptr.push_back(&b);
    auto [ux_lo, ux_hi] = stats::symmetric_percentile_range(all_ux);
    auto [uxx_lo, uxx_hi] = stats::symmetric_percentile_range(all_uxx);
    (void)ux_lo;
    (void)uxx_lo;
    auto h_truth =
        stats::ux_uxx_density(tptr, cfg.task.ks.domain_length, 50, 50, ux_hi, uxx_hi);
    auto h_pred = stats::ux_uxx_density(pptr, cfg.task.ks.domain_length, 50, 50, ux_hi, uxx_hi);
    rep.tv_distance = stats::histogram_distance(h_truth, h_pred);

    rep.mean_pred = sum_p / n_p;
    rep.mean_truth = sum_t / n_t;
    rep.var_pred = sq_p / n_p - rep.mean_pred * rep.mean_pred;
    rep.var_truth = sq_t / n_t - rep.mean_truth * rep.mean_truth;
    rep.std_truth = std::sqrt(rep.var_truth);

    nlohmann::json metrics = {
        {"mean_e_short", rep.mean_e_short}, {"max_e_short", rep.max_e_short},
        {"short_span", short_span},         {"max_abs_u", rep.max_abs_u},
        {"tv_distance", rep.tv_distance},   {"mean_pred", rep.mean_pred},
        {"mean_truth", rep.mean_truth},     {"var_pred", rep.var_pred},
        {"var_truth", rep.var_truth},       {"trajectories", rep.trajectories}};
    std::ofstream os(paths.metrics() / "metrics.json", std::ios::trunc);
    os << metrics.dump(2) << "\n";

    if (log)
        log("stage=evaluate mean_e_short=" + std::to_string(rep.mean_e_short) +
            " max_e_short=" + std::to_string(rep.max_e_short) +
            " max_abs_u=" + std::to_string(rep.max_abs_u) +
            " tv_distance=" + std::to_string(rep.tv_distance) +
            " var_ratio=" + std::to_string(rep.var_pred / rep.var_truth));
    auto rm = RunManifest::load_or_create(paths, cfg);
    rm.set_artifact("metrics", (paths.metrics() / "metrics.json").string());
    rm.save(paths);
    return rep;
}

/// Converts raw little-endian scalar files into the trajectory container.
/// The scalar width is inferred from the file size against the declared
/// dims; anything else is an ingestion error naming the expected byte count.
inline DatasetManifest stage_ingest(const std::vector<std::filesystem::path>& files,
                                    const Shape& dims, double step,
                                    const std::filesystem::path& out_dir, const LogFn& log = {}) {
    require(!dims.empty(), "ingest needs declared dims");
    const long count = shape_numel(dims);
    std::filesystem::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    manifest.source = {{"kind", "ingested"}, {"dims", dims}, {"step", step}};

    for (size_t i = 0; i < files.size(); ++i) {
        std::error_code ec;
        auto size = std::filesystem::file_size(files[i], ec);
        if (ec) throw IngestionError("cannot stat " + files[i].string());
        int width;
        if (size == static_cast<uintmax_t>(count) * 8)
            width = 8;
        else if (size == static_cast<uintmax_t>(count) * 4)
            width = 4;
        else
            throw IngestionError("size mismatch in " + files[i].string() + ": got " +
                                 std::to_string(size) + " bytes, expected " +
                                 std::to_string(count * 8) + " (f64) or " +
                                 std::to_string(count * 4) + " (f32) for dims " +
                                 shape_str(dims));

        std::ifstream is(files[i], std::ios::binary);
        if (!is) throw IngestionError("cannot read " + files[i].string());
        ks::Trajectory traj;
        traj.states = NdArray(dims);
        traj.step = step;
        if (width == 8) {
            is.read(reinterpret_cast<char*>(traj.states.ptr()), count * 8);
        } else {
            std::vector<float> f(count);
            is.read(reinterpret_cast<char*>(f.data()), count * 4);
            for (long k = 0; k < count; ++k) traj.states.data[k] = f[k];
        }
        if (!is) throw IngestionError("truncated read of " + files[i].string());

        char buf[32];
        std::snprintf(buf, sizeof(buf), "ingest_%04zu.gled", i);
        write_trajectory(out_dir / buf, traj, width);
        manifest.entries.push_back({buf, 0, "train"});
    }
    manifest.save(out_dir / "manifest.json");
    if (log)
        log("stage=ingest files=" + std::to_string(files.size()) + " dims=" + shape_str(dims));
    return manifest;
}

}  // namespace gled
