#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "gled/core.hpp"
#include "gled/dataset.hpp"
#include "gled/nn/graph.hpp"
#include "gled/nn/params.hpp"
#include "gled/rng.hpp"
#include "gled/scalespace.hpp"

namespace gled::diffusion {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Strictly increasing noise scales sigma_1..sigma_N of the variance-exploding
/// forward process eps_i = s + sigma_i * xi.
struct NoiseSchedule {
    std::vector<double> sigmas;

    int count() const { return static_cast<int>(sigmas.size()); }

    /// 1-based level access, matching the forward-process indexing.
    double sigma(int i) const {
        require(i >= 1 && i <= count(), "noise level out of range");
        return sigmas[static_cast<size_t>(i - 1)];
    }

    void validate() const {
        if (count() < 2) throw ConfigError("noise schedule needs at least 2 levels");
        for (int i = 0; i < count(); ++i) {
            if (!(sigmas[i] > 0)) throw ConfigError("noise scales must be positive");
            if (i && !(sigmas[i] > sigmas[i - 1]))
                throw ConfigError("noise scales must be strictly increasing");
        }
    }

    /// The terminal scale should dominate the data scale (10x the largest
    /// training-state norm). Violations degrade sampling but are not fatal.
    bool dominates_data_scale(double max_state_norm) const {
        return sigmas.back() >= 10.0 * max_state_norm;
    }
};

/// Geometric ladder sigma_i = smin * (smax/smin)^((i-1)/(N-1)).
inline NoiseSchedule build_schedule(double sigma_min, double sigma_max, int n) {
    if (!(sigma_min > 0) || !(sigma_max > sigma_min))
        throw ConfigError("need 0 < sigma_min < sigma_max");
    if (n < 2) throw ConfigError("need at least 2 noise levels");
    NoiseSchedule s;
    s.sigmas.resize(n);
    double ratio = std::log(sigma_max / sigma_min) / (n - 1);
    for (int i = 0; i < n; ++i) s.sigmas[i] = sigma_min * std::exp(ratio * i);
    s.sigmas.front() = sigma_min;
    s.sigmas.back() = sigma_max;
    return s;
}

/// Forward process draw: eps_i = s + sigma_i * xi.
inline std::vector<double> noising(std::span<const double> s, int i, const NoiseSchedule& sched,
                                   CounterRng& rng) {
    double sigma = sched.sigma(i);
    std::vector<double> out(s.size());
    for (size_t j = 0; j < s.size(); ++j) out[j] = s[j] + sigma * rng.normal();
    return out;
}

/// Exact moments of the tractable reverse step from level i+1 to i.
struct ReverseMoments {
    std::vector<double> mean;
    double variance = 0.0;
};

inline ReverseMoments reverse_moments(std::span<const double> shat,
                                      std::span<const double> eps_next, double sigma_i,
                                      double sigma_next) {
    require(sigma_i > 0 && sigma_i < sigma_next, "reverse step needs 0 < sigma_i < sigma_{i+1}");
    require(shat.size() == eps_next.size(), "reverse moments shape mismatch");
    double s2i = sigma_i * sigma_i;
    double s2n = sigma_next * sigma_next;
    double a = (s2n - s2i) / s2n;
    double b = s2i / s2n;
    ReverseMoments rm;
    rm.mean.resize(shat.size());
    for (size_t j = 0; j < shat.size(); ++j) rm.mean[j] = a * shat[j] + b * eps_next[j];
    rm.variance = (s2n - s2i) * s2i / s2n;
    return rm;
}

/// Score of the noised marginal via the denoiser estimate: (shat - eps)/sigma^2.
inline std::vector<double> score(std::span<const double> shat, std::span<const double> eps,
                                 double sigma) {
    require(sigma > 0, "score needs sigma > 0");
    require(shat.size() == eps.size(), "score shape mismatch");
    std::vector<double> out(shat.size());
    double inv = 1.0 / (sigma * sigma);
    for (size_t j = 0; j < shat.size(); ++j) out[j] = (shat[j] - eps[j]) * inv;
    return out;
}

// ---------------------------------------------------------------------------
// Conditional denoiser network
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int micro_len = 64;
    int channels = 32;
    int conv_layers = 4;  // hidden conv layers; the in/out projections are fixed
    int kernel = 5;
    int time_embed = 32;
    int levels = 2;

    void validate() const {
        if (micro_len < 4 || micro_len % 2 != 0)
            throw ConfigError("denoiser micro_len must be even and >= 4");
        if (channels < 1 || kernel % 2 != 1) throw ConfigError("bad denoiser channels/kernel");
        if (conv_layers != 4) throw ConfigError("denoiser is built with 4 hidden conv layers");
        if (levels != 2) throw ConfigError("denoiser is built with 2 resolution levels");
        if (time_embed < 2 || time_embed % 2 != 0)
            throw ConfigError("time_embed must be even and >= 2");
    }
};

/// U-Net style conditional denoiser shat(z, eps_i, i). The macro state enters
/// as a lifted extra channel; the noise level enters as a sinusoidal embedding
/// mapped to per-layer channel scale/shift. The final projection starts at
/// zero, so an untrained net predicts the zero field.
template <class T>
class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        CounterRng rng(init_seed, /*stream=*/0x0D15EA5Eull);
        const int C = cfg_.channels, K = cfg_.kernel, W = cfg_.time_embed;
        auto conv_init = [&](const std::string& name, int out_c, int in_c) {
            params_.create_normal(name + ".w", {out_c, in_c, K}, rng,
                                  1.0 / std::sqrt(static_cast<double>(in_c * K)));
            params_.create(name + ".b", {out_c});
        };
        conv_init("conv_in", C, 2);
        conv_init("conv1", C, C);
        conv_init("conv2", C, C);
        conv_init("conv3", C, C);
        conv_init("conv4", C, 2 * C);
        params_.create("conv_out.w", {1, C, K});  // zero: untrained net predicts 0
        params_.create("conv_out.b", {1});
        params_.create_normal("time.w", {W, W}, rng, 1.0 / std::sqrt(static_cast<double>(W)));
        params_.create("time.b", {W});
        for (int f = 0; f < 5; ++f) {
            // zero-initialized conditioning keeps the film paths neutral at start
            params_.create("film" + std::to_string(f) + ".w", {W, 2 * C});
            params_.create("film" + std::to_string(f) + ".b", {2 * C});
        }
    }

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    /// Graph forward. eps_raw and cond are [B, L]; emb is [B, W]; sigma is the
    /// noise scale of every sample's level (per-row input normalization
    /// 1/sqrt(1+sigma^2) keeps magnitudes level-independent).
    nn::TensorPtr<T> forward(nn::Graph<T>& g, nn::TensorPtr<T> eps_raw, nn::TensorPtr<T> cond,
                             nn::TensorPtr<T> emb, const std::vector<double>& sigma) const {
        require(eps_raw->rank() == 2 && eps_raw->shape[1] == cfg_.micro_len,
                "denoiser input shape mismatch");
        const int B = eps_raw->shape[0], L = cfg_.micro_len, C = cfg_.channels;
        require(static_cast<int>(sigma.size()) == B, "sigma per sample required");

        // per-sample input gain as a constant diagonal (row scaling)
        std::vector<T> gain(static_cast<size_t>(B) * L);
        for (int b = 0; b < B; ++b) {
            T cin = static_cast<T>(1.0 / std::sqrt(1.0 + sigma[b] * sigma[b]));
            for (int l = 0; l < L; ++l) gain[b * L + l] = cin;
        }
        auto eps_scaled = g.mul(eps_raw, g.constant({B, L}, std::move(gain)));

        auto x0 = g.reshape(eps_scaled, {B, 1, L});
        auto c0 = g.reshape(cond, {B, 1, L});
        auto x = g.concat(x0, c0, 1);  // [B,2,L]

        auto t1 = g.relu(g.add_bias(g.matmul(emb, params_.at("time.w")), params_.at("time.b")));
        auto film = [&](nn::TensorPtr<T> h, int f) {
            auto st = g.add_bias(g.matmul(t1, params_.at("film" + std::to_string(f) + ".w")),
                                 params_.at("film" + std::to_string(f) + ".b"));
            auto s = g.slice(st, 1, 0, C);
            auto t = g.slice(st, 1, C, C);
            return g.affine_channels(h, s, t);
        };
        auto conv = [&](nn::TensorPtr<T> h, const std::string& name) {
            return g.conv1d_periodic(h, params_.at(name + ".w"), params_.at(name + ".b"));
        };

        auto h = g.relu(film(conv(x, "conv_in"), 0));
        auto skip = g.relu(film(conv(h, "conv1"), 1));
        auto down = g.avg_pool1d2(skip);
        down = g.relu(film(conv(down, "conv2"), 2));
        down = g.relu(film(conv(down, "conv3"), 3));
        auto up = g.upsample_linear1d2(down);
        auto merged = g.concat(up, skip, 1);  // [B,2C,L]
        auto h4 = g.relu(film(conv(merged, "conv4"), 4));
        auto out = conv(h4, "conv_out");  // [B,1,L]
        return g.reshape(out, {B, L});
    }

private:
    DenoiserConfig cfg_;
    nn::ParamStore<T> params_;
};

/// Network estimate of the clean micro state from (lifted z, eps_i, i).
template <class T>
std::vector<double> denoise_predict(const Denoiser<T>& net, std::span<const double> cond_lifted,
                                    std::span<const double> eps, int level,
                                    const NoiseSchedule& sched) {
    const int L = net.config().micro_len;
    require(static_cast<int>(cond_lifted.size()) == L && static_cast<int>(eps.size()) == L,
            "denoise_predict shape mismatch");
    double sigma = sched.sigma(level);
    nn::Graph<T> g(/*recording=*/false);
    auto to_t = [](std::span<const double> v) {
        return std::vector<T>(v.begin(), v.end());
    };
    auto pred = net.forward(g, g.constant({1, L}, to_t(eps)), g.constant({1, L}, to_t(cond_lifted)),
                            g.constant({1, net.config().time_embed},
                                       nn::sinusoidal_embed<T>(level, net.config().time_embed)),
                            {sigma});
    std::vector<double> out(pred->v.begin(), pred->v.end());
    for (double v : out)
        if (!std::isfinite(v)) throw NumericalError("denoiser produced non-finite output");
    return out;
}

// ---------------------------------------------------------------------------
// Reverse-chain sampling
// ---------------------------------------------------------------------------

/// Clean-state estimator used inside the chain; tests may inject an oracle.
using DenoiseFn = std::function<std::vector<double>(const std::vector<double>& eps, int level)>;

/// Optional mean shift applied at each reverse transition (physics guidance).
/// Returning an empty vector leaves the transition untouched.
using ShiftFn =
    std::function<std::vector<double>(const std::vector<double>& eps, int level, double variance)>;

/// Runs eps_N -> ... -> eps_1 -> shat. Exactly one denoise evaluation per
/// level. eps1_out, when set, receives the last chain variable (distributed
/// as N(s, sigma_1^2) when the denoiser is exact).
inline std::vector<double> reverse_chain(long dim, const NoiseSchedule& sched,
                                         const DenoiseFn& denoise, CounterRng& rng,
                                         const ShiftFn* shift = nullptr,
                                         std::vector<double>* eps1_out = nullptr) {
    sched.validate();
    const int n = sched.count();
    std::vector<double> eps(dim);
    double sN = sched.sigma(n);
    for (long j = 0; j < dim; ++j) eps[j] = sN * rng.normal();

    for (int i = n; i >= 2; --i) {
        auto shat = denoise(eps, i);
        require(static_cast<long>(shat.size()) == dim, "denoise output dim mismatch");
        auto rm = reverse_moments(shat, eps, sched.sigma(i - 1), sched.sigma(i));
        if (shift) {
            auto iota = (*shift)(eps, i, rm.variance);
            if (!iota.empty()) {
                require(static_cast<long>(iota.size()) == dim, "guidance shift dim mismatch");
                for (long j = 0; j < dim; ++j) rm.mean[j] += iota[j];
            }
        }
        double sd = std::sqrt(rm.variance);
        for (long j = 0; j < dim; ++j) eps[j] = rm.mean[j] + sd * rng.normal();
    }
    if (eps1_out) *eps1_out = eps;
    return denoise(eps, 1);
}

// ---------------------------------------------------------------------------
// Physics residuals and guidance
// ---------------------------------------------------------------------------

/// Virtual observable R(H(s)) = 0 with Gaussian enforcement width sigma_r.
/// The residual is composed of recorded primitives, so its gradient flows
/// through the denoiser by reverse mode.
struct ResidualSpec {
    std::string kind = "none";  // none | pin_observable | reynolds_stress_target
    double sigma_r = 1.0;       // virtual-likelihood width (enforcement intensity)
    double beta_guide = 1.0;
    double sigma_guide = 0.002;
    std::vector<int> pin_indices;
    std::vector<double> pin_values;
    int components = 1;                  // leading component count of the flattened state
    std::vector<double> stress_targets;  // second moments, pair order (0,0),(0,1),..,(1,1),..

    bool active() const { return kind != "none" && beta_guide != 0.0; }

    void validate(int micro_len) const {
        if (kind == "none") return;
        if (kind == "pin_observable") {
            if (pin_indices.empty() || pin_indices.size() != pin_values.size())
                throw ConfigError("pin_observable needs matching indices/values");
            for (int i : pin_indices)
                if (i < 0 || i >= micro_len)
                    throw ConfigError("pin index out of micro-state range");
            return;
        }
        if (kind == "reynolds_stress_target") {
            if (components < 1 || micro_len % components != 0)
                throw ConfigError("components must divide the micro length");
            size_t pairs = static_cast<size_t>(components) * (components + 1) / 2;
            if (stress_targets.size() != pairs)
                throw ConfigError("reynolds_stress_target needs one target per component pair");
            return;
        }
        throw ConfigError("unknown residual kind: " + kind);
    }

    /// Builds the residual vector R(H(s)) for a flattened state node [L].
    template <class T>
    nn::TensorPtr<T> residual(nn::Graph<T>& g, nn::TensorPtr<T> s) const {
        require(kind != "none", "residual() called on the 'none' spec");
        if (kind == "pin_observable") {
            auto h = g.gather(s, pin_indices);
            return g.sub(h, g.constant({static_cast<int>(pin_values.size())},
                                       std::vector<T>(pin_values.begin(), pin_values.end())));
        }
        // second moments of fluctuations per component pair, minus targets
        const int L = static_cast<int>(s->numel());
        const int n = L / components;
        auto flat = g.reshape(s, {components, n});
        std::vector<nn::TensorPtr<T>> fluct(components);
        for (int c = 0; c < components; ++c) {
            auto row = g.slice(flat, 0, c, 1);
            fluct[c] = g.sub_scalar(row, g.mean_all(row));
        }
        nn::TensorPtr<T> out;
        size_t t = 0;
        for (int a = 0; a < components; ++a)
            for (int b = a; b < components; ++b, ++t) {
                auto m = g.mean_all(g.mul(fluct[a], fluct[b]));
                auto r = g.sub(m, g.constant({1}, {static_cast<T>(stress_targets[t])}));
                out = out ? g.concat(out, r, 0) : r;
            }
        return out;
    }

    /// log p(R_hat = 0 | s) up to a constant, with enforcement width sigma_r.
    double virtual_log_likelihood(std::span<const double> r) const {
        double ss = 0;
        for (double x : r) ss += x * x;
        return -ss / (2.0 * sigma_r * sigma_r);
    }
};

struct GuidanceDirection {
    std::vector<double> direction;  // unit descent direction of ||R||, or zeros
    bool degenerate = false;
};

/// Unit direction n = -grad ||R(H(shat(z,eps,i)))|| / |grad|, differentiated
/// through the network and residual. A vanishing gradient flags degenerate
/// guidance and returns the zero field.
template <class T>
GuidanceDirection residual_direction(const Denoiser<T>& net, const ResidualSpec& rs,
                                     std::span<const double> cond_lifted,
                                     std::span<const double> eps, int level,
                                     const NoiseSchedule& sched) {
    const int L = net.config().micro_len;
    rs.validate(L);
    nn::Graph<T> g;
    auto eps_leaf = g.leaf({1, L}, std::vector<T>(eps.begin(), eps.end()), /*needs_grad=*/true);
    auto cond = g.constant({1, L}, std::vector<T>(cond_lifted.begin(), cond_lifted.end()));
    auto emb = g.constant({1, net.config().time_embed},
                          nn::sinusoidal_embed<T>(level, net.config().time_embed));
    auto pred = net.forward(g, eps_leaf, cond, emb, {sched.sigma(level)});
    auto flat = g.reshape(pred, {L});
    auto rnorm = g.l2norm_all(rs.residual(g, flat));
    g.backward(rnorm);

    GuidanceDirection out;
    out.direction.assign(L, 0.0);
    double norm = 0;
    for (int j = 0; j < L; ++j) {
        double gj = static_cast<double>(eps_leaf->g[j]);
        out.direction[j] = gj;
        norm += gj * gj;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        out.degenerate = true;
        std::fill(out.direction.begin(), out.direction.end(), 0.0);
        return out;
    }
    for (double& d : out.direction) d = -d / norm;  // descend the residual norm
    return out;
}

/// iota = beta * max(reverse variance, sigma_guide^2) * n.
inline std::vector<double> guidance_shift(const GuidanceDirection& n, double sigma_i,
                                          double sigma_next, const ResidualSpec& rs) {
    require(sigma_i > 0 && sigma_i < sigma_next, "guidance_shift sigma ordering");
    double s2i = sigma_i * sigma_i, s2n = sigma_next * sigma_next;
    double variance = (s2n - s2i) * s2i / s2n;
    double mag = rs.beta_guide * std::max(variance, rs.sigma_guide * rs.sigma_guide);
    std::vector<double> iota(n.direction.size());
    for (size_t j = 0; j < iota.size(); ++j) iota[j] = mag * n.direction[j];
    return iota;
}

// ---------------------------------------------------------------------------
// Decoding entry points
// ---------------------------------------------------------------------------

struct SampleDiagnostics {
    int degenerate_steps = 0;
    int guided_steps = 0;
};

/// Unguided decode of one macro state.
template <class T>
std::vector<double> sample(const Denoiser<T>& net, const NdArray& z,
                           const scale::RestrictionSpec& rspec, const NoiseSchedule& sched,
                           CounterRng& rng) {
    NdArray lifted = scale::lift_linear(z, rspec);
    require(static_cast<int>(lifted.size()) == net.config().micro_len,
            "lifted conditioning does not match the denoiser input length");
    DenoiseFn fn = [&](const std::vector<double>& eps, int level) {
        return denoise_predict(net, lifted.data, eps, level, sched);
    };
    return reverse_chain(net.config().micro_len, sched, fn, rng);
}

/// Guided decode: every reverse transition's mean is shifted by iota.
/// With beta_guide = 0 (or kind "none") the rng stream and arithmetic match
/// sample() exactly.
template <class T>
std::vector<double> guided_sample(const Denoiser<T>& net, const NdArray& z,
                                  const scale::RestrictionSpec& rspec, const NoiseSchedule& sched,
                                  const ResidualSpec& rs, CounterRng& rng,
                                  SampleDiagnostics* diag = nullptr) {
    if (!rs.active()) return sample(net, z, rspec, sched, rng);
    rs.validate(net.config().micro_len);
    NdArray lifted = scale::lift_linear(z, rspec);
    require(static_cast<int>(lifted.size()) == net.config().micro_len,
            "lifted conditioning does not match the denoiser input length");
    DenoiseFn fn = [&](const std::vector<double>& eps, int level) {
        return denoise_predict(net, lifted.data, eps, level, sched);
    };
    ShiftFn shift = [&](const std::vector<double>& eps, int level,
                        double /*variance*/) -> std::vector<double> {
        auto dir = residual_direction(net, rs, lifted.data, eps, level, sched);
        if (diag) {
            ++diag->guided_steps;
            if (dir.degenerate) ++diag->degenerate_steps;
        }
        if (dir.degenerate) return {};
        return guidance_shift(dir, sched.sigma(level - 1), sched.sigma(level), rs);
    };
    return reverse_chain(net.config().micro_len, sched, fn, rng, &shift);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct DecoderTrainConfig {
    int epochs = 8;
    int batch = 16;
    long samples_per_epoch = 20000;
    nn::AdamConfig adam;
    uint64_t seed = 1;
};

/// In-memory pool of micro states used by the trainers.
struct StateBank {
    long count = 0;
    int len = 0;
    std::vector<float> data;  // [count, len]

    std::span<const float> state(long i) const {
        return {data.data() + i * len, static_cast<size_t>(len)};
    }
};

inline StateBank load_states(const DatasetManifest& manifest, const std::string& role) {
    StateBank bank;
    for (const auto& file : manifest.files(role)) {
        ks::Trajectory traj = read_trajectory(file);
        long ss = traj.state_size();
        if (bank.len == 0) bank.len = static_cast<int>(ss);
        require(bank.len == ss, "inconsistent state sizes across trajectories");
        for (long s = 0; s < traj.count(); ++s) {
            auto st = traj.state(s);
            bank.data.insert(bank.data.end(), st.begin(), st.end());
            ++bank.count;
        }
    }
    return bank;
}

/// KL-derived objective: E ||shat(z_t, eps_i, i) - s_t||_2 over training
/// states, with z_t computed on the fly by the non-trainable restriction
/// (decoupled from the macro propagator). Returns the probe loss before
/// training and after each epoch.
template <class T>
std::vector<double> train_decoder(Denoiser<T>& net, const DatasetManifest& micro_manifest,
                                  const scale::RestrictionSpec& rspec, const NoiseSchedule& sched,
                                  const DecoderTrainConfig& tc,
                                  const std::function<void(const std::string&)>& log = {}) {
    sched.validate();
    StateBank bank = load_states(micro_manifest, "train");
    require(bank.count > 0, "decoder training needs a non-empty dataset");
    const int L = net.config().micro_len;
    require(bank.len == L, "dataset state length does not match the denoiser");
    const int W = net.config().time_embed;
    const int n_levels = sched.count();

    CounterRng pick(tc.seed, 0xDA7A);
    CounterRng noise(tc.seed, 0x0153);

    // conditioning channels are a pure function of the state; cache per draw
    Shape micro_shape = rspec.micro_shape;
    auto lift_of = [&](std::span<const float> s) {
        NdArray micro(micro_shape);
        for (long j = 0; j < micro.size(); ++j) micro.data[j] = s[j];
        return scale::lift_linear(scale::restrict(micro, rspec), rspec);
    };

    double max_norm = 0.0;
    const long probe_count = std::min<long>(bank.count, 256);
    for (long i = 0; i < probe_count; ++i) {
        double ss = 0;
        for (float v : bank.state(i)) ss += static_cast<double>(v) * v;
        max_norm = std::max(max_norm, std::sqrt(ss));
    }
    if (!sched.dominates_data_scale(max_norm) && log)
        log("warn stage=train-decoder msg=sigma_max_below_10x_state_norm max_norm=" +
            std::to_string(max_norm));

    // fixed probe batch for the reported loss curve
    const int probe_B = 64;
    std::vector<long> probe_idx(probe_B);
    std::vector<int> probe_lv(probe_B);
    CounterRng probe_rng(tc.seed, 0x9E0B);
    for (int b = 0; b < probe_B; ++b) {
        probe_idx[b] = static_cast<long>(probe_rng.next_u64() % bank.count);
        probe_lv[b] = 1 + static_cast<int>(probe_rng.next_u64() % n_levels);
    }

    auto batch_loss = [&](const std::vector<long>& idx, const std::vector<int>& lv,
                          CounterRng& noise_rng, bool train) {
        const int B = static_cast<int>(idx.size());
        std::vector<T> eps_v(static_cast<size_t>(B) * L), cond_v(static_cast<size_t>(B) * L),
            target_v(static_cast<size_t>(B) * L), emb_v(static_cast<size_t>(B) * W);
        std::vector<double> sig(B);
        for (int b = 0; b < B; ++b) {
            auto s = bank.state(idx[b]);
            double sigma = sched.sigma(lv[b]);
            sig[b] = sigma;
            auto lifted = lift_of(s);
            auto emb = nn::sinusoidal_embed<T>(lv[b], W);
            std::copy(emb.begin(), emb.end(), emb_v.begin() + static_cast<long>(b) * W);
            for (int j = 0; j < L; ++j) {
                double sj = s[j];
                target_v[b * L + j] = static_cast<T>(sj);
                cond_v[b * L + j] = static_cast<T>(lifted.data[j]);
                eps_v[b * L + j] = static_cast<T>(sj + sigma * noise_rng.normal());
            }
        }
        nn::Graph<T> g(train);
        auto pred = net.forward(g, g.constant({B, L}, std::move(eps_v)),
                                g.constant({B, L}, std::move(cond_v)),
                                g.constant({B, W}, std::move(emb_v)), sig);
        auto loss = g.mean_all(g.l2norm_rows(g.sub(pred, g.constant({B, L}, std::move(target_v)))));
        double value = static_cast<double>(loss->v[0]);
        if (!std::isfinite(value))
            throw NumericalError("decoder training diverged: non-finite loss");
        if (train) g.backward(loss);
        return value;
    };

    std::vector<double> probe_losses;
    {
        CounterRng probe_noise(tc.seed, 0x0B5E);
        probe_losses.push_back(batch_loss(probe_idx, probe_lv, probe_noise, false));
    }
    if (log) log("stage=train-decoder epoch=0 probe_loss=" + std::to_string(probe_losses.back()));

    const long steps = std::max<long>(1, tc.samples_per_epoch / tc.batch);
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        double running = 0;
        for (long step = 0; step < steps; ++step) {
            std::vector<long> idx(tc.batch);
            std::vector<int> lv(tc.batch);
            for (int b = 0; b < tc.batch; ++b) {
                idx[b] = static_cast<long>(pick.next_u64() % bank.count);
                lv[b] = 1 + static_cast<int>(pick.next_u64() % n_levels);
            }
            running += batch_loss(idx, lv, noise, true);
            net.params().adam_step(tc.adam);
        }
        CounterRng probe_noise(tc.seed, 0x0B5E);
        probe_losses.push_back(batch_loss(probe_idx, probe_lv, probe_noise, false));
        if (log)
            log("stage=train-decoder epoch=" + std::to_string(epoch) +
                " train_loss=" + std::to_string(running / steps) +
                " probe_loss=" + std::to_string(probe_losses.back()));
    }
    return probe_losses;
}

}  // namespace gled::diffusion
