#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gled/core.hpp"
#include "gled/dataset.hpp"
#include "gled/nn/graph.hpp"
#include "gled/nn/params.hpp"
#include "gled/rng.hpp"

namespace gled::dyn {

struct AttentionConfig {
    int d_z = 16;
    int d_model = 128;
    int heads = 4;
    int layers = 8;
    int window = 512;  // N_t: bounded look-back
    int d_qk = 0;      // 0 -> d_model / heads
    int ffn_mult = 4;
    double ln_eps = 1e-5;

    int qk_width() const { return d_qk > 0 ? d_qk : d_model / heads; }

    void validate() const {
        if (d_z < 1 || d_model < 1 || heads < 1 || layers < 1)
            throw ConfigError("attention dims must be positive");
        if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
        if (window < 1) throw ConfigError("window must be >= 1");
        if (qk_width() * heads != d_model)
            throw ConfigError("d_qk * heads must equal d_model");
        if (!(ln_eps > 0)) throw ConfigError("ln_eps must be positive");
    }
};

/// Paper-form attention: weights exp(q.k) normalized per query, applied to
/// values. Callers enforce causality by passing only visible keys.
inline NdArray attend(const NdArray& queries, const NdArray& keys, const NdArray& values) {
    require(queries.rank() == 2 && keys.rank() == 2 && values.rank() == 2, "attend wants rank-2");
    require(keys.extent(0) == values.extent(0), "attend: key/value counts differ");
    require(keys.extent(0) >= 1, "attend: empty key set");
    require(queries.extent(1) == keys.extent(1), "attend: query/key width mismatch");
    const long m = queries.extent(0), n = keys.extent(0);
    const long dk = queries.extent(1), dv = values.extent(1);
    NdArray out({static_cast<int>(m), static_cast<int>(dv)});
    std::vector<double> logits(n), weights(n);
    for (long i = 0; i < m; ++i) {
        const double* q = queries.ptr() + i * dk;
        for (long j = 0; j < n; ++j) {
            const double* k = keys.ptr() + j * dk;
            double acc = 0;
            for (long p = 0; p < dk; ++p) acc += q[p] * k[p];
            logits[j] = acc;
        }
        nn::kern::softmax_row(logits.data(), weights.data(), n);
        double* o = out.ptr() + i * dv;
        for (long j = 0; j < n; ++j) {
            const double* v = values.ptr() + j * dv;
            for (long p = 0; p < dv; ++p) o[p] += weights[j] * v[p];
        }
    }
    return out;
}

/// Per-layer key/value ring buffers bound to one model; eviction is FIFO.
template <class T>
struct KVCache {
    const void* model_tag = nullptr;
    int layers = 0, window = 0, d_model = 0;
    long total = 0;  // states pushed since creation
    std::vector<std::vector<T>> k, v;

    long length() const { return std::min<long>(total, window); }
};

struct RolloutResult {
    NdArray states;  // [n, d_z]
    bool completed = true;
    std::string diagnostic;
};

/// Autoregressive multi-head attention over a bounded history window.
///
/// Key and value functions act on the per-state embedding (K(z), V(z)),
/// never on the mixed stream; queries and the feed-forward stream evolve
/// through depth. Cached key/value entries therefore stay valid when the
/// window slides, and cached evaluation equals recomputation of the last
/// min(history, N_t) states exactly. Positional information enters as a
/// learned per-head bias over query-key distance.
template <class T>
class Propagator {
public:
    Propagator(AttentionConfig cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        CounterRng rng(init_seed, /*stream=*/0xA77E0Dull);
        const int dm = cfg_.d_model, dz = cfg_.d_z, ff = cfg_.ffn_mult * dm;
        auto dense = [&](const std::string& name, int rows, int cols) {
            params_.create_normal(name + ".w", {rows, cols}, rng, 0.02);
            params_.create(name + ".b", {cols});
        };
        auto norm = [&](const std::string& name) {
            auto gamma = params_.create(name + ".g", {dm});
            std::fill(gamma->v.begin(), gamma->v.end(), T{1});
            params_.create(name + ".b", {dm});
        };
        dense("embed", dz, dm);
        for (int l = 0; l < cfg_.layers; ++l) {
            std::string p = "l" + std::to_string(l) + ".";
            norm(p + "lnkv");
            norm(p + "ln1");
            dense(p + "q", dm, dm);
            dense(p + "k", dm, dm);
            dense(p + "v", dm, dm);
            dense(p + "o", dm, dm);
            params_.create(p + "relbias", {cfg_.heads, cfg_.window});
            norm(p + "ln2");
            dense(p + "ffn1", dm, ff);
            dense(p + "ffn2", ff, dm);
        }
        norm("final_ln");
        dense("out", dm, dz);
    }

    const AttentionConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    T qk_scale() const { return static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.qk_width()))); }

    /// Causally masked pass over z_0..z_{N-1}; row n predicts z_{n+1}.
    nn::TensorPtr<T> forward_graph(nn::Graph<T>& g, nn::TensorPtr<T> zs) const {
        require(zs->rank() == 2 && zs->shape[1] == cfg_.d_z, "propagator input must be [N, d_z]");
        const int N = zs->shape[0];
        if (N > cfg_.window)
            throw ContractError("window exceeded: sequence length " + std::to_string(N) +
                                " > N_t = " + std::to_string(cfg_.window));
        const int H = cfg_.heads, dqk = cfg_.qk_width();

        std::vector<T> mask_v(static_cast<size_t>(N) * N, T{0});
        for (int i = 0; i < N; ++i)
            for (int j = i + 1; j < N; ++j) mask_v[i * N + j] = T{-1e30};
        auto mask = g.constant({N, N}, std::move(mask_v));

        auto lin = [&](nn::TensorPtr<T> x, const std::string& name) {
            return g.add_bias(g.matmul(x, params_.at(name + ".w")), params_.at(name + ".b"));
        };
        auto ln = [&](nn::TensorPtr<T> x, const std::string& name) {
            return g.colwise_affine(g.layer_norm_rows(x, static_cast<T>(cfg_.ln_eps)),
                                    params_.at(name + ".g"), params_.at(name + ".b"));
        };

        auto x0 = lin(zs, "embed");  // per-state features feeding every K/V
        auto x = x0;
        for (int l = 0; l < cfg_.layers; ++l) {
            std::string p = "l" + std::to_string(l) + ".";
            auto xkv = ln(x0, p + "lnkv");
            auto q = lin(ln(x, p + "ln1"), p + "q");
            auto k = lin(xkv, p + "k");
            auto v = lin(xkv, p + "v");
            nn::TensorPtr<T> heads_out;
            for (int h = 0; h < H; ++h) {
                auto qh = g.slice(q, 1, h * dqk, dqk);
                auto kh = g.slice(k, 1, h * dqk, dqk);
                auto vh = g.slice(v, 1, h * dqk, dqk);
                auto scores = g.scale(g.matmul_nt(qh, kh), qk_scale());
                auto bias = g.reshape(g.slice(params_.at(p + "relbias"), 0, h, 1), {cfg_.window});
                scores = g.add(g.band_bias(scores, bias), mask);
                auto oh = g.matmul(g.softmax_rows(scores), vh);
                heads_out = heads_out ? g.concat(heads_out, oh, 1) : oh;
            }
            x = g.add(x, lin(heads_out, p + "o"));
            auto f = lin(g.relu(lin(ln(x, p + "ln2"), p + "ffn1")), p + "ffn2");
            x = g.add(x, f);
        }
        return lin(ln(x, "final_ln"), "out");
    }

    /// No-grad convenience wrapper over forward_graph.
    NdArray forward_sequence(const NdArray& zs) const {
        require(zs.rank() == 2, "forward_sequence wants [N, d_z]");
        nn::Graph<T> g(/*recording=*/false);
        auto leaf = g.constant(zs.shape, std::vector<T>(zs.data.begin(), zs.data.end()));
        auto pred = forward_graph(g, leaf);
        NdArray out(pred->shape);
        for (long i = 0; i < out.size(); ++i) out.data[i] = static_cast<double>(pred->v[i]);
        return out;
    }

    KVCache<T> make_cache() const {
        KVCache<T> c;
        c.model_tag = this;
        c.layers = cfg_.layers;
        c.window = cfg_.window;
        c.d_model = cfg_.d_model;
        c.k.assign(cfg_.layers, std::vector<T>(static_cast<size_t>(cfg_.window) * cfg_.d_model));
        c.v.assign(cfg_.layers, std::vector<T>(static_cast<size_t>(cfg_.window) * cfg_.d_model));
        return c;
    }

    /// Incremental step: pushes z_new, evicts beyond the window, and returns
    /// the next-state prediction. Arithmetic runs through the same kernels as
    /// forward_graph, so results match the recomputed window exactly.
    std::vector<double> cached_step(KVCache<T>& cache, std::span<const double> z_new) const {
        require(cache.model_tag == this, "model/cache mismatch");
        require(static_cast<int>(z_new.size()) == cfg_.d_z, "cached_step input width");
        const int dm = cfg_.d_model, H = cfg_.heads, dqk = cfg_.qk_width();
        const long slot = cache.total % cfg_.window;
        const long len = std::min<long>(cache.total + 1, cfg_.window);
        const long oldest = cache.total + 1 - len;

        std::vector<T> x0(dm), x(dm), xn(dm), q(dm), kv(dm), tmp(std::max(dm, cfg_.ffn_mult * dm));
        std::vector<T> zrow(z_new.begin(), z_new.end());
        row_linear(zrow.data(), cfg_.d_z, "embed", x0.data(), dm);
        x = x0;

        std::vector<T> kwin(static_cast<size_t>(len) * dm), vwin(static_cast<size_t>(len) * dm);
        std::vector<T> logits(len), weights(len), heads_out(dm);

        for (int l = 0; l < cfg_.layers; ++l) {
            std::string p = "l" + std::to_string(l) + ".";
            row_ln(x0.data(), p + "lnkv", xn.data(), dm);
            row_linear(xn.data(), dm, p + "k", kv.data(), dm);
            std::copy_n(kv.data(), dm, cache.k[l].data() + slot * dm);
            row_linear(xn.data(), dm, p + "v", kv.data(), dm);
            std::copy_n(kv.data(), dm, cache.v[l].data() + slot * dm);
            row_ln(x.data(), p + "ln1", xn.data(), dm);
            row_linear(xn.data(), dm, p + "q", q.data(), dm);

            // materialize the window in time order (ring may wrap)
            for (long w = 0; w < len; ++w) {
                long g = oldest + w;
                std::copy_n(cache.k[l].data() + (g % cfg_.window) * dm, dm, kwin.data() + w * dm);
                std::copy_n(cache.v[l].data() + (g % cfg_.window) * dm, dm, vwin.data() + w * dm);
            }

            const auto bias = params_.at(p + "relbias");
            for (int h = 0; h < H; ++h) {
                // scores over the window, then the shared softmax kernel
                for (long w = 0; w < len; ++w) {
                    const T* krow = kwin.data() + w * dm + h * dqk;
                    const T* qrow = q.data() + h * dqk;
                    T acc{0};
                    for (int pth = 0; pth < dqk; ++pth) acc += qrow[pth] * krow[pth];
                    long dist = (len - 1) - w;  // time difference to the query
                    logits[w] = acc * qk_scale() + bias->v[h * cfg_.window + dist];
                }
                nn::kern::softmax_row(logits.data(), weights.data(), len);
                T* oh = heads_out.data() + h * dqk;
                for (int pth = 0; pth < dqk; ++pth) oh[pth] = T{0};
                for (long w = 0; w < len; ++w) {
                    T pw = weights[w];
                    const T* vrow = vwin.data() + w * dm + h * dqk;
                    for (int pth = 0; pth < dqk; ++pth) oh[pth] += pw * vrow[pth];
                }
            }
            row_linear(heads_out.data(), dm, p + "o", tmp.data(), dm);
            for (int i = 0; i < dm; ++i) x[i] += tmp[i];

            row_ln(x.data(), p + "ln2", xn.data(), dm);
            const int ff = cfg_.ffn_mult * dm;
            row_linear(xn.data(), dm, p + "ffn1", tmp.data(), ff);
            for (int i = 0; i < ff; ++i) tmp[i] = tmp[i] > T{0} ? tmp[i] : T{0};
            std::vector<T> f(dm);
            row_linear(tmp.data(), ff, p + "ffn2", f.data(), dm);
            for (int i = 0; i < dm; ++i) x[i] += f[i];
        }
        row_ln(x.data(), "final_ln", xn.data(), dm);
        std::vector<T> out(cfg_.d_z);
        row_linear(xn.data(), dm, "out", out.data(), cfg_.d_z);
        cache.total += 1;
        return std::vector<double>(out.begin(), out.end());
    }

    /// Autoregressive continuation after a ground-truth warm-up. Aborts on a
    /// non-finite state and returns the partial trajectory with a diagnostic.
    RolloutResult rollout(const NdArray& warmup, long n_steps) const {
        require(warmup.rank() == 2 && warmup.extent(1) == cfg_.d_z, "warmup must be [W, d_z]");
        require(warmup.extent(0) >= 1, "rollout needs at least one warm-up state");
        require(n_steps >= 0, "n_steps must be >= 0");

        auto cache = make_cache();
        std::vector<double> pred;
        for (long s = 0; s < warmup.extent(0); ++s) {
            auto row = warmup.ptr() + s * cfg_.d_z;
            pred = cached_step(cache, {row, static_cast<size_t>(cfg_.d_z)});
        }

        RolloutResult res;
        res.states = NdArray({static_cast<int>(n_steps), cfg_.d_z});
        for (long s = 0; s < n_steps; ++s) {
            for (double vv : pred)
                if (!std::isfinite(vv)) {
                    res.states.shape[0] = static_cast<int>(s);
                    res.states.data.resize(static_cast<size_t>(s) * cfg_.d_z);
                    res.completed = false;
                    res.diagnostic = "non-finite state at rollout step " + std::to_string(s);
                    return res;
                }
            std::copy(pred.begin(), pred.end(), res.states.ptr() + s * cfg_.d_z);
            if (s + 1 < n_steps) pred = cached_step(cache, pred);
        }
        return res;
    }

private:
    /// y[cols] = x[rows] * W[rows,cols] + b, through the shared matmul kernel.
    void row_linear(const T* x, int rows, const std::string& name, T* y, int cols) const {
        const auto w = params_.at(name + ".w");
        const auto b = params_.at(name + ".b");
        require(w->shape[0] == rows && w->shape[1] == cols, "row_linear shape mismatch: " + name);
        nn::kern::matmul(x, w->v.data(), y, 1, rows, cols);
        for (int j = 0; j < cols; ++j) y[j] += b->v[j];
    }

    void row_ln(const T* x, const std::string& name, T* y, int n) const {
        nn::kern::layer_norm_row(x, y, n, static_cast<T>(cfg_.ln_eps));
        const auto gm = params_.at(name + ".g");
        const auto bt = params_.at(name + ".b");
        for (int j = 0; j < n; ++j) y[j] = y[j] * gm->v[j] + bt->v[j];
    }

    AttentionConfig cfg_;
    nn::ParamStore<T> params_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct PropagatorTrainConfig {
    int epochs = 4;
    nn::AdamConfig adam;
    uint64_t seed = 1;
    long max_trajectories_per_epoch = 0;  // 0 -> all
    int batch_sequences = 1;              // gradient accumulation across sequences
    double lr_decay = 1.0;                // per-epoch multiplier on the learning rate
};

/// Teacher-forced autoregressive objective: one causally masked pass scores
/// every prefix of each training sequence against its next state. Sequences
/// longer than the window are split into window-sized chunks.
template <class T>
std::vector<double> train_propagator(Propagator<T>& model, const DatasetManifest& macro_manifest,
                                     const PropagatorTrainConfig& tc,
                                     const std::function<void(const std::string&)>& log = {}) {
    const auto& cfg = model.config();
    std::vector<NdArray> seqs;
    for (const auto& file : macro_manifest.files("train")) {
        ks::Trajectory traj = read_trajectory(file);
        require(traj.state_size() == cfg.d_z,
                "macro state width " + std::to_string(traj.state_size()) +
                    " does not match d_z = " + std::to_string(cfg.d_z));
        long n = traj.count();
        for (long start = 0; start < n - 1; start += cfg.window) {
            long len = std::min<long>(cfg.window, n - start);
            if (len < 2) break;
            NdArray chunk({static_cast<int>(len), cfg.d_z});
            std::copy_n(traj.states.ptr() + start * cfg.d_z, len * cfg.d_z, chunk.ptr());
            seqs.push_back(std::move(chunk));
        }
    }
    require(!seqs.empty(), "propagator training needs a non-empty macro dataset");

    CounterRng shuffle_rng(tc.seed, 0x5340FF1Eull);
    auto seq_loss = [&](const NdArray& zs, bool train) {
        const int N = zs.extent(0);
        nn::Graph<T> g(train);
        auto leaf = g.constant({N, cfg.d_z}, std::vector<T>(zs.data.begin(), zs.data.end()));
        auto pred = model.forward_graph(g, leaf);
        auto pred_head = g.slice(pred, 0, 0, N - 1);
        std::vector<T> target(zs.data.begin() + cfg.d_z, zs.data.end());
        auto diff = g.sub(pred_head, g.constant({N - 1, cfg.d_z}, std::move(target)));
        auto loss = g.mean_all(g.l2norm_rows(diff));
        double value = static_cast<double>(loss->v[0]);
        if (!std::isfinite(value))
            throw NumericalError("propagator training diverged: non-finite loss");
        if (train) g.backward(loss);
        return value;
    };

    std::vector<double> probe_losses;
    probe_losses.push_back(seq_loss(seqs.front(), false));
    if (log) log("stage=train-propagator epoch=0 probe_loss=" + std::to_string(probe_losses[0]));

    std::vector<long> order(seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
    const long per_epoch = tc.max_trajectories_per_epoch > 0
                               ? std::min<long>(tc.max_trajectories_per_epoch,
                                                static_cast<long>(order.size()))
                               : static_cast<long>(order.size());

    nn::AdamConfig adam = tc.adam;
    const int group = std::max(1, tc.batch_sequences);
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        // Fisher-Yates with the stage rng
        for (long i = static_cast<long>(order.size()) - 1; i > 0; --i) {
            long j = static_cast<long>(shuffle_rng.next_u64() % static_cast<uint64_t>(i + 1));
            std::swap(order[i], order[j]);
        }
        double running = 0;
        int pending = 0;
        for (long s = 0; s < per_epoch; ++s) {
            running += seq_loss(seqs[order[s]], true);  // gradients accumulate
            if (++pending == group || s + 1 == per_epoch) {
                model.params().adam_step(adam);
                pending = 0;
            }
        }
        probe_losses.push_back(seq_loss(seqs.front(), false));
        if (log)
            log("stage=train-propagator epoch=" + std::to_string(epoch) +
                " lr=" + std::to_string(adam.lr) +
                " train_loss=" + std::to_string(running / per_epoch) +
                " probe_loss=" + std::to_string(probe_losses.back()));
        adam.lr *= tc.lr_decay;
    }
    return probe_losses;
}

}  // namespace gled::dyn
