#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gled/nn/graph.hpp"
#include "gled/rng.hpp"

namespace gled::nn {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named trainable tensors plus their first/second Adam moments. A store is
/// exclusively owned during an update; maps keep iteration order stable.
template <class T>
class ParamStore {
public:
    TensorPtr<T> create(const std::string& name, Shape shape) {
        require(params_.find(name) == params_.end(), "duplicate parameter: " + name);
        auto t = make_tensor<T>(std::move(shape), /*needs_grad=*/true);
        params_.emplace(name, t);
        return t;
    }

    TensorPtr<T> create_normal(const std::string& name, Shape shape, CounterRng& rng,
                               double stddev) {
        auto t = create(name, std::move(shape));
        for (auto& x : t->v) x = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    TensorPtr<T> at(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    const std::map<std::string, TensorPtr<T>>& all() const { return params_; }

    void zero_grads() {
        for (auto& [name, p] : params_) p->zero_grad();
    }

    long total_size() const {
        long n = 0;
        for (const auto& [name, p] : params_) n += p->numel();
        return n;
    }

    int64_t step_count() const { return step_; }

    /// Standard Adam with bias correction; consumes and clears gradients.
    void adam_step(const AdamConfig& cfg) {
        ++step_;
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        const T corr1 = T{1} - static_cast<T>(std::pow(cfg.beta1, step_));
        const T corr2 = T{1} - static_cast<T>(std::pow(cfg.beta2, step_));
        const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
        for (auto& [name, p] : params_) {
            require(p->g.size() == p->v.size(), "missing gradients for parameter: " + name);
            auto& mom = moments_[name];
            if (mom.m.size() != p->v.size()) {
                mom.m.assign(p->v.size(), T{0});
                mom.v.assign(p->v.size(), T{0});
            }
            for (long i = 0; i < p->numel(); ++i) {
                T g = p->g[i];
                mom.m[i] = b1 * mom.m[i] + (T{1} - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (T{1} - b2) * g * g;
                T mhat = mom.m[i] / corr1;
                T vhat = mom.v[i] / corr2;
                p->v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
            p->zero_grad();
        }
    }

private:
    struct Moments {
        std::vector<T> m, v;
    };
    std::map<std::string, TensorPtr<T>> params_;
    std::map<std::string, Moments> moments_;
    int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint container: "GLCK", u32 version, u32 count, then per parameter
// (sorted by name): u32 name length, name bytes, u32 rank, u32 dims[rank],
// f32 payload. Identical bytes <=> identical parameters.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const ParamStore<T>& store, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw PersistenceError("cannot write checkpoint: " + path.string());
    os.write("GLCK", 4);
    uint32_t version = kCheckpointVersion;
    os.write(reinterpret_cast<const char*>(&version), 4);
    uint32_t count = static_cast<uint32_t>(store.all().size());
    os.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, p] : store.all()) {  // std::map: already name-sorted
        uint32_t len = static_cast<uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&len), 4);
        os.write(name.data(), len);
        uint32_t rank = static_cast<uint32_t>(p->rank());
        os.write(reinterpret_cast<const char*>(&rank), 4);
        for (int d : p->shape) {
            uint32_t e = static_cast<uint32_t>(d);
            os.write(reinterpret_cast<const char*>(&e), 4);
        }
        for (T x : p->v) {
            float f = static_cast<float>(x);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    if (!os) throw PersistenceError("checkpoint write failed: " + path.string());
}

/// Loads blobs into an existing store; every name and shape must match.
template <class T>
void load_checkpoint(ParamStore<T>& store, const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw PersistenceError("cannot read checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GLCK", 4) != 0)
        throw PersistenceError("bad checkpoint magic in " + path.string());
    auto read_u32 = [&](const char* what) {
        uint32_t v;
        is.read(reinterpret_cast<char*>(&v), 4);
        if (!is) throw PersistenceError(std::string("truncated checkpoint field: ") + what);
        return v;
    };
    if (read_u32("version") != kCheckpointVersion)
        throw PersistenceError("unsupported checkpoint version in " + path.string());
    uint32_t count = read_u32("count");
    if (count != store.all().size())
        throw ContractError("checkpoint/model mismatch: parameter count differs");
    for (uint32_t c = 0; c < count; ++c) {
        uint32_t len = read_u32("name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw PersistenceError("truncated checkpoint name");
        if (!store.contains(name))
            throw ContractError("checkpoint/model mismatch: unexpected parameter " + name);
        auto p = store.at(name);
        uint32_t rank = read_u32("rank");
        if (rank != static_cast<uint32_t>(p->rank()))
            throw ContractError("checkpoint/model mismatch: rank of " + name);
        for (uint32_t d = 0; d < rank; ++d)
            if (read_u32("dim") != static_cast<uint32_t>(p->shape[d]))
                throw ContractError("checkpoint/model mismatch: shape of " + name);
        for (long i = 0; i < p->numel(); ++i) {
            float f;
            is.read(reinterpret_cast<char*>(&f), 4);
            if (!is) throw PersistenceError("truncated checkpoint payload for " + name);
            p->v[i] = static_cast<T>(f);
        }
    }
}

}  // namespace gled::nn
