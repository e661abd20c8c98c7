#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gled/core.hpp"
#include "gled/ks.hpp"

namespace gled {

// Trajectory container: "GLED" magic, u32 version, u32 rank, u32 dims[rank]
// (time-major), u32 scalar width (4|8), f64 step, f64 t0, then row-major
// little-endian scalars.
inline constexpr uint32_t kDatasetVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "dataset format is little-endian; big-endian hosts unsupported");

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw PersistenceError("truncated read of " + what);
    return v;
}

}  // namespace detail

inline void write_trajectory(const std::filesystem::path& path, const ks::Trajectory& traj,
                             int scalar_width = 8) {
    require(scalar_width == 4 || scalar_width == 8, "scalar width must be 4 or 8");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw PersistenceError("cannot open for write: " + path.string());
    os.write("GLED", 4);
    detail::write_pod(os, kDatasetVersion);
    detail::write_pod(os, static_cast<uint32_t>(traj.states.rank()));
    for (int e : traj.states.shape) detail::write_pod(os, static_cast<uint32_t>(e));
    detail::write_pod(os, static_cast<uint32_t>(scalar_width));
    detail::write_pod(os, traj.step);
    detail::write_pod(os, traj.t0);
    if (scalar_width == 8) {
        os.write(reinterpret_cast<const char*>(traj.states.ptr()),
                 traj.states.size() * static_cast<long>(sizeof(double)));
    } else {
        std::vector<float> f(traj.states.data.begin(), traj.states.data.end());
        os.write(reinterpret_cast<const char*>(f.data()), f.size() * sizeof(float));
    }
    if (!os) throw PersistenceError("write failed: " + path.string());
}

inline ks::Trajectory read_trajectory(const std::filesystem::path& path,
                                      int* scalar_width_out = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw PersistenceError("cannot open for read: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GLED", 4) != 0)
        throw PersistenceError("bad magic in " + path.string());
    uint32_t version = detail::read_pod<uint32_t>(is, "version");
    if (version != kDatasetVersion)
        throw PersistenceError("unsupported format version in " + path.string());
    uint32_t rank = detail::read_pod<uint32_t>(is, "rank");
    if (rank == 0 || rank > 8) throw PersistenceError("implausible rank in " + path.string());
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<int>(detail::read_pod<uint32_t>(is, "dims"));
    uint32_t width = detail::read_pod<uint32_t>(is, "scalar width");
    if (width != 4 && width != 8) throw PersistenceError("bad scalar width in " + path.string());
    ks::Trajectory traj;
    traj.step = detail::read_pod<double>(is, "step");
    traj.t0 = detail::read_pod<double>(is, "t0");
    traj.states = NdArray(shape);
    long n = traj.states.size();
    if (width == 8) {
        is.read(reinterpret_cast<char*>(traj.states.ptr()), n * static_cast<long>(sizeof(double)));
    } else {
        std::vector<float> f(n);
        is.read(reinterpret_cast<char*>(f.data()), n * static_cast<long>(sizeof(float)));
        for (long i = 0; i < n; ++i) traj.states.data[i] = f[i];
    }
    if (!is) throw PersistenceError("truncated payload in " + path.string());
    if (scalar_width_out) *scalar_width_out = static_cast<int>(width);
    return traj;
}

struct DatasetEntry {
    std::string file;
    uint64_t seed = 0;
    std::string role;  // "train" | "valid" | "test"
};

struct DatasetManifest {
    nlohmann::json source;  // generating config or ingestion description
    std::vector<DatasetEntry> entries;
    std::filesystem::path base_dir;

    std::vector<std::filesystem::path> files(const std::string& role = "") const {
        std::vector<std::filesystem::path> out;
        for (const auto& e : entries)
            if (role.empty() || e.role == role) out.push_back(base_dir / e.file);
        return out;
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json j;
        j["format_version"] = kDatasetVersion;
        j["source"] = source;
        auto& arr = j["trajectories"] = nlohmann::json::array();
        for (const auto& e : entries)
            arr.push_back({{"file", e.file}, {"seed", e.seed}, {"role", e.role}});
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw PersistenceError("cannot write manifest: " + path.string());
        os << j.dump(2) << "\n";
    }

    static DatasetManifest load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw PersistenceError("cannot read manifest: " + path.string());
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw PersistenceError("malformed manifest " + path.string() + ": " + e.what());
        }
        DatasetManifest m;
        m.base_dir = path.parent_path();
        m.source = j.value("source", nlohmann::json::object());
        for (const auto& e : j.at("trajectories")) {
            DatasetEntry d;
            d.file = e.at("file").get<std::string>();
            d.seed = e.value("seed", uint64_t{0});
            d.role = e.value("role", "train");
            m.entries.push_back(std::move(d));
        }
        return m;
    }
};

namespace ks {

inline nlohmann::json ks_config_json(const KsConfig& cfg) {
    return {{"domain_length", cfg.domain_length},
            {"grid_points", cfg.grid_points},
            {"viscosity", cfg.viscosity},
            {"micro_step", cfg.micro_step},
            {"macro_step", cfg.macro_step}};
}

/// Generates n_train+n_valid trajectories from random smooth initial states,
/// each burned in before recording so states sit on the attractor.
/// Trajectory i uses the counter stream keyed by seed xor i and is written
/// with 8-byte scalars, so reruns are bit-identical.
inline DatasetManifest generate_dataset(const KsConfig& cfg, int n_train, int n_valid,
                                        double burn_in, uint64_t seed,
                                        const std::filesystem::path& out_dir,
                                        double horizon = 96.0, int n_test = 0) {
    cfg.validate();
    require(n_train >= 1, "n_train must be >= 1");
    require(n_valid >= 0, "n_valid must be >= 0");
    require(burn_in >= 0, "burn_in must be >= 0");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    const int total = n_train + n_valid + n_test;
    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    manifest.source = {{"kind", "ks"},
                       {"ks_config", ks_config_json(cfg)},
                       {"horizon", horizon},
                       {"burn_in", burn_in},
                       {"seed", seed}};
    manifest.entries.resize(total);

    auto role_of = [&](int i) -> std::string {
        if (i < n_train) return "train";
        if (i < n_train + n_valid) return "valid";
        return "test";
    };
    auto name_of = [&](int i) {
        char buf[32];
        int local = i < n_train ? i : (i < n_train + n_valid ? i - n_train : i - n_train - n_valid);
        std::snprintf(buf, sizeof(buf), "%s_%04d.gled", role_of(i).c_str(), local);
        return std::string(buf);
    };

    parallel_for(total, [&](long i) {
        uint64_t traj_seed = seed ^ static_cast<uint64_t>(i);
        CounterRng rng(traj_seed);
        std::vector<double> u0 = random_initial_state(cfg, rng);
        u0 = burn_in_state(std::move(u0), cfg, burn_in);
        Trajectory traj = simulate(u0, cfg, horizon);
        write_trajectory(out_dir / name_of(static_cast<int>(i)), traj, 8);
        manifest.entries[i] = {name_of(static_cast<int>(i)), traj_seed, role_of(static_cast<int>(i))};
    });

    manifest.save(out_dir / "manifest.json");
    return manifest;
}

}  // namespace ks
}  // namespace gled
