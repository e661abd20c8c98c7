#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "gled/core.hpp"
#include "gled/dataset.hpp"

namespace gled::scale {

enum class RestrictMode { subsample, linear_interpolate, block_average };

inline std::string to_string(RestrictMode m) {
    switch (m) {
        case RestrictMode::subsample: return "subsample";
        case RestrictMode::linear_interpolate: return "linear_interpolate";
        case RestrictMode::block_average: return "block_average";
    }
    return "?";
}

inline RestrictMode restrict_mode_from(const std::string& s) {
    if (s == "subsample") return RestrictMode::subsample;
    if (s == "linear_interpolate") return RestrictMode::linear_interpolate;
    if (s == "block_average") return RestrictMode::block_average;
    throw ConfigError("unknown restriction mode: " + s);
}

/// Non-trainable restriction from micro to macro resolution. Axes are
/// periodic by default (matching the KS domain); clamped extension is
/// selectable per axis for ingested non-periodic data.
struct RestrictionSpec {
    Shape micro_shape;
    Shape macro_shape;
    RestrictMode mode = RestrictMode::subsample;
    std::vector<bool> periodic;  // per axis; empty means all periodic

    bool axis_periodic(int a) const {
        return periodic.empty() ? true : periodic.at(static_cast<size_t>(a));
    }

    void validate() const {
        if (micro_shape.empty() || micro_shape.size() != macro_shape.size())
            throw ConfigError("restriction shapes must be non-empty and of equal rank");
        for (size_t a = 0; a < micro_shape.size(); ++a) {
            if (macro_shape[a] < 1 || micro_shape[a] < 1)
                throw ConfigError("restriction extents must be >= 1");
            if (macro_shape[a] > micro_shape[a])
                throw ConfigError("macro extent exceeds micro extent on axis " +
                                  std::to_string(a));
            if ((mode == RestrictMode::subsample || mode == RestrictMode::block_average) &&
                micro_shape[a] % macro_shape[a] != 0)
                throw ConfigError(to_string(mode) + " needs micro extent divisible by macro " +
                                  "extent (axis " + std::to_string(a) + ")");
        }
        if (!periodic.empty() && periodic.size() != micro_shape.size())
            throw ConfigError("periodic flags rank mismatch");
    }
};

namespace detail {

/// Samples the piecewise-linear reconstruction of `line` at fractional index x.
inline double interp_line(const std::vector<double>& line, double x, bool periodic) {
    const int n = static_cast<int>(line.size());
    if (periodic) {
        double xm = std::fmod(x, static_cast<double>(n));
        if (xm < 0) xm += n;
        int i0 = static_cast<int>(std::floor(xm));
        double f = xm - i0;
        int i1 = (i0 + 1) % n;
        return line[i0] * (1.0 - f) + line[i1] * f;
    }
    if (x <= 0) return line.front();
    if (x >= n - 1) return line.back();
    int i0 = static_cast<int>(std::floor(x));
    double f = x - i0;
    return line[i0] * (1.0 - f) + line[i0 + 1] * f;
}

/// Applies a 1D resampling along `axis` of a row-major array.
template <class Fn>
NdArray apply_axis(const NdArray& in, int axis, int new_extent, Fn&& resample_line) {
    Shape out_shape = in.shape;
    out_shape[axis] = new_extent;
    NdArray out(out_shape);
    const long outer = [&] {
        long o = 1;
        for (int a = 0; a < axis; ++a) o *= in.shape[a];
        return o;
    }();
    const long inner = in.stride(axis);
    const int n_in = in.shape[axis];
    std::vector<double> line(n_in), resampled(new_extent);
    for (long o = 0; o < outer; ++o) {
        for (long q = 0; q < inner; ++q) {
            const double* src = in.ptr() + (o * n_in) * inner + q;
            for (int i = 0; i < n_in; ++i) line[i] = src[i * inner];
            resample_line(line, resampled);
            double* dst = out.ptr() + (o * new_extent) * inner + q;
            for (int i = 0; i < new_extent; ++i) dst[i * inner] = resampled[i];
        }
    }
    return out;
}

}  // namespace detail

/// E: micro -> macro. Linear in its input for every mode.
inline NdArray restrict(const NdArray& s, const RestrictionSpec& spec) {
    spec.validate();
    require(s.shape == spec.micro_shape,
            "restrict: state shape " + shape_str(s.shape) + " != micro shape " +
                shape_str(spec.micro_shape));
    NdArray cur = s;
    for (size_t a = 0; a < spec.micro_shape.size(); ++a) {
        const int n_in = spec.micro_shape[a];
        const int n_out = spec.macro_shape[a];
        if (n_in == n_out) continue;
        const bool per = spec.axis_periodic(static_cast<int>(a));
        switch (spec.mode) {
            case RestrictMode::subsample: {
                const int stride = n_in / n_out;
                cur = detail::apply_axis(cur, static_cast<int>(a), n_out,
                                         [&](const std::vector<double>& line,
                                             std::vector<double>& out) {
                                             for (int j = 0; j < n_out; ++j)
                                                 out[j] = line[j * stride];
                                         });
                break;
            }
            case RestrictMode::linear_interpolate: {
                cur = detail::apply_axis(
                    cur, static_cast<int>(a), n_out,
                    [&](const std::vector<double>& line, std::vector<double>& out) {
                        for (int j = 0; j < n_out; ++j) {
                            double x = per ? static_cast<double>(j) * n_in / n_out
                                           : static_cast<double>(j) * (n_in - 1) /
                                                 std::max(1, n_out - 1);
                            out[j] = detail::interp_line(line, x, per);
                        }
                    });
                break;
            }
            case RestrictMode::block_average: {
                const int stride = n_in / n_out;
                cur = detail::apply_axis(cur, static_cast<int>(a), n_out,
                                         [&](const std::vector<double>& line,
                                             std::vector<double>& out) {
                                             for (int j = 0; j < n_out; ++j) {
                                                 double acc = 0.0;
                                                 for (int r = 0; r < stride; ++r)
                                                     acc += line[j * stride + r];
                                                 out[j] = acc / stride;
                                             }
                                         });
                break;
            }
        }
    }
    return cur;
}

/// Piecewise-linear upsampling macro -> micro (periodic per axis flag).
/// Passes through the macro nodes, so restrict∘lift is the identity whenever
/// macro nodes are a subset of micro nodes.
inline NdArray lift_linear(const NdArray& z, const RestrictionSpec& spec) {
    spec.validate();
    require(z.shape == spec.macro_shape,
            "lift_linear: state shape " + shape_str(z.shape) + " != macro shape " +
                shape_str(spec.macro_shape));
    NdArray cur = z;
    for (size_t a = 0; a < spec.macro_shape.size(); ++a) {
        const int n_in = spec.macro_shape[a];
        const int n_out = spec.micro_shape[a];
        if (n_in == n_out) continue;
        const bool per = spec.axis_periodic(static_cast<int>(a));
        cur = detail::apply_axis(cur, static_cast<int>(a), n_out,
                                 [&](const std::vector<double>& line, std::vector<double>& out) {
                                     for (int i = 0; i < n_out; ++i) {
                                         double x = per ? static_cast<double>(i) * n_in / n_out
                                                        : static_cast<double>(i) * (n_in - 1) /
                                                              std::max(1, n_out - 1);
                                         out[i] = detail::interp_line(line, x, per);
                                     }
                                 });
    }
    return cur;
}

/// Maps every stored trajectory state-by-state through restrict and writes
/// the macro dataset alongside a manifest. Pure function of its inputs.
inline DatasetManifest encode_dataset(const DatasetManifest& manifest, const RestrictionSpec& spec,
                                      const std::filesystem::path& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    DatasetManifest out;
    out.base_dir = out_dir;
    out.source = manifest.source;
    out.source["encoded"] = true;
    out.source["restriction"] = {{"mode", to_string(spec.mode)},
                                 {"micro_shape", spec.micro_shape},
                                 {"macro_shape", spec.macro_shape}};
    out.entries = manifest.entries;

    parallel_for(static_cast<long>(manifest.entries.size()), [&](long i) {
        const auto& entry = manifest.entries[i];
        ks::Trajectory traj = read_trajectory(manifest.base_dir / entry.file);
        require(traj.count() > 0, "empty trajectory in " + entry.file);
        Shape state_shape(traj.states.shape.begin() + 1, traj.states.shape.end());
        require(state_shape == spec.micro_shape,
                "trajectory state shape mismatch in " + entry.file);

        Shape out_shape = spec.macro_shape;
        out_shape.insert(out_shape.begin(), static_cast<int>(traj.count()));
        ks::Trajectory macro;
        macro.states = NdArray(out_shape);
        macro.step = traj.step;
        macro.t0 = traj.t0;
        for (long s = 0; s < traj.count(); ++s) {
            NdArray state(spec.micro_shape,
                          std::vector<double>(traj.state(s).begin(), traj.state(s).end()));
            NdArray zs = restrict(state, spec);
            std::copy(zs.data.begin(), zs.data.end(), macro.state(s).begin());
        }
        write_trajectory(out_dir / entry.file, macro, 8);
    });

    out.save(out_dir / "manifest.json");
    return out;
}

}  // namespace gled::scale
