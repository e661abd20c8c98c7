#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gled/core.hpp"
#include "gled/fft.hpp"
#include "gled/ks.hpp"

namespace gled::stats {

// ---------------------------------------------------------------------------
// Error series
// ---------------------------------------------------------------------------

struct ErrorSeries {
    std::vector<double> e;       // ||truth - pred||^2 / ||truth||^2 per state
    std::vector<uint8_t> valid;  // zero-norm truth states are flagged out

    double mean_valid() const {
        double acc = 0;
        long n = 0;
        for (size_t i = 0; i < e.size(); ++i)
            if (valid[i]) {
                acc += e[i];
                ++n;
            }
        require(n > 0, "no valid entries in error series");
        return acc / n;
    }
};

inline ErrorSeries relative_error(const ks::Trajectory& pred, const ks::Trajectory& truth) {
    require(pred.states.shape == truth.states.shape,
            "relative_error: shape mismatch " + shape_str(pred.states.shape) + " vs " +
                shape_str(truth.states.shape));
    ErrorSeries out;
    const long n = truth.count();
    out.e.resize(n);
    out.valid.assign(n, 1);
    for (long s = 0; s < n; ++s) {
        auto p = pred.state(s);
        auto t = truth.state(s);
        double num = 0, den = 0;
        for (size_t j = 0; j < t.size(); ++j) {
            double d = t[j] - p[j];
            num += d * d;
            den += t[j] * t[j];
        }
        if (den == 0.0) {
            out.e[s] = 0.0;
            out.valid[s] = 0;
        } else {
            out.e[s] = num / den;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2D histograms
// ---------------------------------------------------------------------------

struct Histogram2D {
    std::vector<double> x_edges, y_edges;  // uniform, size bins+1
    NdArray counts;                        // [bx, by]
    double total = 0;                      // in-range points
    bool normalized = false;

    int bins_x() const { return counts.extent(0); }
    int bins_y() const { return counts.extent(1); }
    double bin_area() const {
        return (x_edges[1] - x_edges[0]) * (y_edges[1] - y_edges[0]);
    }
    /// Probability density; sums times bin area to 1 when normalized.
    double density(int i, int j) const {
        require(normalized && total > 0, "histogram not normalized");
        return counts.data[static_cast<long>(i) * bins_y() + j] / (total * bin_area());
    }
    bool same_binning(const Histogram2D& o) const {
        return x_edges == o.x_edges && y_edges == o.y_edges;
    }
};

inline Histogram2D histogram2d(std::span<const double> xs, std::span<const double> ys, int bins_x,
                               int bins_y, double x_lo, double x_hi, double y_lo, double y_hi,
                               bool normalize = true) {
    require(xs.size() == ys.size(), "histogram2d needs paired samples");
    require(!xs.empty(), "histogram2d: empty input");
    require(bins_x >= 1 && bins_y >= 1 && x_hi > x_lo && y_hi > y_lo, "histogram2d: bad binning");
    Histogram2D h;
    h.x_edges.resize(bins_x + 1);
    h.y_edges.resize(bins_y + 1);
    for (int i = 0; i <= bins_x; ++i) h.x_edges[i] = x_lo + (x_hi - x_lo) * i / bins_x;
    for (int j = 0; j <= bins_y; ++j) h.y_edges[j] = y_lo + (y_hi - y_lo) * j / bins_y;
    h.counts = NdArray({bins_x, bins_y});
    for (size_t s = 0; s < xs.size(); ++s) {
        double fx = (xs[s] - x_lo) / (x_hi - x_lo) * bins_x;
        double fy = (ys[s] - y_lo) / (y_hi - y_lo) * bins_y;
        if (fx < 0 || fy < 0) continue;
        int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
        if (ix >= bins_x || iy >= bins_y) continue;
        h.counts.data[static_cast<long>(ix) * bins_y + iy] += 1.0;
        h.total += 1.0;
    }
    h.normalized = normalize;
    return h;
}

/// Total-variation distance between two histograms on identical binning.
inline double histogram_distance(const Histogram2D& a, const Histogram2D& b) {
    require(a.same_binning(b), "histogram_distance: binning mismatch");
    require(a.total > 0 && b.total > 0, "histogram_distance: empty histogram");
    double tv = 0;
    for (long i = 0; i < a.counts.size(); ++i)
        tv += std::abs(a.counts.data[i] / a.total - b.counts.data[i] / b.total);
    return 0.5 * tv;
}

// ---------------------------------------------------------------------------
// Spectral derivatives of periodic 1D states (the KS attractor diagnostics)
// ---------------------------------------------------------------------------

struct DerivativeCloud {
    std::vector<double> ux, uxx;
};

/// First/second spatial derivatives of every state, pseudo-spectrally on the
/// periodic grid (odd derivative drops the Nyquist image).
inline DerivativeCloud derivative_cloud(const NdArray& states, double domain_length) {
    require(states.rank() == 2, "derivative_cloud wants [time, grid]");
    require(domain_length > 0, "domain length must be positive");
    const int n = states.extent(1);
    const long T = states.extent(0);
    require(T >= 1, "derivative_cloud: empty input");
    const double two_pi = 2.0 * 3.141592653589793238462643383279502884;

    std::vector<double> k(n), k2(n);
    for (int i = 0; i < n; ++i) {
        int m = (i <= n / 2) ? i : i - n;
        double kk = two_pi * m / domain_length;
        k[i] = (i == n / 2) ? 0.0 : kk;
        k2[i] = kk * kk;
    }

    DerivativeCloud cloud;
    cloud.ux.resize(T * n);
    cloud.uxx.resize(T * n);
    std::vector<fft::cplx> in(n), spec(n), d1(n), d2(n), out(n);
    for (long t = 0; t < T; ++t) {
        const double* u = states.ptr() + t * n;
        for (int i = 0; i < n; ++i) in[i] = u[i];
        fft::forward(in.data(), spec.data(), n);
        for (int i = 0; i < n; ++i) {
            d1[i] = fft::cplx(0.0, k[i]) * spec[i];
            d2[i] = -k2[i] * spec[i];
        }
        fft::inverse(d1.data(), out.data(), n);
        for (int i = 0; i < n; ++i) cloud.ux[t * n + i] = out[i].real();
        fft::inverse(d2.data(), out.data(), n);
        for (int i = 0; i < n; ++i) cloud.uxx[t * n + i] = out[i].real();
    }
    return cloud;
}

/// Symmetric range covering the [lo, hi] percentiles of |values|.
inline std::pair<double, double> symmetric_percentile_range(std::vector<double> values,
                                                            double hi_percentile = 99.0) {
    require(!values.empty(), "percentile range of empty data");
    for (auto& v : values) v = std::abs(v);
    std::sort(values.begin(), values.end());
    size_t idx = static_cast<size_t>(hi_percentile / 100.0 * (values.size() - 1));
    double r = std::max(values[idx], 1e-12);
    return {-r, r};
}

/// Joint density of (u_x, u_xx) over all states of all given trajectories.
inline Histogram2D ux_uxx_density(const std::vector<const NdArray*>& state_blocks,
                                  double domain_length, int bins_x, int bins_y, double ux_range,
                                  double uxx_range) {
    require(!state_blocks.empty(), "ux_uxx_density: empty input");
    std::vector<double> ux, uxx;
    for (const NdArray* block : state_blocks) {
        require(block && block->rank() == 2, "ux_uxx_density wants [time, grid] blocks");
        auto cloud = derivative_cloud(*block, domain_length);
        ux.insert(ux.end(), cloud.ux.begin(), cloud.ux.end());
        uxx.insert(uxx.end(), cloud.uxx.begin(), cloud.uxx.end());
    }
    return histogram2d(ux, uxx, bins_x, bins_y, -ux_range, ux_range, -uxx_range, uxx_range);
}

// ---------------------------------------------------------------------------
// Spectra and correlations
// ---------------------------------------------------------------------------

namespace detail {

/// Walks every 1D line along `axis` of a row-major array.
template <class Fn>
void for_each_line(const NdArray& a, int axis, Fn&& fn) {
    const long outer = [&] {
        long o = 1;
        for (int d = 0; d < axis; ++d) o *= a.shape[d];
        return o;
    }();
    const long inner = a.stride(axis);
    const int n = a.shape[axis];
    std::vector<double> line(n);
    for (long o = 0; o < outer; ++o)
        for (long q = 0; q < inner; ++q) {
            const double* src = a.ptr() + o * n * inner + q;
            for (int i = 0; i < n; ++i) line[i] = src[i * inner];
            fn(line);
        }
}

}  // namespace detail

/// One-sided energy spectrum E(k) = <|u_hat(k)|^2>, k = 1..n/2, averaged over
/// all other axes. The DFT is 1/n-normalized and the Nyquist mode carries
/// half weight, so sum_k 2 E(k) + mean^2 recovers <u^2> exactly.
inline std::vector<double> energy_spectrum(const NdArray& data, int axis) {
    require(axis >= 0 && axis < data.rank(), "energy_spectrum: axis out of range");
    const int n = data.shape[axis];
    require(n >= 2, "energy_spectrum needs at least 2 points along the axis");
    std::vector<double> acc(n / 2 + 1, 0.0);
    long lines = 0;
    std::vector<fft::cplx> in(n), spec(n);
    detail::for_each_line(data, axis, [&](const std::vector<double>& line) {
        for (int i = 0; i < n; ++i) in[i] = line[i];
        fft::forward(in.data(), spec.data(), n);
        for (int k = 1; k <= n / 2; ++k) acc[k] += std::norm(spec[k] / static_cast<double>(n));
        ++lines;
    });
    require(lines > 0, "energy_spectrum: empty input");
    std::vector<double> e(n / 2);
    for (int k = 1; k <= n / 2; ++k) {
        double w = (n % 2 == 0 && k == n / 2) ? 0.5 : 1.0;  // fold the Nyquist image
        e[k - 1] = w * acc[k] / lines;
    }
    return e;
}

/// Normalized two-point correlation R(r) of fluctuations about the pooled
/// mean, through the spectrum (circular/Wiener-Khinchin). r = 0..n/2.
inline std::vector<double> spatial_correlation(const NdArray& data, int axis) {
    require(axis >= 0 && axis < data.rank(), "spatial_correlation: axis out of range");
    const int n = data.shape[axis];
    require(n >= 2, "spatial_correlation needs at least 2 points");

    double mean = 0;
    for (double v : data.data) mean += v;
    mean /= data.size();

    std::vector<double> acc(n, 0.0);
    std::vector<fft::cplx> in(n), spec(n);
    long lines = 0;
    detail::for_each_line(data, axis, [&](const std::vector<double>& line) {
        for (int i = 0; i < n; ++i) in[i] = line[i] - mean;
        fft::forward(in.data(), spec.data(), n);
        for (int i = 0; i < n; ++i) acc[i] += std::norm(spec[i]);
        ++lines;
    });
    require(lines > 0, "spatial_correlation: empty input");

    std::vector<fft::cplx> pow(n), corr(n);
    for (int i = 0; i < n; ++i) pow[i] = acc[i];
    fft::inverse(pow.data(), corr.data(), n);
    double c0 = corr[0].real();
    require(c0 > 0, "spatial_correlation: zero-variance field");
    std::vector<double> r(n / 2 + 1);
    for (int i = 0; i <= n / 2; ++i) r[i] = corr[i].real() / c0;
    return r;
}

/// Normalized autocovariance of a probe series at lags 0..max_lag (biased
/// estimator, so |rho| <= 1 holds unconditionally).
inline std::vector<double> temporal_correlation(std::span<const double> series, int max_lag) {
    const long n = static_cast<long>(series.size());
    require(max_lag >= 0 && n > max_lag, "temporal_correlation: series shorter than max lag");
    double mean = 0;
    for (double v : series) mean += v;
    mean /= n;
    double c0 = 0;
    for (double v : series) c0 += (v - mean) * (v - mean);
    require(c0 > 0, "temporal_correlation: constant series");
    std::vector<double> rho(max_lag + 1);
    for (int lag = 0; lag <= max_lag; ++lag) {
        double c = 0;
        for (long t = 0; t + lag < n; ++t) c += (series[t] - mean) * (series[t + lag] - mean);
        rho[lag] = c / c0;
    }
    return rho;
}

// ---------------------------------------------------------------------------
// Mean / RMS / Reynolds stress profiles
// ---------------------------------------------------------------------------

struct ProfileSet {
    std::vector<double> coordinate;         // grid index along the profile axis
    std::vector<std::vector<double>> mean;  // [component][coordinate]
    std::vector<std::vector<double>> rms;   // fluctuation rms per component
    std::vector<double> shear;              // <u'v'> of the first two components
    long sample_count = 0;
};

/// Profiles along `profile_axis` (a spatial axis), averaging over axis 0
/// (time/samples) and every other spatial axis.
inline ProfileSet mean_rms_stress(const std::vector<const NdArray*>& components,
                                  int profile_axis) {
    require(!components.empty() && components[0], "mean_rms_stress: no components");
    const NdArray& first = *components[0];
    require(first.rank() >= 2, "mean_rms_stress wants [samples, spatial...]");
    require(profile_axis >= 1 && profile_axis < first.rank(),
            "profile axis must be a spatial axis");
    require(first.extent(0) >= 2, "mean_rms_stress needs at least 2 samples");
    for (const NdArray* c : components)
        require(c && c->shape == first.shape, "mean_rms_stress: component shape mismatch");

    const int ny = first.shape[profile_axis];
    const long stride = first.stride(profile_axis);
    const long outer = [&] {
        long o = 1;
        for (int d = 0; d < profile_axis; ++d) o *= first.shape[d];
        return o;
    }();
    const long per_coord = outer * stride;  // averaged elements per profile point

    ProfileSet out;
    out.sample_count = first.extent(0);
    out.coordinate.resize(ny);
    for (int y = 0; y < ny; ++y) out.coordinate[y] = y;

    const size_t nc = components.size();
    std::vector<std::vector<double>> sums(nc, std::vector<double>(ny, 0.0));
    std::vector<std::vector<double>> sq(nc, std::vector<double>(ny, 0.0));
    std::vector<double> cross(ny, 0.0);

    for (size_t c = 0; c < nc; ++c) {
        const double* p = components[c]->ptr();
        for (long o = 0; o < outer; ++o)
            for (int y = 0; y < ny; ++y) {
                const double* base = p + (o * ny + y) * stride;
                for (long q = 0; q < stride; ++q) {
                    sums[c][y] += base[q];
                    sq[c][y] += base[q] * base[q];
                }
            }
    }
    if (nc >= 2) {
        const double* pu = components[0]->ptr();
        const double* pv = components[1]->ptr();
        for (long o = 0; o < outer; ++o)
            for (int y = 0; y < ny; ++y) {
                const double* bu = pu + (o * ny + y) * stride;
                const double* bv = pv + (o * ny + y) * stride;
                for (long q = 0; q < stride; ++q) cross[y] += bu[q] * bv[q];
            }
    }

    out.mean.assign(nc, std::vector<double>(ny));
    out.rms.assign(nc, std::vector<double>(ny));
    for (size_t c = 0; c < nc; ++c)
        for (int y = 0; y < ny; ++y) {
            double m = sums[c][y] / per_coord;
            out.mean[c][y] = m;
            out.rms[c][y] = std::sqrt(std::max(0.0, sq[c][y] / per_coord - m * m));
        }
    if (nc >= 2) {
        out.shear.resize(ny);
        for (int y = 0; y < ny; ++y)
            out.shear[y] = cross[y] / per_coord - out.mean[0][y] * out.mean[1][y];
    }
    return out;
}

/// Friction velocity from the wall-adjacent mean gradient: sqrt(nu |dU/dy|).
inline double friction_velocity(const ProfileSet& profiles, double nu, double dy) {
    require(!profiles.mean.empty() && profiles.mean[0].size() >= 2, "profile too short");
    require(nu > 0 && dy > 0, "need positive nu and dy");
    double dudy = (profiles.mean[0][1] - profiles.mean[0][0]) / dy;
    return std::sqrt(nu * std::abs(dudy));
}

/// Wall-unit scaling: y+ = y u_tau / nu, values scaled by 1/u_tau.
inline ProfileSet to_wall_units(const ProfileSet& profiles, double u_tau, double nu, double dy) {
    require(u_tau > 0, "friction velocity must be positive");
    ProfileSet out = profiles;
    for (auto& y : out.coordinate) y = y * dy * u_tau / nu;
    for (auto& comp : out.mean)
        for (auto& v : comp) v /= u_tau;
    for (auto& comp : out.rms)
        for (auto& v : comp) v /= u_tau;
    for (auto& v : out.shear) v /= (u_tau * u_tau);
    return out;
}

// ---------------------------------------------------------------------------
// CSV emission (one header line, deterministic column order)
// ---------------------------------------------------------------------------

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw PersistenceError("cannot write csv: " + path.string());
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    os.precision(17);
    for (const auto& row : rows) {
        require(row.size() == header.size(), "csv row width mismatch");
        for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
    if (!os) throw PersistenceError("csv write failed: " + path.string());
}

}  // namespace gled::stats
