#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "gled/core.hpp"
#include "gled/fft.hpp"
#include "gled/rng.hpp"

namespace gled::ks {

/// Kuramoto-Sivashinsky setup: u_t = -u u_x - u_xx - nu u_xxxx on [0,L],
/// periodic, integrated pseudo-spectrally with ETDRK4 at step micro_step and
/// recorded every macro_step.
struct KsConfig {
    double domain_length = 22.0;
    int grid_points = 64;
    double viscosity = 1.0;
    double micro_step = 0.025;
    double macro_step = 0.25;

    void validate() const {
        if (!(domain_length > 0)) throw ConfigError("domain_length must be > 0");
        if (grid_points < 8 || grid_points % 2 != 0)
            throw ConfigError("grid_points must be even and >= 8");
        if (!(viscosity > 0)) throw ConfigError("viscosity must be > 0");
        if (!(micro_step > 0)) throw ConfigError("micro_step must be > 0");
        if (!(macro_step > 0)) throw ConfigError("macro_step must be > 0");
        double ratio = macro_step / micro_step;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
            throw ConfigError("macro_step must be an integer multiple of micro_step");
    }

    int substeps() const {
        validate();
        return static_cast<int>(std::round(macro_step / micro_step));
    }
};

/// Precomputed exponential-integrator coefficients for the KS linear symbol.
/// The phi-function weights q,f1,f2,f3 come from contour averages around each
/// point dt*Lk, which stays accurate through the removable singularity at 0.
/// f2 carries both middle-stage weights, so at Lk=0 the four stage weights
/// reduce to the classic dt/6, dt/3 (once per middle stage), dt/6.
struct EtdrkTables {
    int n = 0;
    double dt = 0.0;
    std::vector<double> wavenumbers;    // 2*pi*m/L in FFT mode order
    std::vector<double> linear_symbol;  // k^2 - nu*k^4
    std::vector<double> e_full, e_half; // exp(dt*Lk), exp(dt*Lk/2)
    std::vector<double> q, f1, f2, f3;
    std::vector<double> deriv;          // k for the odd-derivative operator, Nyquist zeroed
    std::vector<uint8_t> keep;          // 2/3-rule dealias mask
};

inline EtdrkTables precompute_tables(const KsConfig& cfg, int contour_points = 32) {
    cfg.validate();
    if (contour_points < 16) throw ConfigError("contour_points must be >= 16");
    const int n = cfg.grid_points;
    const double two_pi = 2.0 * 3.141592653589793238462643383279502884;
    const double dk = two_pi / cfg.domain_length;

    EtdrkTables t;
    t.n = n;
    t.dt = cfg.micro_step;
    t.wavenumbers.resize(n);
    t.deriv.resize(n);
    t.keep.resize(n);
    for (int i = 0; i < n; ++i) {
        int m = (i <= n / 2) ? i : i - n;  // 0..n/2, then negative modes
        t.wavenumbers[i] = dk * m;
        t.deriv[i] = (i == n / 2) ? 0.0 : dk * m;  // d/dx has no real Nyquist image
        t.keep[i] = static_cast<uint8_t>(std::abs(m) <= n / 3);
    }

    t.linear_symbol.resize(n);
    t.e_full.resize(n);
    t.e_half.resize(n);
    t.q.resize(n);
    t.f1.resize(n);
    t.f2.resize(n);
    t.f3.resize(n);

    const int M = contour_points;
    std::vector<std::complex<double>> ring(M);
    for (int j = 0; j < M; ++j) {
        double ang = 3.141592653589793238462643383279502884 * (2.0 * j + 1.0) / M;
        ring[j] = std::polar(1.0, ang);  // unit circle, avoids the real axis for even M
    }

    for (int i = 0; i < n; ++i) {
        double k = t.wavenumbers[i];
        double lk = k * k - cfg.viscosity * k * k * k * k;
        t.linear_symbol[i] = lk;
        double z = t.dt * lk;
        t.e_full[i] = std::exp(z);
        t.e_half[i] = std::exp(0.5 * z);

        std::complex<double> sq{}, s1{}, s2{}, s3{};
        for (int j = 0; j < M; ++j) {
            std::complex<double> s = z + ring[j];
            std::complex<double> es = std::exp(s);
            std::complex<double> s3inv = 1.0 / (s * s * s);
            sq += (std::exp(0.5 * s) - 1.0) / s;
            s1 += (-4.0 - s + es * (4.0 - 3.0 * s + s * s)) * s3inv;
            s2 += (2.0 + s + es * (-2.0 + s)) * s3inv;
            s3 += (-4.0 - 3.0 * s - s * s + es * (4.0 - s)) * s3inv;
        }
        double inv_m = 1.0 / M;
        t.q[i] = t.dt * (sq * inv_m).real();
        t.f1[i] = t.dt * (s1 * inv_m).real();
        t.f2[i] = 2.0 * t.dt * (s2 * inv_m).real();
        t.f3[i] = t.dt * (s3 * inv_m).real();
    }
    return t;
}

namespace detail {

/// Dealiased pseudo-spectral nonlinearity N(v) = -0.5*i*k*FFT(IFFT(v)^2).
inline void ks_nonlinear(const std::vector<fft::cplx>& v, const EtdrkTables& t,
                         std::vector<fft::cplx>& out) {
    const int n = t.n;
    std::vector<fft::cplx> phys(n);
    fft::inverse(v.data(), phys.data(), n);
    std::vector<fft::cplx> sq(n);
    for (int i = 0; i < n; ++i) {
        double u = phys[i].real();
        sq[i] = u * u;
    }
    out.resize(n);
    fft::forward(sq.data(), out.data(), n);
    for (int i = 0; i < n; ++i) {
        if (!t.keep[i]) {
            out[i] = 0.0;
            continue;
        }
        // -0.5*i*k * spectrum
        out[i] = fft::cplx(0.0, -0.5 * t.deriv[i]) * out[i];
    }
}

inline void step_spectrum(std::vector<fft::cplx>& v, const EtdrkTables& t, bool nonlinear) {
    const int n = t.n;
    std::vector<fft::cplx> nv(n), na(n), nb(n), nc(n), a(n), b(n), c(n);
    if (nonlinear)
        ks_nonlinear(v, t, nv);
    else
        std::fill(nv.begin(), nv.end(), fft::cplx{});

    for (int i = 0; i < n; ++i) a[i] = t.e_half[i] * v[i] + t.q[i] * nv[i];
    if (nonlinear)
        ks_nonlinear(a, t, na);
    else
        std::fill(na.begin(), na.end(), fft::cplx{});

    for (int i = 0; i < n; ++i) b[i] = t.e_half[i] * v[i] + t.q[i] * na[i];
    if (nonlinear)
        ks_nonlinear(b, t, nb);
    else
        std::fill(nb.begin(), nb.end(), fft::cplx{});

    for (int i = 0; i < n; ++i) c[i] = t.e_half[i] * a[i] + t.q[i] * (2.0 * nb[i] - nv[i]);
    if (nonlinear)
        ks_nonlinear(c, t, nc);
    else
        std::fill(nc.begin(), nc.end(), fft::cplx{});

    for (int i = 0; i < n; ++i)
        v[i] = t.e_full[i] * v[i] + t.f1[i] * nv[i] + t.f2[i] * (na[i] + nb[i]) + t.f3[i] * nc[i];
}

}  // namespace detail

/// One ETDRK4 step. Input must be finite; output is the real-space state with
/// conjugate symmetry enforced by discarding the O(eps) imaginary residue.
inline std::vector<double> step(std::span<const double> u, const EtdrkTables& t,
                                bool nonlinear = true) {
    require(static_cast<int>(u.size()) == t.n, "state length does not match tables");
    for (double x : u)
        if (!std::isfinite(x)) throw NumericalError("numerical blow-up: non-finite state");
    std::vector<fft::cplx> v(t.n), spec(t.n);
    for (int i = 0; i < t.n; ++i) v[i] = u[i];
    fft::forward(v.data(), spec.data(), t.n);
    detail::step_spectrum(spec, t, nonlinear);
    std::vector<fft::cplx> phys(t.n);
    fft::inverse(spec.data(), phys.data(), t.n);
    std::vector<double> out(t.n);
    for (int i = 0; i < t.n; ++i) out[i] = phys[i].real();
    return out;
}

/// Time-ordered sequence of equally spaced states.
struct Trajectory {
    NdArray states;  // time-major: [count, grid...]
    double step = 0.0;
    double t0 = 0.0;

    long count() const { return states.rank() == 0 ? 0 : states.extent(0); }
    long state_size() const { return states.rank() == 0 ? 0 : states.stride(0); }
    std::span<double> state(long i) {
        return {states.ptr() + i * state_size(), static_cast<size_t>(state_size())};
    }
    std::span<const double> state(long i) const {
        return {states.ptr() + i * state_size(), static_cast<size_t>(state_size())};
    }
    void validate() const {
        require(step > 0, "trajectory step must be > 0");
    }
};

/// Integrates u0 over [0, horizon] and records floor(horizon/macro_step)+1
/// states (u0 included), each separated by substeps() micro steps.
inline Trajectory simulate(const std::vector<double>& u0, const KsConfig& cfg, double horizon) {
    require(horizon > 0, "horizon must be > 0");
    const EtdrkTables tables = precompute_tables(cfg);
    require(static_cast<int>(u0.size()) == cfg.grid_points, "u0 length != grid_points");
    const int sub = cfg.substeps();
    const long n_out = static_cast<long>(std::floor(horizon / cfg.macro_step + 1e-9)) + 1;

    Trajectory traj;
    traj.states = NdArray({static_cast<int>(n_out), cfg.grid_points});
    traj.step = cfg.macro_step;
    traj.t0 = 0.0;

    std::vector<double> u = u0;
    std::copy(u.begin(), u.end(), traj.state(0).begin());
    for (long s = 1; s < n_out; ++s) {
        for (int j = 0; j < sub; ++j) u = step(u, tables);
        std::copy(u.begin(), u.end(), traj.state(s).begin());
    }
    return traj;
}

/// Random smooth initial condition: the first 8 Fourier modes with standard
/// normal coefficients, normalized to unit RMS.
inline std::vector<double> random_initial_state(const KsConfig& cfg, CounterRng& rng) {
    cfg.validate();
    const int n = cfg.grid_points;
    const int modes = std::min(8, n / 2 - 1);
    const double two_pi = 2.0 * 3.141592653589793238462643383279502884;
    std::vector<double> u(n, 0.0);
    for (int m = 1; m <= modes; ++m) {
        double a = rng.normal();
        double b = rng.normal();
        for (int i = 0; i < n; ++i) {
            double x = two_pi * m * i / n;
            u[i] += a * std::cos(x) + b * std::sin(x);
        }
    }
    double ms = 0.0;
    for (double x : u) ms += x * x;
    double rms = std::sqrt(ms / n);
    require(rms > 1e-12, "degenerate initial condition");
    for (double& x : u) x /= rms;
    return u;
}

/// Advances a state through `burn_in` time units without recording.
inline std::vector<double> burn_in_state(std::vector<double> u, const KsConfig& cfg,
                                         double burn_in) {
    if (burn_in <= 0) return u;
    const EtdrkTables tables = precompute_tables(cfg);
    long steps = static_cast<long>(std::round(burn_in / cfg.micro_step));
    for (long s = 0; s < steps; ++s) u = step(u, tables);
    return u;
}

}  // namespace gled::ks
