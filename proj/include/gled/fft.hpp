#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "gled/core.hpp"

namespace gled::fft {

using cplx = std::complex<double>;

namespace detail {

// One plan per (length, direction). Planning is locked (FFTW requirement);
// execution through the new-array interface is thread-safe. FFTW_UNALIGNED
// lets plans run on arbitrary caller buffers.
inline fftw_plan plan_for(int n, int sign) {
    static std::mutex mtx;
    static std::map<std::pair<int, int>, fftw_plan> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_pair(n, sign);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<cplx> a(n), b(n);
    fftw_plan p = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(a.data()),
                                   reinterpret_cast<fftw_complex*>(b.data()), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) throw NumericalError("fftw plan creation failed for n=" + std::to_string(n));
    cache.emplace(key, p);
    return p;
}

inline void execute(const cplx* in, cplx* out, int n, int sign) {
    require(n > 0, "fft length must be positive");
    require(in != out, "fft buffers must be distinct");
    fftw_plan p = plan_for(n, sign);
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
}

}  // namespace detail

/// Unscaled forward DFT.
inline void forward(const cplx* in, cplx* out, int n) { detail::execute(in, out, n, FFTW_FORWARD); }

/// Inverse DFT scaled by 1/n (forward∘inverse is the identity).
inline void inverse(const cplx* in, cplx* out, int n) {
    detail::execute(in, out, n, FFTW_BACKWARD);
    double s = 1.0 / n;
    for (int i = 0; i < n; ++i) out[i] *= s;
}

inline std::vector<cplx> forward(const std::vector<double>& real_in) {
    int n = static_cast<int>(real_in.size());
    std::vector<cplx> in(n), out(n);
    for (int i = 0; i < n; ++i) in[i] = real_in[i];
    forward(in.data(), out.data(), n);
    return out;
}

/// Inverse DFT of a (nominally conjugate-symmetric) spectrum; returns the
/// real part and optionally reports the largest imaginary residue.
inline std::vector<double> inverse_real(const std::vector<cplx>& spec, double* max_imag = nullptr) {
    int n = static_cast<int>(spec.size());
    std::vector<cplx> out(n);
    inverse(spec.data(), out.data(), n);
    std::vector<double> re(n);
    double mi = 0.0;
    for (int i = 0; i < n; ++i) {
        re[i] = out[i].real();
        mi = std::max(mi, std::abs(out[i].imag()));
    }
    if (max_imag) *max_imag = mi;
    return re;
}

}  // namespace gled::fft
