#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gled {

// Error taxonomy shared by all modules; the CLI maps these to exit codes.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PersistenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IngestionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (int e : s) {
        if (e < 0) throw ContractError("negative extent in shape");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major double array used for fields, trajectories and statistics.
struct NdArray {
    Shape shape;
    std::vector<double> data;

    NdArray() = default;
    explicit NdArray(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    NdArray(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(static_cast<long>(data.size()) == shape_numel(shape),
                "NdArray data size does not match shape " + shape_str(shape));
    }

    long size() const { return static_cast<long>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int extent(int axis) const {
        require(axis >= 0 && axis < rank(), "axis out of range");
        return shape[axis];
    }
    /// Product of extents after `axis` (row-major stride of that axis).
    long stride(int axis) const {
        long s = 1;
        for (int a = axis + 1; a < rank(); ++a) s *= shape[a];
        return s;
    }
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
};

// ---------------------------------------------------------------------------
// Worker control. GLED_THREADS caps the pool; --deterministic forces 1.
// Kernels partition work so results do not depend on the thread count.
// ---------------------------------------------------------------------------

namespace detail {
inline int& thread_cap() {
    static int cap = [] {
        if (const char* env = std::getenv("GLED_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return cap;
}
inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail

inline int max_threads() { return detail::thread_cap(); }
inline void set_max_threads(int n) { detail::thread_cap() = std::max(1, n); }

/// Runs fn(i) for i in [0,n). Chunks are contiguous, so any per-index
/// computation is identical whether the loop runs serial or parallel.
/// Nested calls degrade to serial execution.
template <class F>
void parallel_for(long n, F&& fn, long grain = 1) {
    if (n <= 0) return;
    int threads = std::min<long>(max_threads(), std::max<long>(1, n / std::max<long>(grain, 1)));
    if (threads <= 1 || detail::in_parallel_region()) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    long chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        long b = t * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([b, e, &fn] {
            detail::in_parallel_region() = true;
            for (long i = b; i < e; ++i) fn(i);
            detail::in_parallel_region() = false;
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace gled
