#pragma once

// Test-only oracle: central finite differences against reverse-mode
// gradients. Lives outside the library so the checked implementation can
// never share code with it.

#include <cmath>
#include <functional>
#include <vector>

#include "gled/nn/graph.hpp"
#include "gled/rng.hpp"

namespace gled::testsupport {

using BuildFn = std::function<nn::TensorPtr<double>(nn::Graph<double>&,
                                                    const std::vector<nn::TensorPtr<double>>&)>;

inline std::vector<double> random_values(long n, CounterRng& rng, double kink_guard = 0.0) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = 4.0 * rng.uniform01() - 2.0;
        if (kink_guard > 0 && std::abs(x) < kink_guard) x += (x >= 0 ? kink_guard : -kink_guard);
    }
    return v;
}

/// Worst relative disagreement between reverse mode and central differences
/// over every element of every input tensor. The builder must be pure.
inline double max_gradient_error(const std::vector<Shape>& shapes, const BuildFn& build,
                                 uint64_t seed, double kink_guard = 0.0, double h = 1e-5) {
    CounterRng rng(seed);
    std::vector<std::vector<double>> base;
    base.reserve(shapes.size());
    for (const auto& s : shapes) base.push_back(random_values(shape_numel(s), rng, kink_guard));

    auto eval = [&](const std::vector<std::vector<double>>& vals, bool want_grad,
                    std::vector<std::vector<double>>* grads) {
        nn::Graph<double> g;
        std::vector<nn::TensorPtr<double>> leaves;
        for (size_t i = 0; i < shapes.size(); ++i)
            leaves.push_back(g.leaf(shapes[i], vals[i], /*needs_grad=*/true));
        auto loss = build(g, leaves);
        require(loss->numel() == 1, "gradcheck builder must return a scalar");
        double out = loss->v[0];
        if (want_grad) {
            g.backward(loss);
            grads->clear();
            for (auto& l : leaves) grads->push_back(std::vector<double>(l->g.begin(), l->g.end()));
        }
        return out;
    };

    std::vector<std::vector<double>> analytic;
    eval(base, true, &analytic);

    double worst = 0.0;
    for (size_t t = 0; t < shapes.size(); ++t) {
        for (long i = 0; i < static_cast<long>(base[t].size()); ++i) {
            auto plus = base, minus = base;
            plus[t][i] += h;
            minus[t][i] -= h;
            double fd = (eval(plus, false, nullptr) - eval(minus, false, nullptr)) / (2 * h);
            double ref = std::max({std::abs(fd), std::abs(analytic[t][i]), 1e-4});
            worst = std::max(worst, std::abs(fd - analytic[t][i]) / ref);
        }
    }
    return worst;
}

/// Random-weight contraction to a scalar so every output element matters.
inline nn::TensorPtr<double> contract(nn::Graph<double>& g, nn::TensorPtr<double> y,
                                      uint64_t seed) {
    CounterRng rng(seed ^ 0xABCDEF);
    auto w = g.constant(y->shape, random_values(y->numel(), rng));
    return g.sum_all(g.mul(y, w));
}

/// Runs the whole primitive battery at one seed; returns the worst error.
inline double primitive_battery_error(uint64_t seed) {
    using nn::Graph;
    using nn::TensorPtr;
    double worst = 0.0;
    auto track = [&](double e) { worst = std::max(worst, e); };

    track(max_gradient_error({{3, 4}, {4, 2}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.matmul(in[0], in[1]), seed);
                             },
                             seed));
    track(max_gradient_error({{3, 4}, {2, 4}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.matmul_nt(in[0], in[1]), seed);
                             },
                             seed));
    track(max_gradient_error({{2, 5}, {2, 5}, {5}, {5}},
                             [&](Graph<double>& g, const auto& in) {
                                 auto y = g.add_bias(g.sub(in[0], in[1]), in[2]);
                                 return contract(g, g.colwise_affine(y, in[3], in[2]), seed);
                             },
                             seed));
    track(max_gradient_error({{2, 6}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.relu(in[0]), seed);
                             },
                             seed, 0.05));
    track(max_gradient_error({{3, 5}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.softmax_rows(g.scale(in[0], 0.7)), seed);
                             },
                             seed));
    track(max_gradient_error({{2, 7}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.layer_norm_rows(in[0], 1e-5), seed);
                             },
                             seed));
    track(max_gradient_error({{2, 6}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.l2norm_rows(in[0]), seed);
                             },
                             seed));
    track(max_gradient_error({{12}},
                             [&](Graph<double>& g, const auto& in) {
                                 auto y = g.mul(in[0], in[0]);
                                 return g.add(g.l2norm_all(in[0]), g.mean_all(y));
                             },
                             seed));
    track(max_gradient_error({{2, 2, 6}, {3, 2, 3}, {3}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.conv1d_periodic(in[0], in[1], in[2]), seed);
                             },
                             seed));
    track(max_gradient_error({{1, 3, 8}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.avg_pool1d2(in[0]), seed);
                             },
                             seed));
    track(max_gradient_error({{1, 3, 4}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.upsample_linear1d2(in[0]), seed);
                             },
                             seed));
    track(max_gradient_error({{2, 3, 4}, {2, 3}, {2, 3}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.affine_channels(in[0], in[1], in[2]), seed);
                             },
                             seed));
    track(max_gradient_error({{2, 3}, {2, 2}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.concat(in[0], in[1], 1), seed);
                             },
                             seed));
    track(max_gradient_error({{3, 5}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.slice(in[0], 1, 1, 3), seed);
                             },
                             seed));
    track(max_gradient_error({{7}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.gather(in[0], {0, 3, 3, 6}), seed);
                             },
                             seed));
    track(max_gradient_error({{4, 4}, {3}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.band_bias(in[0], in[1]), seed);
                             },
                             seed));
    track(max_gradient_error({{6}, {1}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.sub_scalar(in[0], in[1]), seed);
                             },
                             seed));
    track(max_gradient_error({{2, 6}},
                             [&](Graph<double>& g, const auto& in) {
                                 return contract(g, g.reshape(in[0], {3, 4}), seed);
                             },
                             seed));
    return worst;
}

}  // namespace gled::testsupport
