#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gled/rng.hpp"
#include "gled/stats.hpp"

using namespace gled;
using namespace gled::stats;

namespace {

constexpr double kTwoPi = 2.0 * 3.141592653589793238462643383279502884;

ks::Trajectory make_traj(const NdArray& states) {
    ks::Trajectory t;
    t.states = states;
    t.step = 0.25;
    return t;
}

NdArray cosine_states(int T, int n, int mode, double amp = 1.0, double phase_step = 0.0) {
    NdArray s({T, n});
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < n; ++i)
            s.data[t * n + i] = amp * std::cos(kTwoPi * mode * i / n + t * phase_step);
    return s;
}

}  // namespace

TEST_CASE("relative error series") {
    auto truth = make_traj(cosine_states(5, 16, 2));
    auto same = relative_error(truth, truth);
    for (double e : same.e) CHECK(e == 0.0);

    auto zero = make_traj(NdArray({5, 16}));
    auto e0 = relative_error(zero, truth);
    for (double e : e0.e) CHECK(e == Catch::Approx(1.0).epsilon(1e-12));

    // pred = 2*truth -> e = 1 everywhere
    auto twice = truth;
    for (auto& v : twice.states.data) v *= 2;
    auto e2 = relative_error(twice, truth);
    for (double e : e2.e) CHECK(e == Catch::Approx(1.0).epsilon(1e-12));

    // scale covariance: scaling both by c leaves e unchanged
    auto pred = truth;
    CounterRng rng(4);
    for (auto& v : pred.states.data) v += 0.1 * rng.normal();
    auto base = relative_error(pred, truth);
    auto scaled_p = pred;
    auto scaled_t = truth;
    for (auto& v : scaled_p.states.data) v *= -3.7;
    for (auto& v : scaled_t.states.data) v *= -3.7;
    auto scaled = relative_error(scaled_p, scaled_t);
    for (size_t i = 0; i < base.e.size(); ++i)
        CHECK(scaled.e[i] == Catch::Approx(base.e[i]).epsilon(1e-12));

    // zero-norm truth state is flagged and excluded from aggregates
    auto t2 = truth;
    for (int i = 0; i < 16; ++i) t2.states.data[2 * 16 + i] = 0.0;
    auto flagged = relative_error(pred, t2);
    CHECK(flagged.valid[2] == 0);
    CHECK(flagged.valid[1] == 1);
    CHECK(std::isfinite(flagged.mean_valid()));

    auto wrong = make_traj(NdArray({5, 8}));
    CHECK_THROWS_AS(relative_error(wrong, truth), ContractError);
}

TEST_CASE("histogram basics and TV distance") {
    std::vector<double> xs{0.1, 0.2, 0.6, -0.4}, ys{0.0, 0.1, -0.2, 0.3};
    auto h = histogram2d(xs, ys, 4, 4, -1, 1, -1, 1);
    CHECK(h.total == 4.0);

    // normalized density sums (times bin area) to 1
    double mass = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) mass += h.density(i, j) * h.bin_area();
    CHECK(mass == Catch::Approx(1.0).epsilon(1e-12));

    CHECK(histogram_distance(h, h) == 0.0);

    // disjoint supports -> distance 1; symmetry
    std::vector<double> xs2{-0.9, -0.8}, ys2{-0.9, -0.9};
    auto h2 = histogram2d(xs2, ys2, 4, 4, -1, 1, -1, 1);
    CHECK(histogram_distance(h, h2) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(histogram_distance(h2, h) == histogram_distance(h, h2));

    auto other = histogram2d(xs, ys, 5, 4, -1, 1, -1, 1);
    CHECK_THROWS_AS(histogram_distance(h, other), ContractError);
}

TEST_CASE("ux-uxx cloud sits on the analytic ellipse") {
    const int n = 64;
    const double L = 22.0;
    const int mode = 3;
    auto states = cosine_states(4, n, mode, 1.0, 0.3);
    auto cloud = derivative_cloud(states, L);
    double k = kTwoPi * mode / L;
    // u = A cos(kx): u_x = -A k sin, u_xx = -A k^2 cos -> (ux/k)^2 + (uxx/k^2)^2 = A^2
    for (size_t i = 0; i < cloud.ux.size(); ++i) {
        double a = cloud.ux[i] / k;
        double b = cloud.uxx[i] / (k * k);
        // amplitude varies per state row; recover from the pair itself
        double amp2 = a * a + b * b;
        CHECK(amp2 == Catch::Approx(1.0).epsilon(1e-9));
    }

    auto hist = ux_uxx_density({&states}, L, 50, 50, 2 * k, 2 * k * k);
    CHECK(hist.total > 0);
    CHECK(histogram_distance(hist, hist) == 0.0);
    CHECK_THROWS_AS(ux_uxx_density({}, L, 50, 50, 1, 1), ContractError);
}

TEST_CASE("energy spectrum concentrates and satisfies Parseval") {
    const int n = 64;
    // u = cos(2*pi*3 x / L): all energy in mode 3
    auto states = cosine_states(3, n, 3);
    auto e = energy_spectrum(states, 1);
    REQUIRE(static_cast<int>(e.size()) == n / 2);
    for (int k = 1; k <= n / 2; ++k) {
        if (k == 3)
            CHECK(e[k - 1] == Catch::Approx(0.25).epsilon(1e-10));  // |A/2|^2
        else
            CHECK(std::abs(e[k - 1]) < 1e-20);
    }

    // Parseval on a random field: sum_k 2 E(k) + mean^2 == <u^2>
    CounterRng rng(8);
    NdArray field({5, n});
    for (auto& v : field.data) v = rng.normal() + 0.3;
    auto spec = energy_spectrum(field, 1);
    double lhs = 0;
    for (double ek : spec) lhs += 2 * ek;
    double mean = 0, msq = 0;
    for (double v : field.data) mean += v;
    mean /= field.size();
    // the identity holds per line with the line mean; pooled check uses the
    // average of per-line means^2
    double mean2_acc = 0;
    for (int t = 0; t < 5; ++t) {
        double m = 0;
        for (int i = 0; i < n; ++i) m += field.data[t * n + i];
        m /= n;
        mean2_acc += m * m;
    }
    for (double v : field.data) msq += v * v;
    msq /= field.size();
    CHECK(lhs + mean2_acc / 5 == Catch::Approx(msq).epsilon(1e-10));

    // white noise is flat within Monte-Carlo error
    NdArray noise({400, n});
    CounterRng nrng(77);
    for (auto& v : noise.data) v = nrng.normal();
    auto flat = energy_spectrum(noise, 1);
    double avg = 0;
    for (int k = 0; k < n / 2 - 1; ++k) avg += flat[k];  // skip folded Nyquist
    avg /= (n / 2 - 1);
    for (int k = 0; k < n / 2 - 1; ++k) CHECK(std::abs(flat[k] - avg) / avg < 0.15);

    CHECK_THROWS_AS(energy_spectrum(states, 5), ContractError);
}

TEST_CASE("spatial correlation via the spectrum") {
    const int n = 64;
    auto states = cosine_states(3, n, 4);
    auto r = spatial_correlation(states, 1);
    REQUIRE(static_cast<int>(r.size()) == n / 2 + 1);
    CHECK(r[0] == 1.0);
    double k = kTwoPi * 4 / n;  // per grid index
    for (int lag = 0; lag <= n / 2; ++lag)
        CHECK(r[lag] == Catch::Approx(std::cos(k * lag)).margin(1e-10));

    // |R| <= 1 and Wiener-Khinchin equals direct lag averaging
    CounterRng rng(10);
    NdArray field({6, n});
    for (auto& v : field.data) v = rng.normal() * (1 + 0.5 * rng.uniform01());
    auto rr = spatial_correlation(field, 1);
    for (double v : rr) CHECK(std::abs(v) <= 1.0 + 1e-12);

    double mean = 0;
    for (double v : field.data) mean += v;
    mean /= field.size();
    for (int lag = 0; lag <= n / 2; ++lag) {
        double num = 0, den = 0;
        for (int t = 0; t < 6; ++t)
            for (int i = 0; i < n; ++i) {
                double a = field.data[t * n + i] - mean;
                double b = field.data[t * n + (i + lag) % n] - mean;
                num += a * b;
                den += a * a;
            }
        CHECK(rr[lag] == Catch::Approx(num / den).margin(1e-8));
    }

    NdArray constant({2, n});
    for (auto& v : constant.data) v = 3.0;
    CHECK_THROWS_AS(spatial_correlation(constant, 1), ContractError);
}

TEST_CASE("temporal correlation of a probe series") {
    const int N = 2000, P = 40;
    std::vector<double> probe(N);
    for (int t = 0; t < N; ++t) probe[t] = std::sin(kTwoPi * t / P) + 0.5;
    auto rho = temporal_correlation(probe, 3 * P);
    CHECK(rho[0] == 1.0);
    CHECK(rho[P] > 0.95);  // one full period
    for (double v : rho) CHECK(std::abs(v) <= 1.0 + 1e-12);

    std::vector<double> constant(100, 2.0);
    CHECK_THROWS_AS(temporal_correlation(constant, 10), ContractError);
    CHECK_THROWS_AS(temporal_correlation(probe, N + 1), ContractError);
}

TEST_CASE("mean, rms and shear-stress profiles") {
    // constant field: mean c, rms 0, stress 0
    NdArray cfield({3, 4, 5});
    for (auto& v : cfield.data) v = 2.5;
    auto prof = mean_rms_stress({&cfield, &cfield}, 1);
    REQUIRE(prof.coordinate.size() == 4);
    for (int y = 0; y < 4; ++y) {
        CHECK(prof.mean[0][y] == Catch::Approx(2.5).epsilon(1e-14));
        CHECK(prof.rms[0][y] == 0.0);
        CHECK(prof.shear[y] == Catch::Approx(0.0).margin(1e-12));
    }

    // u' = v' identical fluctuating fields: <u'v'> == <u'^2>
    CounterRng rng(3);
    NdArray u({8, 4, 6});
    for (auto& v : u.data) v = rng.normal() + 1.0;
    auto same = mean_rms_stress({&u, &u}, 1);
    for (int y = 0; y < 4; ++y)
        CHECK(same.shear[y] == Catch::Approx(same.rms[0][y] * same.rms[0][y]).epsilon(1e-10));

    // antisymmetric synthetic channel: mean profile antisymmetric
    NdArray chan({4, 8, 3});
    for (int t = 0; t < 4; ++t)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 3; ++x)
                chan.data[(t * 8 + y) * 3 + x] = (y - 3.5) / 3.5;  // odd about the centerline
    auto anti = mean_rms_stress({&chan}, 1);
    for (int y = 0; y < 4; ++y)
        CHECK(anti.mean[0][y] == Catch::Approx(-anti.mean[0][7 - y]).margin(1e-12));

    NdArray single({1, 4, 5});
    CHECK_THROWS_AS(mean_rms_stress({&single}, 1), ContractError);
    CHECK_THROWS_AS(mean_rms_stress({&cfield}, 0), ContractError);

    // wall scaling helpers
    NdArray shearfield({2, 6, 2});
    for (int t = 0; t < 2; ++t)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 2; ++x) shearfield.data[(t * 6 + y) * 2 + x] = 0.4 * y;
    auto sp = mean_rms_stress({&shearfield}, 1);
    double utau = friction_velocity(sp, 0.01, 0.1);
    CHECK(utau == Catch::Approx(std::sqrt(0.01 * 4.0)).epsilon(1e-12));
    auto wall = to_wall_units(sp, utau, 0.01, 0.1);
    CHECK(wall.mean[0][1] == Catch::Approx(0.4 / utau).epsilon(1e-12));
    CHECK(wall.coordinate[1] == Catch::Approx(0.1 * utau / 0.01).epsilon(1e-12));
}

TEST_CASE("csv emission") {
    namespace fs = std::filesystem;
    auto path = fs::temp_directory_path() / "gled_stats.csv";
    write_csv(path, {"t", "e"}, {{0.0, 0.5}, {0.25, 0.75}});
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "t,e");
    std::getline(is, line);
    CHECK(line.substr(0, 2) == "0,");
    fs::remove(path);
}
