#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gled/dynamics.hpp"

using namespace gled;
using namespace gled::dyn;

namespace {

AttentionConfig small_config() {
    AttentionConfig cfg;
    cfg.d_z = 3;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.window = 8;
    return cfg;
}

NdArray random_sequence(int n, int d, uint64_t seed) {
    NdArray z({n, d});
    CounterRng rng(seed);
    for (auto& v : z.data) v = rng.normal();
    return z;
}

/// Randomize all parameters so the model is a generic nonlinear map.
template <class T>
void randomize(Propagator<T>& m, uint64_t seed, double scl = 0.25) {
    CounterRng rng(seed);
    for (const auto& [name, p] : m.params().all())
        for (auto& v : p->v) v = static_cast<T>(scl * rng.normal());
}

}  // namespace

TEST_CASE("attend contract examples") {
    // one key/value pair: output equals that value for any query
    NdArray q({1, 2}, {0.3, -4.0});
    NdArray k1({1, 2}, {1.0, 1.0});
    NdArray v1({1, 3}, {5.0, -1.0, 2.0});
    auto out = attend(q, k1, v1);
    CHECK(out.data == std::vector<double>{5.0, -1.0, 2.0});

    // two identical keys: output is the average of the two values
    NdArray k2({2, 2}, {0.7, -0.2, 0.7, -0.2});
    NdArray v2({2, 3}, {1.0, 2.0, 3.0, 5.0, 6.0, 7.0});
    out = attend(q, k2, v2);
    CHECK(out.data[0] == Catch::Approx(3.0).epsilon(1e-12));
    CHECK(out.data[1] == Catch::Approx(4.0).epsilon(1e-12));
    CHECK(out.data[2] == Catch::Approx(5.0).epsilon(1e-12));

    // adding a constant to all logits leaves outputs unchanged:
    // shift every key by c along a direction aligned with the query
    NdArray ks({2, 1}, {0.4, -1.1});
    NdArray qs({1, 1}, {2.0});
    NdArray vs({2, 1}, {1.0, -3.0});
    NdArray ks_shift({2, 1}, {0.4 + 0.5, -1.1 + 0.5});  // logits shift by 2.0*0.5
    auto a = attend(qs, ks, vs);
    auto b = attend(qs, ks_shift, vs);
    CHECK(a.data[0] == Catch::Approx(b.data[0]).epsilon(1e-12));

    // weights normalize to one per query: attending over constant values
    NdArray vc({2, 1}, {1.0, 1.0});
    auto norm = attend(qs, ks, vc);
    CHECK(norm.data[0] == Catch::Approx(1.0).epsilon(1e-12));

    NdArray empty({0, 2});
    CHECK_THROWS_AS(attend(q, empty, NdArray({0, 3})), ContractError);
}

TEST_CASE("forward_sequence shapes and window contract") {
    auto cfg = small_config();
    Propagator<double> model(cfg, 3);
    randomize(model, 17);

    auto z = random_sequence(5, cfg.d_z, 1);
    auto pred = model.forward_sequence(z);
    CHECK(pred.shape == Shape{5, cfg.d_z});

    auto too_long = random_sequence(cfg.window + 1, cfg.d_z, 2);
    CHECK_THROWS_AS(model.forward_sequence(too_long), ContractError);
}

TEST_CASE("causality: prefix outputs ignore the future") {
    auto cfg = small_config();
    Propagator<double> model(cfg, 3);
    randomize(model, 17);

    auto z = random_sequence(6, cfg.d_z, 11);
    auto full = model.forward_sequence(z);

    // truncate to the first 4 states: predictions 0..3 must be bit-identical
    NdArray head({4, cfg.d_z});
    std::copy_n(z.ptr(), 4 * cfg.d_z, head.ptr());
    auto part = model.forward_sequence(head);
    for (long i = 0; i < part.size(); ++i) REQUIRE(part.data[i] == full.data[i]);

    // perturbing z_m changes predictions only at positions >= m
    const int m = 3;
    NdArray z2 = z;
    z2.data[m * cfg.d_z + 1] += 0.37;
    auto full2 = model.forward_sequence(z2);
    for (int i = 0; i < m; ++i)
        for (int dd = 0; dd < cfg.d_z; ++dd)
            REQUIRE(full2.data[i * cfg.d_z + dd] == full.data[i * cfg.d_z + dd]);
    double moved = 0;
    for (int dd = 0; dd < cfg.d_z; ++dd)
        moved += std::abs(full2.data[m * cfg.d_z + dd] - full.data[m * cfg.d_z + dd]);
    CHECK(moved > 0);
}

TEST_CASE("attention weights normalize per query") {
    auto cfg = small_config();
    Propagator<double> model(cfg, 3);
    randomize(model, 29);
    auto z = random_sequence(6, cfg.d_z, 4);

    // reconstruct one layer's weights through the public graph by probing the
    // softmax op directly
    nn::Graph<double> g;
    auto leaf = g.constant({6, cfg.d_z}, z.data);
    auto pred = model.forward_graph(g, leaf);
    (void)pred;

    // direct check of the shared kernel at double precision
    std::vector<double> logits{0.1, -5.0, 2.2, 0.0, -1e30, -1e30};
    std::vector<double> w(6);
    nn::kern::softmax_row(logits.data(), w.data(), 6);
    double sum = 0;
    for (double x : w) sum += x;
    CHECK(std::abs(sum - 1.0) < 1e-6);
    CHECK(w[4] == 0.0);  // masked entries vanish exactly
}

TEST_CASE("cached rollout equals recomputed windows bit-exactly") {
    auto cfg = small_config();
    Propagator<double> model(cfg, 3);
    randomize(model, 31);

    const long warmup_n = 3;
    auto warmup = random_sequence(warmup_n, cfg.d_z, 21);
    const long steps = 2 * cfg.window;  // drives well past eviction

    auto res = model.rollout(warmup, steps);
    REQUIRE(res.completed);
    REQUIRE(res.states.extent(0) == steps);

    // reference: no cache, recompute from the full history window each step
    std::vector<std::vector<double>> hist;
    for (long s = 0; s < warmup_n; ++s)
        hist.emplace_back(warmup.ptr() + s * cfg.d_z, warmup.ptr() + (s + 1) * cfg.d_z);
    for (long s = 0; s < steps; ++s) {
        long len = std::min<long>(static_cast<long>(hist.size()), cfg.window);
        NdArray zs({static_cast<int>(len), cfg.d_z});
        for (long w = 0; w < len; ++w)
            std::copy_n(hist[hist.size() - len + w].data(), cfg.d_z, zs.ptr() + w * cfg.d_z);
        auto pred = model.forward_sequence(zs);
        for (int dd = 0; dd < cfg.d_z; ++dd) {
            double expect = pred.data[(len - 1) * cfg.d_z + dd];
            REQUIRE(res.states.data[s * cfg.d_z + dd] == expect);
        }
        hist.emplace_back(res.states.ptr() + s * cfg.d_z,
                          res.states.ptr() + (s + 1) * cfg.d_z);
    }
}

TEST_CASE("cache bookkeeping and mismatch checks") {
    auto cfg = small_config();
    Propagator<double> model(cfg, 3);
    Propagator<double> other(cfg, 4);
    randomize(model, 31);

    auto cache = model.make_cache();
    CounterRng rng(2);
    std::vector<double> z(cfg.d_z);
    for (int s = 0; s < cfg.window + 5; ++s) {
        for (auto& v : z) v = rng.normal();
        model.cached_step(cache, z);
    }
    CHECK(cache.length() == cfg.window);  // FIFO eviction capped at N_t
    CHECK(cache.total == cfg.window + 5);

    CHECK_THROWS_AS(other.cached_step(cache, z), ContractError);
}

TEST_CASE("deterministic rollout and n_steps=0") {
    auto cfg = small_config();
    Propagator<double> model(cfg, 3);
    randomize(model, 31);
    auto warmup = random_sequence(2, cfg.d_z, 5);

    auto a = model.rollout(warmup, 0);
    CHECK(a.states.extent(0) == 0);
    CHECK(a.completed);

    auto r1 = model.rollout(warmup, 12);
    auto r2 = model.rollout(warmup, 12);
    REQUIRE(r1.states.data == r2.states.data);
}

TEST_CASE("rollout aborts on non-finite states with a partial trajectory") {
    auto cfg = small_config();
    Propagator<double> model(cfg, 3);
    randomize(model, 31, /*scl=*/40.0);  // exploding map

    auto warmup = random_sequence(2, cfg.d_z, 5);
    auto res = model.rollout(warmup, 50);
    if (!res.completed) {
        CHECK(res.states.extent(0) < 50);
        CHECK(!res.diagnostic.empty());
    } else {
        SUCCEED("map did not blow up; abort path covered elsewhere");
    }
}

TEST_CASE("training: memorizing a constant sequence") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "gled_dyn_train";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto cfg = small_config();

    // constant macro sequence: the fixed point is learnable
    ks::Trajectory traj;
    traj.states = NdArray({10, cfg.d_z});
    for (long s = 0; s < 10; ++s)
        for (int dd = 0; dd < cfg.d_z; ++dd) traj.states.data[s * cfg.d_z + dd] = 0.5 + 0.1 * dd;
    traj.step = 0.25;
    write_trajectory(dir / "train_0000.gled", traj);

    DatasetManifest manifest;
    manifest.base_dir = dir;
    manifest.entries = {{"train_0000.gled", 0, "train"}};

    Propagator<float> model(cfg, 7);
    PropagatorTrainConfig tc;
    tc.epochs = 150;
    tc.adam.lr = 3e-3;
    auto losses = train_propagator<float>(model, manifest, tc);
    REQUIRE(losses.size() == 151);
    CHECK(losses.back() < losses.front() * 0.05);
    CHECK(losses.back() < 1e-2);

    // single training pair can be memorized to high precision
    ks::Trajectory pair;
    pair.states = NdArray({2, cfg.d_z}, {0.1, -0.2, 0.3, 0.7, 0.4, -0.5});
    pair.step = 0.25;
    write_trajectory(dir / "pair.gled", pair);
    DatasetManifest m2;
    m2.base_dir = dir;
    m2.entries = {{"pair.gled", 0, "train"}};
    Propagator<float> memo(cfg, 9);
    PropagatorTrainConfig coarse;
    coarse.epochs = 300;
    coarse.adam.lr = 1e-2;
    train_propagator<float>(memo, m2, coarse);
    PropagatorTrainConfig fine;  // anneal: the norm loss floor tracks the step size
    fine.epochs = 200;
    fine.adam.lr = 3e-4;
    train_propagator<float>(memo, m2, fine);
    fine.epochs = 300;
    fine.adam.lr = 1e-5;
    auto l2 = train_propagator<float>(memo, m2, fine);
    CHECK(l2.back() < 1e-4);
    fs::remove_all(dir);
}
