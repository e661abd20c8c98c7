#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gled/nn/graph.hpp"
#include "gled/nn/params.hpp"
#include "gled/rng.hpp"
#include "support/gradcheck.hpp"

using namespace gled;
using nn::Graph;
using nn::TensorPtr;
using namespace gled::testsupport;

TEST_CASE("primitive forward identities") {
    Graph<double> g;

    // relu(-1)=0, relu(2)=2
    auto r = g.relu(g.constant({2}, {-1.0, 2.0}));
    CHECK(r->v[0] == 0.0);
    CHECK(r->v[1] == 2.0);

    // softmax over a singleton axis -> 1.0
    auto sm = g.softmax_rows(g.constant({2, 1}, {3.0, -7.0}));
    CHECK(sm->v[0] == 1.0);
    CHECK(sm->v[1] == 1.0);

    // layer_norm of a constant vector -> zeros
    auto ln = g.layer_norm_rows(g.constant({1, 4}, {5.0, 5.0, 5.0, 5.0}), 1e-5);
    for (double v : ln->v) CHECK(v == 0.0);

    // softmax rows sum to one
    auto sm2 = g.softmax_rows(g.constant({1, 3}, {0.3, -1.0, 2.0}));
    CHECK(sm2->v[0] + sm2->v[1] + sm2->v[2] == Catch::Approx(1.0).epsilon(1e-12));

    // softmax over empty axis is a contract error
    CHECK_THROWS_AS(g.softmax_rows(g.constant({2, 0}, {})), ContractError);

    // sinusoidal embedding is level-dependent and bounded
    auto e3 = nn::sinusoidal_embed<double>(3, 8);
    auto e4 = nn::sinusoidal_embed<double>(4, 8);
    CHECK(e3 != e4);
    for (double v : e3) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("backward basic identities") {
    // loss = sum(x) -> grad = ones
    {
        Graph<double> g;
        auto x = g.leaf({3}, {1.0, -2.0, 0.5}, true);
        g.backward(g.sum_all(x));
        for (double v : x->g) CHECK(v == 1.0);
    }
    // loss = ||x||^2 at (3,4) -> grad (6,8)
    {
        Graph<double> g;
        auto x = g.leaf({2}, {3.0, 4.0}, true);
        auto n = g.l2norm_all(x);
        g.backward(g.mul(n, n));
        CHECK(x->g[0] == Catch::Approx(6.0).epsilon(1e-12));
        CHECK(x->g[1] == Catch::Approx(8.0).epsilon(1e-12));
    }
    // backward on a non-scalar is a contract error
    {
        Graph<double> g;
        auto x = g.leaf({2}, {1.0, 2.0}, true);
        CHECK_THROWS_AS(g.backward(g.relu(x)), ContractError);
    }
}

TEST_CASE("gradcheck battery across seeds") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        double worst = primitive_battery_error(seed);
        INFO("seed " << seed << " worst rel error " << worst);
        REQUIRE(worst < 1e-5);
    }
}

TEST_CASE("periodic convolution commutes with circular shifts") {
    CounterRng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const int L = 12, C = 2, O = 3, K = 5;
        auto xv = random_values(C * L, rng);
        auto wv = random_values(O * C * K, rng);
        auto bv = random_values(O, rng);
        int shift = 1 + static_cast<int>(rng.next_u64() % (L - 1));

        auto run = [&](const std::vector<double>& x) {
            Graph<double> g(false);
            auto y = g.conv1d_periodic(g.constant({1, C, L}, x), g.constant({O, C, K}, wv),
                                       g.constant({O}, bv));
            return y->v;
        };
        auto shifted = [&](const std::vector<double>& x, int rows) {
            std::vector<double> out(x.size());
            for (int r = 0; r < rows; ++r)
                for (int l = 0; l < L; ++l) out[r * L + (l + shift) % L] = x[r * L + l];
            return out;
        };

        auto y_then_shift = shifted(run(xv), O);
        auto shift_then_y = run(shifted(xv, C));
        for (size_t i = 0; i < y_then_shift.size(); ++i)
            REQUIRE(y_then_shift[i] == Catch::Approx(shift_then_y[i]).margin(1e-12));
    }
}

TEST_CASE("forward+backward is a pure function of inputs") {
    CounterRng rng(5);
    auto xv = random_values(12, rng);
    auto run = [&] {
        Graph<double> g;
        auto x = g.leaf({3, 4}, xv, true);
        auto y = g.layer_norm_rows(g.relu(x), 1e-5);
        g.backward(g.l2norm_all(y));
        return std::vector<double>(x->g.begin(), x->g.end());
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1 == g2);
}

TEST_CASE("adam optimizer contracts") {
    nn::AdamConfig adam;
    adam.lr = 0.1;

    // zero grads: parameters unchanged except the step count
    {
        nn::ParamStore<double> store;
        auto p = store.create("w", {3});
        p->v = {1.0, -2.0, 0.5};
        auto before = p->v;
        store.adam_step(adam);
        CHECK(p->v == before);
        CHECK(store.step_count() == 1);
    }

    // one step on f(w) = w^2 from w=1 moves toward 0
    {
        nn::ParamStore<double> store;
        auto w = store.create("w", {1});
        w->v = {1.0};
        Graph<double> g;
        auto n = g.l2norm_all(w);
        g.backward(g.mul(n, n));
        store.adam_step(adam);
        CHECK(w->v[0] < 1.0);
        CHECK(w->v[0] > 0.0);
        CHECK(w->g[0] == 0.0);  // grads cleared
    }

    // determinism: identical histories give bit-identical updates
    {
        auto run = [] {
            nn::ParamStore<double> store;
            CounterRng rng(9);
            auto w = store.create_normal("w", {4, 4}, rng, 0.3);
            nn::AdamConfig cfg;
            for (int it = 0; it < 5; ++it) {
                Graph<double> g;
                auto y = g.matmul(w, w);
                g.backward(g.l2norm_all(y));
                store.adam_step(cfg);
            }
            return store.at("w")->v;
        };
        CHECK(run() == run());
    }
}

TEST_CASE("checkpoint round trip is byte-stable") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "gled_nn_ckpt";
    fs::create_directories(dir);

    nn::ParamStore<float> store;
    CounterRng rng(123);
    store.create_normal("b.bias", {5}, rng, 1.0);
    store.create_normal("a.weight", {3, 5}, rng, 0.1);

    auto p1 = dir / "one.gckpt";
    auto p2 = dir / "two.gckpt";
    nn::save_checkpoint(store, p1);

    nn::ParamStore<float> loaded;
    loaded.create("b.bias", {5});
    loaded.create("a.weight", {3, 5});
    nn::load_checkpoint(loaded, p1);
    for (const auto& [name, p] : store.all()) {
        auto q = loaded.at(name);
        REQUIRE(q->v == p->v);
    }
    nn::save_checkpoint(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());

    // shape mismatch is a contract error
    nn::ParamStore<float> wrong;
    wrong.create("b.bias", {5});
    wrong.create("a.weight", {5, 3});
    CHECK_THROWS_AS(nn::load_checkpoint(wrong, p1), ContractError);
    fs::remove_all(dir);
}
