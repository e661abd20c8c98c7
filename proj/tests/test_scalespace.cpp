#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gled/rng.hpp"
#include "gled/scalespace.hpp"

using namespace gled;
using namespace gled::scale;

namespace {

RestrictionSpec spec_1d(int micro, int macro, RestrictMode mode) {
    RestrictionSpec s;
    s.micro_shape = {micro};
    s.macro_shape = {macro};
    s.mode = mode;
    return s;
}

NdArray random_field(const Shape& shape, uint64_t seed) {
    NdArray f(shape);
    CounterRng rng(seed);
    for (auto& v : f.data) v = rng.normal();
    return f;
}

}  // namespace

TEST_CASE("spec validation") {
    auto ok = spec_1d(64, 16, RestrictMode::subsample);
    REQUIRE_NOTHROW(ok.validate());

    auto bad = spec_1d(64, 48, RestrictMode::subsample);  // 64 % 48 != 0
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    REQUIRE_NOTHROW(spec_1d(64, 48, RestrictMode::linear_interpolate).validate());

    auto inverted = spec_1d(16, 64, RestrictMode::linear_interpolate);
    CHECK_THROWS_AS(inverted.validate(), ConfigError);

    // shape mismatch at call time is a contract error
    NdArray wrong({32});
    CHECK_THROWS_AS(restrict(wrong, ok), ContractError);
    CHECK_THROWS_AS(lift_linear(wrong, ok), ContractError);
}

TEST_CASE("restrict: strided subsampling") {
    auto spec = spec_1d(64, 16, RestrictMode::subsample);
    auto s = random_field({64}, 3);
    auto z = restrict(s, spec);
    REQUIRE(z.shape == Shape{16});
    for (int j = 0; j < 16; ++j) CHECK(z.data[j] == s.data[4 * j]);
}

TEST_CASE("restrict: identical shapes are the identity for every mode") {
    for (auto mode : {RestrictMode::subsample, RestrictMode::linear_interpolate,
                      RestrictMode::block_average}) {
        auto spec = spec_1d(16, 16, mode);
        auto s = random_field({16}, 5);
        auto z = restrict(s, spec);
        CHECK(z.data == s.data);
    }
}

TEST_CASE("restrict: linear interpolation reproduces linear profiles") {
    // clamped axis: a linear ramp is reproduced exactly at macro coordinates
    RestrictionSpec spec = spec_1d(31, 11, RestrictMode::linear_interpolate);
    spec.periodic = {false};
    NdArray s({31});
    for (int i = 0; i < 31; ++i) s.data[i] = 0.5 + 0.25 * i;
    auto z = restrict(s, spec);
    for (int j = 0; j < 11; ++j) {
        double x = static_cast<double>(j) * 30 / 10;  // micro coordinate of node j
        CHECK(z.data[j] == Catch::Approx(0.5 + 0.25 * x).epsilon(1e-14));
    }
}

TEST_CASE("restrict: block averaging") {
    auto spec = spec_1d(8, 4, RestrictMode::block_average);
    NdArray s({8}, {1, 3, 5, 7, 2, 4, 6, 8});
    auto z = restrict(s, spec);
    CHECK(z.data == std::vector<double>{2, 6, 3, 7});
}

TEST_CASE("linearity of every mode") {
    for (auto mode : {RestrictMode::subsample, RestrictMode::linear_interpolate,
                      RestrictMode::block_average}) {
        auto spec = spec_1d(24, 8, mode);
        auto s1 = random_field({24}, 7);
        auto s2 = random_field({24}, 9);
        const double a = 1.7, b = -0.4;
        NdArray combo({24});
        for (int i = 0; i < 24; ++i) combo.data[i] = a * s1.data[i] + b * s2.data[i];
        auto z_combo = restrict(combo, spec);
        auto z1 = restrict(s1, spec);
        auto z2 = restrict(s2, spec);
        for (int j = 0; j < 8; ++j)
            CHECK(z_combo.data[j] ==
                  Catch::Approx(a * z1.data[j] + b * z2.data[j]).margin(1e-13));
    }
}

TEST_CASE("lift_linear basics") {
    auto spec = spec_1d(64, 16, RestrictMode::subsample);

    // constant field stays constant
    NdArray zc({16});
    for (auto& v : zc.data) v = 3.25;
    auto s = lift_linear(zc, spec);
    REQUIRE(s.shape == Shape{64});
    for (double v : s.data) CHECK(v == Catch::Approx(3.25).epsilon(1e-14));

    // restrict(lift(z)) == z when macro nodes coincide with micro nodes
    auto z = random_field({16}, 11);
    auto round = restrict(lift_linear(z, spec), spec);
    for (int j = 0; j < 16; ++j) CHECK(round.data[j] == Catch::Approx(z.data[j]).margin(1e-14));
}

TEST_CASE("multi-axis restriction applies separably") {
    RestrictionSpec spec;
    spec.micro_shape = {8, 6};
    spec.macro_shape = {4, 3};
    spec.mode = RestrictMode::subsample;
    auto s = random_field({8, 6}, 13);
    auto z = restrict(s, spec);
    REQUIRE(z.shape == Shape{4, 3});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) CHECK(z.data[i * 3 + j] == s.data[(2 * i) * 6 + 2 * j]);
}

TEST_CASE("encode_dataset maps state by state and is reproducible") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "gled_scale_enc";
    fs::remove_all(dir);
    fs::create_directories(dir / "micro");

    ks::Trajectory traj;
    traj.states = random_field({5, 64}, 17);
    traj.step = 0.25;
    write_trajectory(dir / "micro" / "train_0000.gled", traj);
    DatasetManifest micro;
    micro.base_dir = dir / "micro";
    micro.entries = {{"train_0000.gled", 0, "train"}};

    auto spec = spec_1d(64, 16, RestrictMode::subsample);
    auto macro = encode_dataset(micro, spec, dir / "a");
    REQUIRE(macro.entries.size() == 1);
    auto enc = read_trajectory(dir / "a" / "train_0000.gled");
    REQUIRE(enc.states.shape == Shape{5, 16});
    CHECK(enc.step == 0.25);
    for (int s = 0; s < 5; ++s)
        for (int j = 0; j < 16; ++j)
            CHECK(enc.state(s)[j] == traj.state(s)[4 * j]);

    // pure function of inputs: re-run is bit-identical
    encode_dataset(micro, spec, dir / "b");
    std::ifstream fa(dir / "a" / "train_0000.gled", std::ios::binary);
    std::ifstream fb(dir / "b" / "train_0000.gled", std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);

    // empty manifest: empty output, success
    DatasetManifest empty;
    empty.base_dir = dir / "micro";
    auto out = encode_dataset(empty, spec, dir / "empty");
    CHECK(out.entries.empty());
    CHECK(fs::exists(dir / "empty" / "manifest.json"));
    fs::remove_all(dir);
}
