#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "icm/backend.hpp"

using namespace icm;
namespace fs = std::filesystem;

TEST_CASE("scaled linear schedule matches reference values")
{
    // Frozen from numpy: cumprod(1 - linspace(sqrt(b0), sqrt(b1), 1000)**2).
    const NoiseSchedule s;
    CHECK(s.steps() == 1000);
    CHECK(s.alpha_bar(0) == doctest::Approx(0.99915).epsilon(1e-12));
    CHECK(s.alpha_bar(200) == doctest::Approx(0.7536920451608515).epsilon(1e-12));
    CHECK(s.alpha_bar(999) == doctest::Approx(0.004660098513077238).epsilon(1e-10));
    CHECK_THROWS_AS(s.alpha_bar(-1), ConfigError);
    CHECK_THROWS_AS(s.alpha_bar(1000), ConfigError);
}

TEST_CASE("add_noise is seeded and interpolates signal and noise")
{
    std::mt19937_64 rng(5);
    const Tensor z = test::random_tensor({4, 8, 8}, rng);
    const Tensor a = add_noise(z, 0.7, 42);
    CHECK(a == add_noise(z, 0.7, 42));
    CHECK_FALSE(a == add_noise(z, 0.7, 43));
    CHECK(add_noise(z, 1.0, 9) == z);
    // With alpha_bar = 0 the result is the pure noise; the same noise appears at 0.7.
    const Tensor eps = add_noise(z, 0.0, 42);
    for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(a[i] == doctest::Approx(std::sqrt(0.7) * z[i] + std::sqrt(0.3) * eps[i]).epsilon(1e-12));
    const NoiseSchedule s;
    CHECK(add_noise(z, 200, 42, s) == add_noise(z, s.alpha_bar(200), 42));
}

TEST_CASE("frame pads to a centred square and crop undoes it")
{
    const Frame f = Frame::for_image(6, 10, 64);
    CHECK(f.square == 10);
    CHECK(f.pad_top == 2);
    CHECK(f.pad_left == 0);
    Tensor m = Tensor::chw(1, 10, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
            m.at(0, y, x) = y * 10 + x;
    const Tensor c = crop_to_image(m, f);
    CHECK(c.height() == 6);
    CHECK(c.width() == 10);
    CHECK(c.at(0, 0, 0) == 20);
    CHECK(c.at(0, 5, 9) == 79);

    // Padding is zero in the prepared input.
    const ImagePlane img = test::solid(6, 10, {1, 1, 1});
    const Tensor in = prepare_input(img, 10);
    CHECK(in.at(0, 0, 5) == 0.0);
    CHECK(in.at(1, 5, 5) == 1.0);
}

TEST_CASE("toy backend bundle invariants")
{
    std::mt19937_64 rng(6);
    const ToyBackend b;
    const ImagePlane img = test::random_plane(50, 70, 3, rng);
    const FeatureBundle bundle = b.extract(img);
    CHECK_NOTHROW(bundle.validate(1e-12));
    REQUIRE(bundle.features.size() == 3);
    CHECK(bundle.inter().scale_id == 4);
    CHECK(bundle.features[0].height() == 4); // coarse first
    CHECK(bundle.features[2].height() == 16);
    for (const auto& f : bundle.features) {
        CHECK(f.dim() == 16);
        // Unit-norm descriptors times the gain.
        for (int cell = 0; cell < f.cells(); ++cell) {
            double n = 0;
            for (int k = 0; k < f.dim(); ++k)
                n += f.values[static_cast<std::size_t>(k) * f.cells() + cell] *
                     f.values[static_cast<std::size_t>(k) * f.cells() + cell];
            CHECK(std::sqrt(n) == doctest::Approx(8.0).epsilon(1e-12));
        }
    }
    for (const auto& a : bundle.attention)
        for (int i = 0; i < a.matrix.rows(); ++i) {
            double s = 0;
            for (int j = 0; j < a.matrix.cols(); ++j) {
                CHECK(a.matrix.at(i, j) >= 0.0);
                s += a.matrix.at(i, j);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    CHECK(b.extract(img) == bundle);
    CHECK(b.state_hash() == ToyBackend().state_hash());
    ToyConfig other;
    other.temperature = 0.1;
    CHECK(ToyBackend(other).state_hash() != b.state_hash());
    CHECK_THROWS_AS(b.extract(test::random_plane(8, 8, 1, rng)), DimensionError);
}

TEST_CASE("toy config validation")
{
    ToyConfig c;
    c.inter_scale = 3;
    CHECK_THROWS_AS(ToyBackend{c}, ConfigError);
    c = {};
    c.temperature = 0.0;
    CHECK_THROWS_AS(ToyBackend{c}, ConfigError);
    c = {};
    c.scales = {};
    CHECK_THROWS_AS(ToyBackend{c}, ConfigError);
}

TEST_CASE("diffusion adapter serves dumps and rejects missing ones")
{
    std::mt19937_64 rng(7);
    const fs::path dir = fs::temp_directory_path() / "icm_test_diffusion";
    fs::remove_all(dir);
    fs::create_directories(dir);
    DiffusionConfig cfg;
    cfg.checkpoint = dir.string();
    const ImagePlane img = test::random_plane(20, 24, 3, rng);
    CHECK_THROWS_AS(DiffusionBackend(cfg).extract(img), BackendError);

    ToyConfig tc;
    tc.resolution = 32;
    FeatureBundle bundle = ToyBackend(tc).extract(img);
    // Relabel toy scales (16, 8, 4) as decoder blocks (5, 8, 11).
    const int blocks[3] = {5, 8, 11};
    for (std::size_t i = 0; i < 3; ++i) {
        bundle.features[i].scale_id = blocks[i];
        bundle.attention[i].scale_id = blocks[i];
    }
    bundle.inter_scale_id = 11;
    cfg.inter_block = 11;
    const DiffusionBackend backend(cfg);
    save_bundle(backend.dump_path(img), bundle);
    CHECK(load_bundle(backend.dump_path(img)) == bundle);
    CHECK(backend.extract(img) == bundle);

    DiffusionConfig wrong = cfg;
    wrong.inter_block = 8;
    // A different inter block changes the key, so the dump is not found.
    CHECK_THROWS_AS(DiffusionBackend(wrong).extract(img), BackendError);
    fs::remove_all(dir);
}

TEST_CASE("feature key depends on image and configuration")
{
    std::mt19937_64 rng(8);
    const ImagePlane img = test::random_plane(8, 8, 3, rng);
    DiffusionConfig a;
    const std::string k = feature_key(img, a);
    CHECK(k.size() == 16);
    CHECK(feature_key(img, a) == k);
    DiffusionConfig b = a;
    b.timestep = 100;
    CHECK(feature_key(img, b) != k);
    b = a;
    b.noise_seed = 1;
    CHECK(feature_key(img, b) != k);
    b = a;
    b.checkpoint = "/elsewhere"; // location is not part of the key
    CHECK(feature_key(img, b) == k);
    CHECK(feature_key(test::random_plane(8, 8, 3, rng), a) != k);
}

TEST_CASE("diffusion config validation")
{
    DiffusionConfig c;
    CHECK_NOTHROW(c.validate());
    c.extraction_blocks = {5, 12};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.inter_block = 6;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(backend_kind_from_string("sd"), ConfigError);
}
