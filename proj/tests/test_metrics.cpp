#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "icm/metrics.hpp"
#include "oracles.hpp"

using namespace icm;

namespace {

AlphaMatte fixture_pred()
{
    std::vector<double> v;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 24; ++j)
            v.push_back(std::clamp(0.5 + 0.5 * std::sin(0.45 * i) * std::cos(0.37 * j) + 0.1 * ((i * j) % 5) / 4.0,
                                   0.0, 1.0));
    return AlphaMatte(20, 24, v);
}

AlphaMatte fixture_gt()
{
    std::vector<double> v;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 24; ++j) {
            const double a = std::clamp(1.1 - ((i - 9.0) * (i - 9.0) + (j - 10.0) * (j - 10.0)) / 50, 0.0, 1.0);
            const double b = std::clamp(0.9 - ((i - 3.0) * (i - 3.0) + (j - 20.0) * (j - 20.0)) / 12, 0.0, 1.0);
            v.push_back(std::max(a, b));
        }
    return AlphaMatte(20, 24, v);
}

} // namespace

TEST_CASE("metrics match frozen reference values")
{
    // Frozen from numpy/scipy.ndimage.convolve(mode="nearest")/skimage.measure.label(connectivity=1).
    const AlphaMatte p = fixture_pred(), g = fixture_gt();
    CHECK(mse(p, g) == doctest::Approx(0.2524251953172482).epsilon(1e-12));
    CHECK(sad(p, g) == doctest::Approx(0.20174496382233614).epsilon(1e-12));
    CHECK(grad_metric(p, g) == doctest::Approx(0.26467754483795464).epsilon(1e-10));
    const ConnResult c = conn_metric_detail(p, g);
    CHECK_FALSE(c.fell_back_to_sad);
    CHECK(c.value == doctest::Approx(0.20324216449652488).epsilon(1e-12));
}

TEST_CASE("grad and conn agree with direct oracles on random pairs")
{
    std::mt19937_64 rng(80);
    for (int t = 0; t < 10; ++t) {
        // Smooth-ish blobs plus noise so thresholds produce several components.
        const ImagePlane a = test::random_plane(32, 32, 1, rng);
        const ImagePlane b = test::random_plane(32, 32, 1, rng);
        const AlphaMatte p(a), g(b);
        CHECK(grad_metric(p, g) == doctest::Approx(oracle::grad(p, g)).epsilon(1e-10));
        CHECK(conn_metric(p, g) == doctest::Approx(oracle::conn(p, g)).epsilon(1e-12));
    }
}

TEST_CASE("metric identities")
{
    std::mt19937_64 rng(81);
    const AlphaMatte a(test::random_plane(16, 18, 1, rng));
    const AlphaMatte b(test::random_plane(16, 18, 1, rng));
    const ImageMetrics self = evaluate_matte(a, a);
    CHECK(self.mse == 0.0);
    CHECK(self.sad == 0.0);
    CHECK(self.grad == 0.0);
    CHECK(self.conn == 0.0);
    const ImageMetrics ab = evaluate_matte(a, b), ba = evaluate_matte(b, a);
    CHECK(ab.mse == doctest::Approx(ba.mse).epsilon(1e-14));
    CHECK(ab.sad == doctest::Approx(ba.sad).epsilon(1e-14));
    CHECK(ab.grad == doctest::Approx(ba.grad).epsilon(1e-12));
    CHECK(ab.conn == doctest::Approx(ba.conn).epsilon(1e-12));

    // Moving the prediction toward the target lowers MSE and SAD.
    std::vector<double> half(a.data().size());
    for (std::size_t i = 0; i < half.size(); ++i)
        half[i] = 0.5 * (a.data()[i] + b.data()[i]);
    const AlphaMatte mid(16, 18, half);
    CHECK(mse(mid, b) == doctest::Approx(mse(a, b) / 4).epsilon(1e-12));
    CHECK(sad(mid, b) == doctest::Approx(sad(a, b) / 2).epsilon(1e-12));
}

TEST_CASE("conn falls back to sad without shared foreground")
{
    const AlphaMatte p(1, 4, {0.9, 0.9, 0.0, 0.0});
    const AlphaMatte g(1, 4, {0.0, 0.0, 0.8, 0.05});
    const ConnResult c = conn_metric_detail(p, g);
    CHECK(c.fell_back_to_sad);
    CHECK(c.value == doctest::Approx(sad(p, g)));
}

TEST_CASE("conn on a hand-worked row")
{
    // Shared >= 0.1 on {0,1}; at 0.6 only pixel 0 is shared, so pixel 1 leaves at level 0.5.
    const AlphaMatte p(1, 3, {1.0, 0.9, 0.0});
    const AlphaMatte g(1, 3, {1.0, 0.55, 0.0});
    // Pixel 1: l = 0.5, dp = 0.4 -> phi 0.6, dg = 0.05 -> phi 1. Pixel 2: l = 0, both 0.
    CHECK(conn_metric(p, g) == doctest::Approx(0.4 / 1000));
}

TEST_CASE("grad metric size check and kernel")
{
    int half = 0;
    const auto k = gaussian_derivative_kernel(1.4, half);
    CHECK(half == 6);
    REQUIRE(k.size() == 169);
    double s2 = 0, s = 0;
    for (double v : k) {
        s2 += v * v;
        s += v;
    }
    CHECK(s2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s == doctest::Approx(0.0).scale(1.0)); // odd along x
    CHECK_THROWS_AS(grad_metric(AlphaMatte(12, 40, std::vector<double>(480, 0.0)),
                                AlphaMatte(12, 40, std::vector<double>(480, 0.0))),
                    DimensionError);
    CHECK_NOTHROW(grad_metric(AlphaMatte(13, 13, std::vector<double>(169, 0.0)),
                              AlphaMatte(13, 13, std::vector<double>(169, 0.0))));
    CHECK_THROWS_AS(mse(AlphaMatte(2, 2, std::vector<double>(4, 0.0)), AlphaMatte(2, 3, std::vector<double>(6, 0.0))),
                    DimensionError);
}
