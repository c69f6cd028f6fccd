#include <doctest.h>

#include "helpers.hpp"
#include "icm/core.hpp"

using namespace icm;

TEST_CASE("image plane validates shape and range")
{
    CHECK_THROWS_AS(ImagePlane(0, 4, 1, {}), DimensionError);
    CHECK_THROWS_AS(ImagePlane(2, 2, 2, std::vector<double>(8, 0.0)), DimensionError);
    CHECK_THROWS_AS(ImagePlane(2, 2, 1, std::vector<double>(3, 0.0)), DimensionError);
    CHECK_THROWS_AS(ImagePlane(1, 1, 1, {1.5}), ValueError);
    CHECK_THROWS_AS(ImagePlane(1, 1, 1, {std::nan("")}), ValueError);
    const ImagePlane p(1, 2, 3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    CHECK(p.at(0, 1, 2) == doctest::Approx(0.6));
    CHECK(p.channel(1).data()[1] == doctest::Approx(0.5));
    CHECK_THROWS_AS(AlphaMatte{p}, DimensionError);
}

TEST_CASE("binarize thresholds at one half")
{
    const ImagePlane p(1, 4, 1, {0.0, 0.49, 0.5, 1.0});
    const ImagePlane b = binarize(p);
    CHECK(std::vector<double>(b.data().begin(), b.data().end()) == std::vector<double>{0, 0, 1, 1});
    CHECK(is_binary(b));
    CHECK_FALSE(is_binary(p));
    CHECK(count_nonzero(b) == 2);
}

TEST_CASE("a point stamps a radius-3 disk")
{
    // Brute-force count of integer offsets with dy^2 + dx^2 <= 9.
    int expected = 0;
    for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx)
            expected += dy * dy + dx * dx <= 9;
    REQUIRE(expected == 29);
    const ImagePlane roi = rasterize_prompt(RoiPrompt::from_points({{10, 10}}), 21, 21);
    CHECK(count_nonzero(roi) == 29);
    CHECK(roi.at(10, 13) == 1.0);
    CHECK(roi.at(12, 12) == 1.0);
    CHECK(roi.at(12, 13) == 0.0);
}

TEST_CASE("points near the border are clipped, not rejected")
{
    const ImagePlane roi = rasterize_prompt(RoiPrompt::from_points({{0, 0}}), 8, 8);
    // Quarter disk including the axes: offsets with dy, dx >= 0.
    int expected = 0;
    for (int dy = 0; dy <= 3; ++dy)
        for (int dx = 0; dx <= 3; ++dx)
            expected += dy * dy + dx * dx <= 9;
    CHECK(count_nonzero(roi) == static_cast<std::size_t>(expected));
}

TEST_CASE("prompt errors")
{
    CHECK_THROWS_AS(rasterize_prompt(RoiPrompt::from_points({}), 8, 8), EmptyPromptError);
    CHECK_THROWS_AS(rasterize_prompt(RoiPrompt::from_points({{8, 0}}), 8, 8), ValueError);
    CHECK_THROWS_AS(rasterize_prompt(RoiPrompt::from_points({{-0.5, 0}}), 8, 8), ValueError);
    CHECK_THROWS_AS(rasterize_prompt(RoiPrompt::from_scribbles({}, 3), 8, 8), EmptyPromptError);
    CHECK_THROWS_AS(rasterize_prompt(RoiPrompt::from_mask(ImagePlane::filled(8, 8, 1, 0.0)), 8, 8),
                    EmptyPromptError);
    CHECK_THROWS_AS(rasterize_prompt(RoiPrompt::from_mask(ImagePlane::filled(4, 8, 1, 1.0)), 8, 8),
                    DimensionError);
}

TEST_CASE("scribble covers the stroke with the given radius")
{
    const ImagePlane roi = rasterize_prompt(RoiPrompt::from_scribbles({{{5, 2}, {5, 17}}}, 1.0), 11, 20);
    // A horizontal capsule of radius 1: rows 4..6 over cols 2..17, plus end caps at cols 1 and 18.
    std::size_t expected = 3 * 16 + 2;
    CHECK(count_nonzero(roi) == expected);
    CHECK(roi.at(4, 10) == 1.0);
    CHECK(roi.at(3, 10) == 0.0);
}

TEST_CASE("mask prompts binarize at one half")
{
    const ImagePlane m(1, 3, 1, {0.2, 0.5, 0.9});
    const ImagePlane roi = rasterize_prompt(RoiPrompt::from_mask(m), 1, 3);
    CHECK(std::vector<double>(roi.data().begin(), roi.data().end()) == std::vector<double>{0, 1, 1});
}

TEST_CASE("composite follows the matting equation")
{
    const ImagePlane fg = test::solid(2, 2, {1.0, 0.0, 0.5});
    const ImagePlane bg = test::solid(2, 2, {0.0, 1.0, 0.5});
    const AlphaMatte a(2, 2, {0.0, 0.25, 0.5, 1.0});
    const ImagePlane c = composite(fg, bg, a);
    CHECK(c.at(0, 1, 0) == doctest::Approx(0.25));
    CHECK(c.at(0, 1, 1) == doctest::Approx(0.75));
    CHECK(c.at(1, 1, 0) == doctest::Approx(1.0));
    CHECK(c.at(1, 0, 2) == doctest::Approx(0.5));
    CHECK_THROWS_AS(composite(fg, test::solid(3, 2, {0, 0, 0}), a), DimensionError);
}

TEST_CASE("names round-trip")
{
    for (auto k : {PromptKind::points, PromptKind::scribbles, PromptKind::mask})
        CHECK(prompt_kind_from_string(to_string(k)) == k);
    for (auto k : {GroupKind::matting, GroupKind::segmentation})
        CHECK(group_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(prompt_kind_from_string("lasso"), ValueError);
}

TEST_CASE("matting request validation")
{
    MattingRequest r;
    CHECK_THROWS_AS(r.validate(), ValueError);
    r.targets.push_back(test::solid(4, 4, {0.1, 0.2, 0.3}));
    CHECK_THROWS_AS(r.validate(), ValueError);
    r.references.push_back({test::solid(4, 4, {0.1, 0.2, 0.3}), RoiPrompt::from_points({{1, 1}})});
    CHECK_NOTHROW(r.validate());
}
