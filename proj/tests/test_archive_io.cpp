#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "icm/archive.hpp"
#include "icm/image_io.hpp"

using namespace icm;
namespace fs = std::filesystem;

TEST_CASE("png round trip at 8 and 16 bits")
{
    std::mt19937_64 rng(3);
    for (int channels : {1, 3}) {
        const ImagePlane p = test::random_plane(7, 5, channels, rng);
        for (int depth : {8, 16}) {
            const double q = depth == 8 ? 255.0 : 65535.0;
            const ImagePlane back = io::decode_png(io::encode_png(p, depth));
            REQUIRE(back.height() == 7);
            REQUIRE(back.width() == 5);
            REQUIRE(back.channels() == channels);
            for (std::size_t i = 0; i < p.pixels() * static_cast<std::size_t>(channels); ++i)
                CHECK(back.data()[i] == std::round(p.data()[i] * q) / q);
            // Quantized values survive exactly.
            CHECK(io::encode_png(back, depth) == io::encode_png(p, depth));
        }
    }
    CHECK_THROWS_AS(io::encode_png(test::random_plane(2, 2, 1, rng), 12), ValueError);
}

TEST_CASE("gray images replicate to rgb")
{
    const ImagePlane g(1, 2, 1, {0.25, 1.0});
    const ImagePlane rgb = io::to_rgb(g);
    CHECK(rgb.channels() == 3);
    CHECK(rgb.at(0, 1, 2) == 1.0);
    CHECK(rgb.at(0, 0, 1) == 0.25);
}

TEST_CASE("garbage bytes raise an io error")
{
    CHECK_THROWS_AS(io::decode_png({1, 2, 3, 4}), IoError);
    CHECK_THROWS_AS(io::read_png("/nonexistent/file.png"), IoError);
}

TEST_CASE("archive round trip is byte identical")
{
    std::mt19937_64 rng(4);
    Archive a;
    a.version = "test/1";
    a.meta = {{"k", 3}, {"name", "x"}};
    a.arrays.emplace("b", test::random_tensor({2, 3, 4}, rng));
    a.arrays.emplace("a", Tensor({1}, {-0.0}));
    a.arrays.emplace("empty", Tensor(std::vector<int>{0}));
    const auto bytes = encode_archive(a);
    REQUIRE(bytes.size() > 16);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == std::string("ICMARR\0\1", 8));
    const Archive b = decode_archive(bytes);
    CHECK(b.version == "test/1");
    CHECK(b.meta == a.meta);
    CHECK(b.get("b") == a.get("b"));
    CHECK(b.get("b").shape() == std::vector<int>{2, 3, 4});
    CHECK(encode_archive(b) == bytes);
    CHECK_THROWS(b.get("missing"));

    const fs::path dir = fs::temp_directory_path() / "icm_test_archive";
    fs::create_directories(dir);
    save_archive(dir / "x.icma", a);
    CHECK(io::read_bytes(dir / "x.icma") == bytes);
    CHECK(encode_archive(load_archive(dir / "x.icma")) == bytes);
    fs::remove_all(dir);
}

TEST_CASE("corrupt archives are rejected")
{
    Archive a;
    a.version = "v";
    a.arrays.emplace("x", Tensor({3}, {1, 2, 3}));
    auto bytes = encode_archive(a);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_archive(bad_magic), IoError);
    bytes.resize(bytes.size() - 4);
    CHECK_THROWS_AS(decode_archive(bytes), IoError);
}
