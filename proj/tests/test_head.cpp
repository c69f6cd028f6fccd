#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "icm/backend.hpp"
#include "icm/head.hpp"
#include "icm/pipeline.hpp"

using namespace icm;

namespace {

HeadInputs toy_inputs(std::uint64_t seed, int resolution = 32)
{
    std::mt19937_64 rng(seed);
    ToyConfig tc;
    tc.resolution = resolution;
    const ToyBackend backend(tc);
    const ImagePlane img = test::random_plane(resolution, resolution, 3, rng);
    const FeatureBundle bundle = backend.extract(img);
    Tensor m = Tensor::chw(1, bundle.inter().height(), bundle.inter().width());
    m[0] = m[3] = 1.0;
    const GuidanceSet g = compute_guidance(build_query_from_grid(bundle, m), bundle);
    return make_head_inputs(prepare_input(img, resolution), bundle, g);
}

} // namespace

TEST_CASE("toy head shape manifest and init")
{
    const HeadConfig cfg = HeadConfig::toy();
    CHECK_NOTHROW(cfg.validate());
    const HeadParameters a = init_params(cfg, 5);
    CHECK_NOTHROW(a.validate());
    CHECK(a.tensors.size() == parameter_manifest(cfg).size());
    CHECK(init_params(cfg, 5) == a);
    CHECK(init_params(cfg, 6).digest() != a.digest());
    for (const auto& p : parameter_manifest(cfg))
        CHECK(a.tensors.at(p.name).shape() == p.shape);

    HeadParameters broken = a;
    broken.tensors.begin()->second[0] = std::nan("");
    CHECK_THROWS_AS(broken.validate(), ParameterError);
    broken = a;
    broken.tensors.erase(broken.tensors.begin());
    CHECK_THROWS_AS(broken.validate(), ParameterError);
}

TEST_CASE("head config json round trip")
{
    HeadConfig c = HeadConfig::standard();
    CHECK(HeadConfig::from_json(c.to_json()) == c);
    c = HeadConfig::toy();
    CHECK(HeadConfig::from_json(c.to_json()) == c);
    c.fusion_widths = {32, 16};
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter save and load are exact")
{
    const HeadParameters a = init_params(HeadConfig::toy(), 9);
    const auto bytes = encode_params(a);
    CHECK(decode_params(bytes) == a);
    CHECK(encode_params(decode_params(bytes)) == bytes);
    const auto dir = std::filesystem::temp_directory_path() / "icm_test_head";
    std::filesystem::create_directories(dir);
    save_params(dir / "h.icma", a);
    CHECK(load_params(dir / "h.icma") == a);
    std::filesystem::remove_all(dir);
}

TEST_CASE("forward output is a valid matte and deterministic")
{
    const HeadInputs in = toy_inputs(60);
    const HeadParameters p = init_params(HeadConfig::toy(), 1);
    const AlphaMatte a = head_forward(in, p);
    CHECK(a.height() == 32);
    CHECK(a.width() == 32);
    for (double v : a.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(head_forward(in, p) == a);
}

TEST_CASE("head parameter gradients match finite differences")
{
    const HeadInputs in = toy_inputs(61, 16);
    HeadParameters p = init_params(HeadConfig::toy(), 2);
    std::mt19937_64 rng(62);
    const Tensor r = test::random_tensor({1, 16, 16}, rng);

    auto loss = [&](const HeadParameters& params) {
        ad::Graph g;
        const HeadGraph hg = build_head(g, in, params, false);
        const Tensor& a = g.value(hg.alpha);
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            s += a[i] * r[i];
        return s;
    };
    ad::Graph g;
    const HeadGraph hg = build_head(g, in, p, true);
    g.backward(hg.alpha, r);

    const double h = 1e-6;
    int checked = 0;
    for (const auto& [name, var] : hg.params) {
        const Tensor grad = g.grad(var);
        // A few coordinates per tensor.
        for (std::size_t i = 0; i < grad.size(); i += std::max<std::size_t>(1, grad.size() / 3)) {
            HeadParameters plus = p, minus = p;
            plus.tensors.at(name)[i] += h;
            minus.tensors.at(name)[i] -= h;
            const double fd = (loss(plus) - loss(minus)) / (2 * h);
            CHECK_MESSAGE(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3), name, "[", i, "]");
            ++checked;
        }
    }
    CHECK(checked > 50);
}
