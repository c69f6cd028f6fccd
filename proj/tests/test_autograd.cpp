#include <doctest.h>

#include <functional>

#include "helpers.hpp"
#include "icm/autograd.hpp"

using namespace icm;
using ad::Graph;
using ad::Var;

namespace {

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

// L = <f(inputs), r>; compares tape gradients with central differences at
// every coordinate of every input.
void check_gradients(const std::vector<Tensor>& inputs, const Builder& f, std::uint64_t seed, double tol = 1e-6)
{
    std::mt19937_64 rng(seed);
    Tensor r;
    auto loss = [&](const std::vector<Tensor>& xs) {
        Graph g;
        std::vector<Var> vs;
        for (const auto& x : xs)
            vs.push_back(g.input(x, true));
        const Tensor& out = g.value(f(g, vs));
        if (r.empty())
            r = test::random_tensor(out.shape(), rng);
        double s = 0;
        for (std::size_t i = 0; i < out.size(); ++i)
            s += out[i] * r[i];
        return s;
    };
    loss(inputs);

    Graph g;
    std::vector<Var> vs;
    for (const auto& x : inputs)
        vs.push_back(g.input(x, true));
    g.backward(f(g, vs), r);

    const double h = 1e-6;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor grad = g.grad(vs[k]);
        REQUIRE(grad.shape() == inputs[k].shape());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto plus = inputs, minus = inputs;
            plus[k][i] += h;
            minus[k][i] -= h;
            const double fd = (loss(plus) - loss(minus)) / (2 * h);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
        }
    }
}

} // namespace

TEST_CASE("pad_index rules")
{
    CHECK(ad::pad_index(-1, 5, ad::Padding::zero) == -1);
    CHECK(ad::pad_index(5, 5, ad::Padding::zero) == -1);
    CHECK(ad::pad_index(-1, 5, ad::Padding::reflect) == 1);
    CHECK(ad::pad_index(-2, 5, ad::Padding::reflect) == 2);
    CHECK(ad::pad_index(5, 5, ad::Padding::reflect) == 3);
    CHECK(ad::pad_index(-2, 5, ad::Padding::replicate) == 0);
    CHECK(ad::pad_index(6, 5, ad::Padding::replicate) == 4);
    CHECK(ad::pad_index(3, 5, ad::Padding::reflect) == 3);
}

TEST_CASE("conv2d gradients")
{
    std::mt19937_64 rng(31);
    for (int stride : {1, 2})
        check_gradients({test::random_tensor({2, 5, 6}, rng), test::random_tensor({3, 2, 3, 3}, rng),
                         test::random_tensor({3}, rng)},
                        [stride](Graph& g, const std::vector<Var>& v) {
                            return g.conv2d(v[0], v[1], v[2], {stride, 1});
                        },
                        32);
}

TEST_CASE("group norm gradients")
{
    std::mt19937_64 rng(33);
    check_gradients({test::random_tensor({4, 3, 3}, rng), test::random_tensor({4}, rng), test::random_tensor({4}, rng)},
                    [](Graph& g, const std::vector<Var>& v) { return g.group_norm(v[0], v[1], v[2], 2); }, 34, 1e-5);
}

TEST_CASE("group norm normalizes each group")
{
    std::mt19937_64 rng(35);
    Graph g;
    const Var x = g.input(test::random_tensor({4, 3, 3}, rng, 3.0));
    const Var y = g.group_norm(x, g.input(Tensor({4}, 1.0)), g.input(Tensor({4}, 0.0)), 2, 0.0);
    const Tensor& t = g.value(y);
    for (int grp = 0; grp < 2; ++grp) {
        double m = 0, v = 0;
        for (int i = 0; i < 18; ++i)
            m += t[static_cast<std::size_t>(grp * 18 + i)] / 18;
        for (int i = 0; i < 18; ++i)
            v += std::pow(t[static_cast<std::size_t>(grp * 18 + i)] - m, 2) / 18;
        CHECK(m == doctest::Approx(0.0).scale(1.0));
        CHECK(v == doctest::Approx(1.0));
    }
}

TEST_CASE("pointwise, resize and structural op gradients")
{
    std::mt19937_64 rng(36);
    const Tensor a = test::random_tensor({2, 4, 5}, rng);
    const Tensor b = test::random_tensor({2, 4, 5}, rng);
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) { return g.relu(v[0]); }, 37);
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) { return g.sigmoid(v[0]); }, 38);
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) { return g.resize(v[0], 7, 3); }, 39);
    check_gradients({a, b}, [](Graph& g, const std::vector<Var>& v) { return g.add(v[0], v[1]); }, 40);
    check_gradients({a, b}, [](Graph& g, const std::vector<Var>& v) { return g.sub(v[0], v[1]); }, 41);
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) { return g.scale(v[0], -2.5); }, 42);
    check_gradients({a, test::random_tensor({1, 4, 5}, rng)},
                    [](Graph& g, const std::vector<Var>& v) { return g.concat({v[0], v[1], v[0]}); }, 43);
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) { return g.subsample2(v[0]); }, 44);
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) { return g.zero_upsample2(v[0], 8, 9); }, 45);
}

TEST_CASE("filter gradients under every padding")
{
    std::mt19937_64 rng(46);
    const Tensor k = test::random_tensor({3, 3}, rng);
    const Tensor k5 = test::random_tensor({5, 5}, rng);
    for (auto p : {ad::Padding::zero, ad::Padding::reflect, ad::Padding::replicate}) {
        check_gradients({test::random_tensor({2, 5, 6}, rng)},
                        [&](Graph& g, const std::vector<Var>& v) { return g.filter(v[0], k, p); }, 47);
        check_gradients({test::random_tensor({1, 6, 7}, rng)},
                        [&](Graph& g, const std::vector<Var>& v) { return g.filter(v[0], k5, p); }, 48);
    }
}

TEST_CASE("filter matches a direct loop")
{
    std::mt19937_64 rng(49);
    const Tensor x = test::random_tensor({1, 4, 5}, rng);
    const Tensor k = test::random_tensor({3, 3}, rng);
    Graph g;
    const Tensor& y = g.value(g.filter(g.input(x), k, ad::Padding::replicate));
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 5; ++c) {
            double s = 0;
            for (int i = -1; i <= 1; ++i)
                for (int j = -1; j <= 1; ++j)
                    s += k.at(i + 1, j + 1) * x.at(0, std::clamp(r + i, 0, 3), std::clamp(c + j, 0, 4));
            CHECK(y.at(0, r, c) == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("reductions")
{
    std::mt19937_64 rng(50);
    const Tensor a = test::random_tensor({1, 3, 4}, rng);
    Tensor mask({1, 3, 4}, 0.0);
    mask[1] = mask[5] = mask[11] = 1.0;
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) { return g.mean_abs(v[0]); }, 51);
    check_gradients({a}, [&](Graph& g, const std::vector<Var>& v) { return g.masked_abs_sum(v[0], mask, 3.0); },
                    52);
    check_gradients({a}, [](Graph& g, const std::vector<Var>& v) {
        return g.weighted_sum({g.mean_abs(v[0]), g.mean_abs(g.scale(v[0], 3.0))}, {0.5, 2.0});
    }, 53);

    Graph g;
    const Var m = g.masked_abs_sum(g.input(a), mask, 3.0);
    CHECK(g.value(m)[0] == doctest::Approx((std::abs(a[1]) + std::abs(a[5]) + std::abs(a[11])) / 3));
}

TEST_CASE("inputs without requires_grad get no gradient")
{
    Graph g;
    const Var a = g.input(Tensor({1, 1, 2}, {1.0, -2.0}), false);
    const Var b = g.input(Tensor({1, 1, 2}, {0.5, 0.5}), true);
    g.backward(g.mean_abs(g.add(a, b)));
    CHECK(g.grad(a)[0] == 0.0);
    CHECK(g.grad(b)[0] == doctest::Approx(0.5));
    CHECK(g.grad(b)[1] == doctest::Approx(-0.5));
}
