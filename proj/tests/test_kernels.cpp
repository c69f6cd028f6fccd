#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "icm/kernels.hpp"

using namespace icm;
namespace k = icm::kernels;

namespace {

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, k::ConvGeometry g)
{
    const int C = x.channels(), H = x.height(), W = x.width();
    const int O = w.dim(0), K = w.dim(2);
    const int oh = k::conv_out_size(H, K, g), ow = k::conv_out_size(W, K, g);
    Tensor out = Tensor::chw(O, oh, ow);
    for (int o = 0; o < O; ++o)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                double s = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < K; ++i)
                        for (int j = 0; j < K; ++j) {
                            const int sy = y * g.stride - g.pad + i, sx = xx * g.stride - g.pad + j;
                            if (sy < 0 || sy >= H || sx < 0 || sx >= W)
                                continue;
                            s += w[((static_cast<std::size_t>(o) * C + c) * K + i) * K + j] * x.at(c, sy, sx);
                        }
                out.at(o, y, xx) = s;
            }
    return out;
}

double dot(const Tensor& a, const Tensor& b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

} // namespace

TEST_CASE("conv2d matches a direct loop and the serial reference")
{
    std::mt19937_64 rng(11);
    for (int stride : {1, 2}) {
        const Tensor x = test::random_tensor({3, 9, 7}, rng);
        const Tensor w = test::random_tensor({4, 3, 3, 3}, rng);
        const Tensor b = test::random_tensor({4}, rng);
        const k::ConvGeometry g{stride, 1};
        const Tensor ref = naive_conv(x, w, b, g);
        CHECK(test::max_abs_diff(k::conv2d(x, w, b, g), ref) < 1e-12);
        CHECK(test::max_abs_diff(k::serial::conv2d(x, w, b, g), ref) < 1e-12);
    }
}

TEST_CASE("conv2d gradients satisfy the adjoint identities")
{
    std::mt19937_64 rng(12);
    for (int stride : {1, 2}) {
        const k::ConvGeometry g{stride, 1};
        const Tensor x = test::random_tensor({2, 8, 6}, rng);
        const Tensor w = test::random_tensor({3, 2, 3, 3}, rng);
        const Tensor none;
        const Tensor y = k::conv2d(x, w, none, g);
        const Tensor gy = test::random_tensor(y.shape(), rng);

        // <conv(x), gy> = <x, conv^T(gy)>
        const Tensor gx = k::conv2d_grad_input(gy, w, 8, 6, g);
        CHECK(dot(y, gy) == doctest::Approx(dot(x, gx)).epsilon(1e-12));
        CHECK(test::max_abs_diff(gx, k::serial::conv2d_grad_input(gy, w, 8, 6, g)) < 1e-12);

        // Linear in w and b: <conv_w(x), gy> = <w, grad_w>, sum(gy) per channel = grad_b.
        Tensor gw(w.shape()), gb({3});
        k::conv2d_grad_params(x, gy, g, gw, gb);
        CHECK(dot(y, gy) == doctest::Approx(dot(w, gw)).epsilon(1e-12));
        for (int o = 0; o < 3; ++o) {
            double s = 0;
            for (std::size_t i = 0; i < y.plane_size(); ++i)
                s += gy[static_cast<std::size_t>(o) * y.plane_size() + i];
            CHECK(gb[static_cast<std::size_t>(o)] == doctest::Approx(s).epsilon(1e-12));
        }
        Tensor gw2(w.shape()), gb2({3});
        k::serial::conv2d_grad_params(x, gy, g, gw2, gb2);
        CHECK(test::max_abs_diff(gw, gw2) < 1e-12);
    }
}

TEST_CASE("bilinear resize matches half-pixel reference values")
{
    // Frozen from torch.nn.functional.interpolate(mode="bilinear", align_corners=False).
    const Tensor x({1, 2, 3}, {0, 1, 2, 3, 5, 8});
    const std::vector<double> up = {0.0, 0.4, 1.0, 1.6, 2.0, 1.5, 2.1, 3.0, 4.2, 5.0, 3.0, 3.8, 5.0, 6.8, 8.0};
    const Tensor y = k::resize_bilinear(x, 3, 5);
    for (std::size_t i = 0; i < up.size(); ++i)
        CHECK(y[i] == doctest::Approx(up[i]).epsilon(1e-12));
    const Tensor z = k::resize_bilinear(x, 1, 2);
    CHECK(z[0] == doctest::Approx(1.875));
    CHECK(z[1] == doctest::Approx(4.5));
    CHECK(k::resize_bilinear(x, 2, 3) == x);
}

TEST_CASE("resize adjoint and serial agreement")
{
    std::mt19937_64 rng(13);
    for (auto [h, w, oh, ow] : {std::array{5, 7, 11, 3}, std::array{16, 16, 4, 4}, std::array{3, 3, 64, 64}}) {
        const Tensor x = test::random_tensor({2, h, w}, rng);
        const Tensor y = k::resize_bilinear(x, oh, ow);
        const Tensor gy = test::random_tensor(y.shape(), rng);
        CHECK(dot(y, gy) == doctest::Approx(dot(x, k::resize_bilinear_adjoint(gy, h, w))).epsilon(1e-12));
        CHECK(test::max_abs_diff(y, k::serial::resize_bilinear(x, oh, ow)) < 1e-12);
        CHECK(test::max_abs_diff(k::resize_bilinear_adjoint(gy, h, w), k::serial::resize_bilinear_adjoint(gy, h, w)) <
              1e-12);
    }
}

TEST_CASE("softmax rows")
{
    // Frozen from torch.softmax.
    const Tensor s = k::softmax_rows(Tensor({2, 2}, {2.0, 1.3, 0.0, 0.0}), 1.0);
    CHECK(s.at(0, 0) == doctest::Approx(0.6681877721681662).epsilon(1e-12));
    CHECK(s.at(0, 1) == doctest::Approx(0.33181222783183395).epsilon(1e-12));
    CHECK(s.at(1, 0) == doctest::Approx(0.5));
    const Tensor t = k::softmax_rows(Tensor({1, 3}, {1, 2, 3}), 0.5);
    CHECK(t[0] == doctest::Approx(0.1863237232258476).epsilon(1e-12));
    CHECK(t[2] == doctest::Approx(0.506480391055654).epsilon(1e-12));
    // Large logits stay finite.
    const Tensor big = k::softmax_rows(Tensor({1, 2}, {1e6, 0}), 1.0);
    CHECK(big[0] == 1.0);
    CHECK(big[1] == 0.0);
}

TEST_CASE("matmul, weighted row sum and attention agree with serial versions")
{
    std::mt19937_64 rng(14);
    const Tensor a = test::random_tensor({7, 5}, rng);
    const Tensor b = test::random_tensor({9, 5}, rng);
    const Tensor c = k::matmul_nt(a, b);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 9; ++j) {
            double s = 0;
            for (int d = 0; d < 5; ++d)
                s += a.at(i, d) * b.at(j, d);
            CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
    CHECK(test::max_abs_diff(c, k::serial::matmul_nt(a, b)) < 1e-12);

    std::vector<double> w(7);
    for (auto& v : w)
        v = std::abs(std::normal_distribution<double>()(rng));
    const auto r = k::weighted_row_sum(a, w);
    const auto rs = k::serial::weighted_row_sum(a, w);
    for (int j = 0; j < 5; ++j) {
        double s = 0;
        for (int i = 0; i < 7; ++i)
            s += w[static_cast<std::size_t>(i)] * a.at(i, j);
        CHECK(r[static_cast<std::size_t>(j)] == doctest::Approx(s).epsilon(1e-12));
        CHECK(r[static_cast<std::size_t>(j)] == doctest::Approx(rs[static_cast<std::size_t>(j)]).epsilon(1e-15));
    }

    Tensor f = test::random_tensor({12, 4}, rng);
    for (int d = 0; d < 4; ++d)
        f.at(3, d) = 0.0; // a zero row
    const Tensor att = k::cosine_attention(f, 0.1);
    CHECK(test::max_abs_diff(att, k::serial::cosine_attention(f, 0.1)) < 1e-12);
    for (int i = 0; i < 12; ++i) {
        double s = 0;
        for (int j = 0; j < 12; ++j)
            s += att.at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // The zero row has cosine 0 everywhere: uniform attention.
    for (int j = 0; j < 12; ++j)
        CHECK(att.at(3, j) == doctest::Approx(1.0 / 12));
}
