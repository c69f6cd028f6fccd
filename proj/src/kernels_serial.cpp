// Reference implementations: straightforward loops in textbook order.

#include <cmath>
#include <limits>

#include "kernels_detail.hpp"

namespace icm::kernels::serial {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry g)
{
    detail::check_conv(input, weight, bias);
    const int C = input.channels(), H = input.height(), W = input.width();
    const int O = weight.dim(0), k = weight.dim(2);
    const int Ho = conv_out_size(H, k, g), Wo = conv_out_size(W, k, g);
    Tensor out = Tensor::chw(O, Ho, Wo);
    for (int o = 0; o < O; ++o)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride - g.pad + ky;
                            const int ix = ox * g.stride - g.pad + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                                continue;
                            acc += input.at(c, iy, ix) *
                                   weight[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx];
                        }
                out.at(o, oy, ox) = acc;
            }
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weight, int in_h, int in_w, ConvGeometry g)
{
    const int O = weight.dim(0), C = weight.dim(1), k = weight.dim(2);
    const int Ho = grad_out.height(), Wo = grad_out.width();
    Tensor grad = Tensor::chw(C, in_h, in_w);
    for (int o = 0; o < O; ++o)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                const double go = grad_out.at(o, oy, ox);
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride - g.pad + ky;
                            const int ix = ox * g.stride - g.pad + kx;
                            if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w)
                                continue;
                            grad.at(c, iy, ix) +=
                                go * weight[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx];
                        }
            }
    return grad;
}

void conv2d_grad_params(const Tensor& input, const Tensor& grad_out, ConvGeometry g, Tensor& grad_weight,
                        Tensor& grad_bias)
{
    const int C = input.channels(), H = input.height(), W = input.width();
    const int O = grad_weight.dim(0), k = grad_weight.dim(2);
    const int Ho = grad_out.height(), Wo = grad_out.width();
    for (int o = 0; o < O; ++o)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                const double go = grad_out.at(o, oy, ox);
                if (!grad_bias.empty())
                    grad_bias[static_cast<std::size_t>(o)] += go;
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride - g.pad + ky;
                            const int ix = ox * g.stride - g.pad + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                                continue;
                            grad_weight[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx] +=
                                go * input.at(c, iy, ix);
                        }
            }
}

Tensor resize_bilinear(const Tensor& input, int out_h, int out_w)
{
    const auto ty = detail::bilinear_taps(input.height(), out_h);
    const auto tx = detail::bilinear_taps(input.width(), out_w);
    Tensor out = Tensor::chw(input.channels(), out_h, out_w);
    for (int c = 0; c < input.channels(); ++c)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                const auto& b = tx[static_cast<std::size_t>(x)];
                out.at(c, y, x) = a.w0 * (b.w0 * input.at(c, a.i0, b.i0) + b.w1 * input.at(c, a.i0, b.i1)) +
                                  a.w1 * (b.w0 * input.at(c, a.i1, b.i0) + b.w1 * input.at(c, a.i1, b.i1));
            }
    return out;
}

Tensor resize_bilinear_adjoint(const Tensor& grad_out, int in_h, int in_w)
{
    const auto ty = detail::bilinear_taps(in_h, grad_out.height());
    const auto tx = detail::bilinear_taps(in_w, grad_out.width());
    Tensor grad = Tensor::chw(grad_out.channels(), in_h, in_w);
    for (int c = 0; c < grad_out.channels(); ++c)
        for (int y = 0; y < grad_out.height(); ++y)
            for (int x = 0; x < grad_out.width(); ++x) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                const auto& b = tx[static_cast<std::size_t>(x)];
                const double g = grad_out.at(c, y, x);
                grad.at(c, a.i0, b.i0) += g * a.w0 * b.w0;
                grad.at(c, a.i0, b.i1) += g * a.w0 * b.w1;
                grad.at(c, a.i1, b.i0) += g * a.w1 * b.w0;
                grad.at(c, a.i1, b.i1) += g * a.w1 * b.w1;
            }
    return grad;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw DimensionError("matmul_nt expects (m,d) and (n,d)");
    Tensor out = Tensor::matrix(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols(); ++k)
                acc += a.at(i, k) * b.at(j, k);
            out.at(i, j) = acc;
        }
    return out;
}

Tensor softmax_rows(const Tensor& logits, double scale)
{
    Tensor out = logits;
    std::vector<double> scratch;
    for (int i = 0; i < logits.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < logits.cols(); ++j)
            mx = std::max(mx, logits.at(i, j) * scale);
        for (int j = 0; j < logits.cols(); ++j)
            out.at(i, j) = std::exp(logits.at(i, j) * scale - mx);
        const double total = detail::order_free_sum(&out.at(i, 0), logits.cols(), scratch);
        for (int j = 0; j < logits.cols(); ++j)
            out.at(i, j) /= total;
    }
    return out;
}

std::vector<double> weighted_row_sum(const Tensor& m, std::span<const double> weights)
{
    if (m.rank() != 2 || static_cast<std::size_t>(m.rows()) != weights.size())
        throw DimensionError("weighted_row_sum: weight count must equal row count");
    std::vector<double> out(static_cast<std::size_t>(m.cols()), 0.0);
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
            out[static_cast<std::size_t>(j)] += weights[static_cast<std::size_t>(i)] * m.at(i, j);
    return out;
}

Tensor cosine_attention(const Tensor& features, double temperature)
{
    const int n = features.rows(), d = features.cols();
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < d; ++k)
            s += features.at(i, k) * features.at(i, k);
        norms[static_cast<std::size_t>(i)] = std::sqrt(s);
    }
    Tensor cos = Tensor::matrix(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double den = norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)];
            if (den == 0.0)
                continue;
            double dot = 0.0;
            for (int k = 0; k < d; ++k)
                dot += features.at(i, k) * features.at(j, k);
            cos.at(i, j) = dot / den;
        }
    return softmax_rows(cos, 1.0 / temperature);
}

} // namespace icm::kernels::serial
