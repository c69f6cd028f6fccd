#include <cmath>
#include <limits>

#include "kernels_detail.hpp"

namespace icm::kernels {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry g)
{
    detail::check_conv(input, weight, bias);
    const int C = input.channels(), H = input.height(), W = input.width();
    const int O = weight.dim(0), k = weight.dim(2);
    const int Ho = conv_out_size(H, k, g), Wo = conv_out_size(W, k, g);
    Tensor out = Tensor::chw(O, Ho, Wo);
    const double* in = input.storage().data();
    const double* wt = weight.storage().data();
    double* dst = out.storage().data();

#pragma omp parallel for schedule(static)
    for (int o = 0; o < O; ++o) {
        double* plane = dst + static_cast<std::size_t>(o) * Ho * Wo;
        const double b = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < Ho * Wo; ++i)
            plane[i] = b;
        for (int c = 0; c < C; ++c) {
            const double* src = in + static_cast<std::size_t>(c) * H * W;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const double w = wt[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx];
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= H)
                            continue;
                        const double* srow = src + static_cast<std::size_t>(iy) * W;
                        double* drow = plane + static_cast<std::size_t>(oy) * Wo;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < W)
                                drow[ox] += w * srow[ix];
                        }
                    }
                }
        }
    }
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weight, int in_h, int in_w, ConvGeometry g)
{
    const int O = weight.dim(0), C = weight.dim(1), k = weight.dim(2);
    const int Ho = grad_out.height(), Wo = grad_out.width();
    Tensor grad = Tensor::chw(C, in_h, in_w);
    const double* go = grad_out.storage().data();
    const double* wt = weight.storage().data();
    double* dst = grad.storage().data();

#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double* plane = dst + static_cast<std::size_t>(c) * in_h * in_w;
        for (int o = 0; o < O; ++o) {
            const double* gplane = go + static_cast<std::size_t>(o) * Ho * Wo;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const double w = wt[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx];
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= in_h)
                            continue;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < in_w)
                                plane[static_cast<std::size_t>(iy) * in_w + ix] +=
                                    w * gplane[static_cast<std::size_t>(oy) * Wo + ox];
                        }
                    }
                }
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
    const double* in = input.storage().data();
    const double* go = grad_out.storage().data();

#pragma omp parallel for schedule(static)
    for (int o = 0; o < O; ++o) {
        const double* gplane = go + static_cast<std::size_t>(o) * Ho * Wo;
        if (!grad_bias.empty()) {
            double acc = 0.0;
            for (int i = 0; i < Ho * Wo; ++i)
                acc += gplane[i];
            grad_bias[static_cast<std::size_t>(o)] += acc;
        }
        for (int c = 0; c < C; ++c) {
            const double* src = in + static_cast<std::size_t>(c) * H * W;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= H)
                            continue;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < W)
                                acc += gplane[static_cast<std::size_t>(oy) * Wo + ox] *
                                       src[static_cast<std::size_t>(iy) * W + ix];
                        }
                    }
                    grad_weight[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx] += acc;
                }
        }
    }
}

Tensor resize_bilinear(const Tensor& input, int out_h, int out_w)
{
    const auto ty = detail::bilinear_taps(input.height(), out_h);
    const auto tx = detail::bilinear_taps(input.width(), out_w);
    const int C = input.channels();
    Tensor out = Tensor::chw(C, out_h, out_w);

#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y) {
            const auto& a = ty[static_cast<std::size_t>(y)];
            for (int x = 0; x < out_w; ++x) {
                const auto& b = tx[static_cast<std::size_t>(x)];
                out.at(c, y, x) = a.w0 * (b.w0 * input.at(c, a.i0, b.i0) + b.w1 * input.at(c, a.i0, b.i1)) +
                                  a.w1 * (b.w0 * input.at(c, a.i1, b.i0) + b.w1 * input.at(c, a.i1, b.i1));
            }
        }
    return out;
}

Tensor resize_bilinear_adjoint(const Tensor& grad_out, int in_h, int in_w)
{
    const auto ty = detail::bilinear_taps(in_h, grad_out.height());
    const auto tx = detail::bilinear_taps(in_w, grad_out.width());
    Tensor grad = Tensor::chw(grad_out.channels(), in_h, in_w);

#pragma omp parallel for schedule(static)
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
    const int m = a.rows(), n = b.rows(), d = a.cols();
    Tensor out = Tensor::matrix(m, n);

#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* ar = a.storage().data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < n; ++j) {
            const double* br = b.storage().data() + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int k = 0; k < d; ++k)
                acc += ar[k] * br[k];
            out.at(i, j) = acc;
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits, double scale)
{
    Tensor out = logits;
    const int n = logits.cols();

#pragma omp parallel
    {
        std::vector<double> scratch;
#pragma omp for schedule(static)
        for (int i = 0; i < logits.rows(); ++i) {
            double* row = out.storage().data() + static_cast<std::size_t>(i) * n;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j)
                mx = std::max(mx, row[j] * scale);
            for (int j = 0; j < n; ++j)
                row[j] = std::exp(row[j] * scale - mx);
            const double total = detail::order_free_sum(row, n, scratch);
            for (int j = 0; j < n; ++j)
                row[j] /= total;
        }
    }
    return out;
}

std::vector<double> weighted_row_sum(const Tensor& m, std::span<const double> weights)
{
    if (m.rank() != 2 || static_cast<std::size_t>(m.rows()) != weights.size())
        throw DimensionError("weighted_row_sum: weight count must equal row count");
    const int rows = m.rows(), cols = m.cols();
    constexpr int block = 64;
    const int blocks = (cols + block - 1) / block;
    std::vector<double> out(static_cast<std::size_t>(cols), 0.0);

#pragma omp parallel for schedule(static)
    for (int bj = 0; bj < blocks; ++bj) {
        const int j0 = bj * block, j1 = std::min(cols, j0 + block);
        for (int i = 0; i < rows; ++i) {
            const double w = weights[static_cast<std::size_t>(i)];
            const double* row = m.storage().data() + static_cast<std::size_t>(i) * cols;
            for (int j = j0; j < j1; ++j)
                out[static_cast<std::size_t>(j)] += w * row[j];
        }
    }
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

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* fi = features.storage().data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < n; ++j) {
            const double den = norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)];
            if (den == 0.0)
                continue;
            const double* fj = features.storage().data() + static_cast<std::size_t>(j) * d;
            double dot = 0.0;
            for (int k = 0; k < d; ++k)
                dot += fi[k] * fj[k];
            cos.at(i, j) = dot / den;
        }
    }
    return softmax_rows(cos, 1.0 / temperature);
}

} // namespace icm::kernels
