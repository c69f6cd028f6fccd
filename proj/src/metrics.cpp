#include "icm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace icm {

namespace {

void require_same(const AlphaMatte& pred, const AlphaMatte& gt, const char* what)
{
    if (!pred.plane().same_shape(gt.plane()))
        throw DimensionError(std::string(what) + ": prediction and ground truth differ in shape");
}

double gauss(double x, double sigma)
{
    return std::exp(-x * x / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
}

double dgauss(double x, double sigma)
{
    return -x * gauss(x, sigma) / (sigma * sigma);
}

struct Separable {
    int half = 0;
    std::vector<double> smooth; // along the non-differentiated axis
    std::vector<double> deriv;  // along the differentiated axis
};

Separable separable_kernel(double sigma)
{
    Separable k;
    k.half = static_cast<int>(std::ceil(4 * sigma));
    double ns = 0, nd = 0;
    for (int i = -k.half; i <= k.half; ++i) {
        k.smooth.push_back(gauss(i, sigma));
        k.deriv.push_back(dgauss(i, sigma));
        ns += k.smooth.back() * k.smooth.back();
        nd += k.deriv.back() * k.deriv.back();
    }
    const double norm = std::sqrt(ns * nd);
    for (auto& v : k.deriv)
        v /= norm;
    return k;
}

// True convolution with replicate borders: out(y,x) = sum_i k[i] * in(y - (i - h), x).
std::vector<double> conv_rows(const std::vector<double>& in, int H, int W, const std::vector<double>& k, int h)
{
    std::vector<double> out(in.size());
#pragma omp parallel for schedule(static)
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int i = 0; i <= 2 * h; ++i) {
                const int yy = std::clamp(y - (i - h), 0, H - 1);
                s += k[static_cast<std::size_t>(i)] * in[static_cast<std::size_t>(yy) * W + x];
            }
            out[static_cast<std::size_t>(y) * W + x] = s;
        }
    return out;
}

std::vector<double> conv_cols(const std::vector<double>& in, int H, int W, const std::vector<double>& k, int h)
{
    std::vector<double> out(in.size());
#pragma omp parallel for schedule(static)
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int j = 0; j <= 2 * h; ++j) {
                const int xx = std::clamp(x - (j - h), 0, W - 1);
                s += k[static_cast<std::size_t>(j)] * in[static_cast<std::size_t>(y) * W + xx];
            }
            out[static_cast<std::size_t>(y) * W + x] = s;
        }
    return out;
}

std::vector<double> gradient_magnitude(const AlphaMatte& a, const Separable& k)
{
    const int H = a.height(), W = a.width();
    const std::vector<double> in(a.data().begin(), a.data().end());
    // hx = smooth(row offset) * deriv(col offset); hy is its transpose.
    const auto gx = conv_cols(conv_rows(in, H, W, k.smooth, k.half), H, W, k.deriv, k.half);
    const auto gy = conv_rows(conv_cols(in, H, W, k.smooth, k.half), H, W, k.deriv, k.half);
    std::vector<double> mag(in.size());
    for (std::size_t i = 0; i < mag.size(); ++i)
        mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    return mag;
}

// Largest 4-connected component of `bits`; ties go to the component found
// first in a row-major scan.
std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& bits, int H, int W)
{
    std::vector<int> label(bits.size(), -1);
    std::vector<int> stack;
    int best = -1;
    std::size_t best_size = 0;
    int next = 0;
    for (std::size_t s = 0; s < bits.size(); ++s) {
        if (!bits[s] || label[s] >= 0)
            continue;
        std::size_t size = 0;
        stack.assign(1, static_cast<int>(s));
        label[s] = next;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            ++size;
            const int y = p / W, x = p % W;
            const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W)
                    continue;
                const std::size_t q = static_cast<std::size_t>(n[0]) * W + n[1];
                if (bits[q] && label[q] < 0) {
                    label[q] = next;
                    stack.push_back(static_cast<int>(q));
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best = next;
        }
        ++next;
    }
    std::vector<std::uint8_t> out(bits.size(), 0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = label[i] == best && best >= 0 ? 1 : 0;
    return out;
}

} // namespace

double mse(const AlphaMatte& pred, const AlphaMatte& gt)
{
    require_same(pred, gt, "mse");
    double s = 0;
    for (std::size_t i = 0; i < pred.data().size(); ++i) {
        const double d = pred.data()[i] - gt.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.data().size());
}

double sad(const AlphaMatte& pred, const AlphaMatte& gt)
{
    require_same(pred, gt, "sad");
    double s = 0;
    for (std::size_t i = 0; i < pred.data().size(); ++i)
        s += std::abs(pred.data()[i] - gt.data()[i]);
    return s / 1000.0;
}

std::vector<double> gaussian_derivative_kernel(double sigma, int& halfsize)
{
    const Separable k = separable_kernel(sigma);
    halfsize = k.half;
    const int n = 2 * k.half + 1;
    std::vector<double> out(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = k.smooth[static_cast<std::size_t>(i)] * k.deriv[static_cast<std::size_t>(j)];
    return out;
}

double grad_metric(const AlphaMatte& pred, const AlphaMatte& gt)
{
    require_same(pred, gt, "grad");
    const Separable k = separable_kernel(kGradSigma);
    const int n = 2 * k.half + 1;
    if (pred.height() < n || pred.width() < n)
        throw DimensionError("grad metric needs images of at least " + std::to_string(n) + "x" + std::to_string(n));
    const auto mp = gradient_magnitude(pred, k);
    const auto mg = gradient_magnitude(gt, k);
    double s = 0;
    for (std::size_t i = 0; i < mp.size(); ++i) {
        const double d = mp[i] - mg[i];
        s += d * d;
    }
    return s / 1000.0;
}

ConnResult conn_metric_detail(const AlphaMatte& pred, const AlphaMatte& gt)
{
    require_same(pred, gt, "conn");
    const int H = pred.height(), W = pred.width();
    const std::size_t N = pred.data().size();
    const int steps = static_cast<int>(std::lround(1.0 / kConnStep));

    // Components per threshold are independent; the level map is assembled in order afterwards.
    std::vector<std::vector<std::uint8_t>> omega(static_cast<std::size_t>(steps));
#pragma omp parallel for schedule(dynamic)
    for (int k = 1; k <= steps; ++k) {
        const double theta = k * kConnStep;
        std::vector<std::uint8_t> bits(N);
        for (std::size_t i = 0; i < N; ++i)
            bits[i] = pred.data()[i] >= theta && gt.data()[i] >= theta ? 1 : 0;
        omega[static_cast<std::size_t>(k - 1)] = largest_component(bits, H, W);
    }

    if (std::none_of(omega[0].begin(), omega[0].end(), [](std::uint8_t b) { return b != 0; }))
        return {sad(pred, gt), true};

    std::vector<double> level(N, -1.0);
    for (int k = 1; k <= steps; ++k) {
        const double prev = (k - 1) * kConnStep;
        const auto& om = omega[static_cast<std::size_t>(k - 1)];
        for (std::size_t i = 0; i < N; ++i)
            if (level[i] == -1.0 && !om[i])
                level[i] = prev;
    }
    double s = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double l = level[i] == -1.0 ? 1.0 : level[i];
        const double dp = pred.data()[i] - l;
        const double dg = gt.data()[i] - l;
        const double phi_p = 1.0 - (dp >= kConnTolerance ? dp : 0.0);
        const double phi_g = 1.0 - (dg >= kConnTolerance ? dg : 0.0);
        s += std::abs(phi_p - phi_g);
    }
    return {s / 1000.0, false};
}

double conn_metric(const AlphaMatte& pred, const AlphaMatte& gt)
{
    return conn_metric_detail(pred, gt).value;
}

ImageMetrics evaluate_matte(const AlphaMatte& pred, const AlphaMatte& gt)
{
    ImageMetrics m;
    m.mse = mse(pred, gt);
    m.sad = sad(pred, gt);
    m.grad = grad_metric(pred, gt);
    const ConnResult c = conn_metric_detail(pred, gt);
    m.conn = c.value;
    m.conn_fallback = c.fell_back_to_sad;
    return m;
}

} // namespace icm
