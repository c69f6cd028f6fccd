#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Written independently of the library code paths.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "icm/core.hpp"
#include "icm/tensor.hpp"

namespace icm::oracle {

inline double mse(const AlphaMatte& p, const AlphaMatte& g)
{
    double s = 0;
    for (int y = 0; y < p.height(); ++y)
        for (int x = 0; x < p.width(); ++x)
            s += (p.at(y, x) - g.at(y, x)) * (p.at(y, x) - g.at(y, x));
    return s / (static_cast<double>(p.height()) * p.width());
}

inline double sad(const AlphaMatte& p, const AlphaMatte& g)
{
    double s = 0;
    for (int y = 0; y < p.height(); ++y)
        for (int x = 0; x < p.width(); ++x)
            s += std::abs(p.at(y, x) - g.at(y, x));
    return s / 1000;
}

// Direct 13x13 true convolution with clamped indices.
inline double grad(const AlphaMatte& p, const AlphaMatte& g)
{
    const double sigma = 1.4;
    const int h = 6, n = 13;
    std::vector<double> gs(n), ds(n);
    for (int i = 0; i < n; ++i) {
        const double x = i - h;
        gs[static_cast<std::size_t>(i)] =
            std::exp(-x * x / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
        ds[static_cast<std::size_t>(i)] = -x * gs[static_cast<std::size_t>(i)] / (sigma * sigma);
    }
    std::vector<double> hx(n * n);
    double norm = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double v = gs[static_cast<std::size_t>(i)] * ds[static_cast<std::size_t>(j)];
            hx[static_cast<std::size_t>(i * n + j)] = v;
            norm += v * v;
        }
    for (auto& v : hx)
        v /= std::sqrt(norm);
    const int H = p.height(), W = p.width();
    auto mag = [&](const AlphaMatte& a, int y, int x) {
        double gx = 0, gy = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double k = hx[static_cast<std::size_t>(i * n + j)];
                gx += k * a.at(std::clamp(y - (i - h), 0, H - 1), std::clamp(x - (j - h), 0, W - 1));
                gy += k * a.at(std::clamp(y - (j - h), 0, H - 1), std::clamp(x - (i - h), 0, W - 1)); // hy = hx^T
            }
        return std::sqrt(gx * gx + gy * gy);
    };
    double s = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            s += std::pow(mag(p, y, x) - mag(g, y, x), 2);
    return s / 1000;
}

// Union-find labelling; the winner is the largest set, ties to the smallest first pixel.
inline std::vector<bool> largest_component(const std::vector<bool>& bits, int H, int W)
{
    std::vector<int> parent(bits.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x)
            x = parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        return x;
    };
    auto unite = [&](int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b)
            parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int p = y * W + x;
            if (!bits[static_cast<std::size_t>(p)])
                continue;
            if (x + 1 < W && bits[static_cast<std::size_t>(p + 1)])
                unite(p, p + 1);
            if (y + 1 < H && bits[static_cast<std::size_t>(p + W)])
                unite(p, p + W);
        }
    std::vector<int> size(bits.size(), 0);
    for (std::size_t p = 0; p < bits.size(); ++p)
        if (bits[p])
            ++size[static_cast<std::size_t>(find(static_cast<int>(p)))];
    int best = -1;
    for (std::size_t r = 0; r < bits.size(); ++r) // roots are each set's smallest index
        if (size[r] > 0 && (best < 0 || size[r] > size[static_cast<std::size_t>(best)]))
            best = static_cast<int>(r);
    std::vector<bool> out(bits.size(), false);
    for (std::size_t p = 0; p < bits.size(); ++p)
        out[p] = bits[p] && find(static_cast<int>(p)) == best;
    return out;
}

inline double conn(const AlphaMatte& p, const AlphaMatte& g)
{
    const int H = p.height(), W = p.width();
    const std::size_t N = static_cast<std::size_t>(H) * W;
    std::vector<double> l(N, -1.0);
    for (int k = 1; k <= 10; ++k) {
        std::vector<bool> bits(N);
        for (std::size_t i = 0; i < N; ++i)
            bits[i] = p.data()[i] >= k * 0.1 && g.data()[i] >= k * 0.1;
        const auto om = largest_component(bits, H, W);
        if (k == 1 && std::none_of(om.begin(), om.end(), [](bool b) { return b; }))
            return oracle::sad(p, g);
        for (std::size_t i = 0; i < N; ++i)
            if (l[i] == -1.0 && !om[i])
                l[i] = (k - 1) * 0.1;
    }
    double s = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double li = l[i] == -1.0 ? 1.0 : l[i];
        const double dp = p.data()[i] - li, dg = g.data()[i] - li;
        s += std::abs((1 - dp * (dp >= 0.15)) - (1 - dg * (dg >= 0.15)));
    }
    return s / 1000;
}

// Disk min (erode) / max (dilate) filter; out-of-image pixels are ignored.
inline ImagePlane disk_filter(const ImagePlane& m, int r, bool erode_op)
{
    const int H = m.height(), W = m.width();
    std::vector<double> out(m.pixels());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double v = erode_op ? 1.0 : 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    if (dy * dy + dx * dx > r * r)
                        continue;
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W)
                        continue;
                    v = erode_op ? std::min(v, m.at(yy, xx)) : std::max(v, m.at(yy, xx));
                }
            out[static_cast<std::size_t>(y) * W + x] = v;
        }
    return ImagePlane(H, W, 1, std::move(out));
}

// For every set cell i, adds each unset cell whose rank in row i of the
// attention (among unset cells, ties to the lower index) is below m.
inline std::vector<double> extend_prompt(const std::vector<double>& mask, const Tensor& attention, int m)
{
    const int n = static_cast<int>(mask.size());
    std::vector<double> out = mask;
    for (int i = 0; i < n; ++i) {
        if (mask[static_cast<std::size_t>(i)] == 0.0)
            continue;
        for (int j = 0; j < n; ++j) {
            if (mask[static_cast<std::size_t>(j)] != 0.0)
                continue;
            int rank = 0;
            for (int k = 0; k < n; ++k)
                if (mask[static_cast<std::size_t>(k)] == 0.0 &&
                    (attention.at(i, k) > attention.at(i, j) || (attention.at(i, k) == attention.at(i, j) && k < j)))
                    ++rank;
            if (rank < m)
                out[static_cast<std::size_t>(j)] = 1.0;
        }
    }
    return out;
}

} // namespace icm::oracle
