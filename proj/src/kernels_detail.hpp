#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "icm/kernels.hpp"

namespace icm::kernels::detail {

// Sum in ascending order so the result does not depend on element order.
inline double order_free_sum(const double* v, int n, std::vector<double>& scratch)
{
    scratch.assign(v, v + n);
    std::sort(scratch.begin(), scratch.end());
    double total = 0.0;
    for (double x : scratch)
        total += x;
    return total;
}

// Source taps for one output coordinate of a half-pixel bilinear resize.
struct Tap {
    int i0;
    int i1;
    double w0;
    double w1;
};

inline std::vector<Tap> bilinear_taps(int in, int out)
{
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0)
            src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1)
            i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        const double l1 = src - i0;
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

inline void check_conv(const Tensor& input, const Tensor& weight, const Tensor& bias)
{
    if (input.rank() != 3 || weight.rank() != 4)
        throw DimensionError("conv2d expects input (C,H,W) and weight (O,C,k,k)");
    if (weight.dim(1) != input.channels())
        throw DimensionError("conv2d weight expects " + std::to_string(weight.dim(1)) +
                             " input channels, got " + std::to_string(input.channels()));
    if (weight.dim(2) != weight.dim(3))
        throw DimensionError("conv2d kernels must be square");
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
        throw DimensionError("conv2d bias must have one entry per output channel");
}

inline void check_square(const Tensor& m, const char* what)
{
    if (m.rank() != 2 || m.rows() != m.cols())
        throw DimensionError(std::string(what) + " expects a square matrix");
}

} // namespace icm::kernels::detail
