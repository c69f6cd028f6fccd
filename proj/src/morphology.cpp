#include "icm/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace icm {

namespace {

constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();

// One-dimensional lower envelope pass (Felzenszwalb & Huttenlocher) over
// squared distances; `f` holds kInf for "no site".
void edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d, int n)
{
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == kInf)
            continue;
        while (k >= 0) {
            const int p = v[static_cast<std::size_t>(k)];
            const double s = ((static_cast<double>(f[static_cast<std::size_t>(q)]) + double(q) * q) -
                              (static_cast<double>(f[static_cast<std::size_t>(p)]) + double(p) * p)) /
                             (2.0 * (q - p));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
                continue;
            }
            ++k;
            v[static_cast<std::size_t>(k)] = q;
            z[static_cast<std::size_t>(k)] = s;
            z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
            goto next;
        }
        k = 0;
        v[0] = q;
        z[0] = -std::numeric_limits<double>::infinity();
        z[1] = std::numeric_limits<double>::infinity();
    next:;
    }
    if (k < 0) {
        std::fill(d.begin(), d.begin() + n, kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j) + 1] < q)
            ++j;
        const int p = v[static_cast<std::size_t>(j)];
        d[static_cast<std::size_t>(q)] =
            static_cast<std::int64_t>(q - p) * (q - p) + f[static_cast<std::size_t>(p)];
    }
}

std::vector<std::uint8_t> to_bits(const ImagePlane& mask, bool value)
{
    std::vector<std::uint8_t> bits(mask.pixels());
    for (std::size_t i = 0; i < bits.size(); ++i)
        bits[i] = (mask.data()[i] != 0.0) == value ? 1 : 0;
    return bits;
}

void require_binary(const ImagePlane& mask)
{
    if (mask.channels() != 1 || !is_binary(mask))
        throw ValueError("morphology expects a binary single-channel mask");
}

} // namespace

std::vector<std::int64_t> squared_distance_transform(const std::vector<std::uint8_t>& features, int height, int width)
{
    const std::size_t n = static_cast<std::size_t>(height) * width;
    std::vector<std::int64_t> out(n);
    std::vector<std::int64_t> f(static_cast<std::size_t>(std::max(height, width)));
    std::vector<std::int64_t> d(f.size());

    // Columns first, then rows.
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y)
            f[static_cast<std::size_t>(y)] = features[static_cast<std::size_t>(y) * width + x] ? 0 : kInf;
        edt_1d(f, d, height);
        for (int y = 0; y < height; ++y)
            out[static_cast<std::size_t>(y) * width + x] = d[static_cast<std::size_t>(y)];
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x)
            f[static_cast<std::size_t>(x)] = out[static_cast<std::size_t>(y) * width + x];
        edt_1d(f, d, width);
        for (int x = 0; x < width; ++x)
            out[static_cast<std::size_t>(y) * width + x] = d[static_cast<std::size_t>(x)];
    }
    return out;
}

ImagePlane erode(const ImagePlane& mask, int radius)
{
    require_binary(mask);
    if (radius < 0)
        throw ValueError("erosion radius must be nonnegative");
    const auto dist = squared_distance_transform(to_bits(mask, false), mask.height(), mask.width());
    const std::int64_t r2 = static_cast<std::int64_t>(radius) * radius;
    std::vector<double> out(mask.pixels());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = mask.data()[i] != 0.0 && dist[i] > r2 ? 1.0 : 0.0;
    return ImagePlane(mask.height(), mask.width(), 1, std::move(out));
}

ImagePlane dilate(const ImagePlane& mask, int radius)
{
    require_binary(mask);
    if (radius < 0)
        throw ValueError("dilation radius must be nonnegative");
    const auto dist = squared_distance_transform(to_bits(mask, true), mask.height(), mask.width());
    const std::int64_t r2 = static_cast<std::int64_t>(radius) * radius;
    std::vector<double> out(mask.pixels());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = dist[i] <= r2 ? 1.0 : 0.0;
    return ImagePlane(mask.height(), mask.width(), 1, std::move(out));
}

PseudoTrimap pseudo_trimap(const ImagePlane& mask, int erode_radius, int dilate_radius)
{
    require_binary(mask);
    if (erode_radius < 1 || dilate_radius < 1)
        throw ValueError("pseudo-trimap radii must be at least 1");

    PseudoTrimap result;
    ImagePlane fg = erode(mask, erode_radius);
    const ImagePlane grown = dilate(mask, dilate_radius);

    std::vector<double> fg_bits(fg.data().begin(), fg.data().end());
    if (count_nonzero(fg) == 0 && count_nonzero(mask) > 0) {
        const auto dist = squared_distance_transform(to_bits(mask, false), mask.height(), mask.width());
        std::size_t best = 0;
        std::int64_t best_d = -1;
        for (std::size_t i = 0; i < dist.size(); ++i)
            if (mask.data()[i] != 0.0 && dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        fg_bits[best] = 1.0;
        result.collapsed_foreground = true;
    }

    std::vector<double> tri(mask.pixels(), 0.0);
    for (std::size_t i = 0; i < tri.size(); ++i) {
        if (fg_bits[i] != 0.0)
            tri[i] = 1.0;
        else if (grown.data()[i] != 0.0)
            tri[i] = 0.5;
    }
    result.trimap = ImagePlane(mask.height(), mask.width(), 1, std::move(tri));
    return result;
}

int default_morphology_radius(int height, int width)
{
    return std::max(1, static_cast<int>(std::lround(10.0 * std::max(height, width) / 768.0)));
}

} // namespace icm
