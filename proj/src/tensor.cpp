#include "icm/tensor.hpp"

#include <algorithm>

namespace icm {

Tensor to_tensor(const ImagePlane& plane)
{
    const int C = plane.channels(), H = plane.height(), W = plane.width();
    Tensor t = Tensor::chw(C, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                t.at(c, y, x) = plane.at(y, x, c);
    return t;
}

ImagePlane to_plane(const Tensor& t)
{
    if (t.rank() != 3 || (t.channels() != 1 && t.channels() != 3))
        throw DimensionError("to_plane expects a (1|3, H, W) tensor, got " + t.shape_string());
    const int C = t.channels(), H = t.height(), W = t.width();
    std::vector<double> data(static_cast<std::size_t>(H) * W * C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                data[(static_cast<std::size_t>(y) * W + x) * C + c] = std::clamp(t.at(c, y, x), 0.0, 1.0);
    return ImagePlane(H, W, C, std::move(data));
}

} // namespace icm
