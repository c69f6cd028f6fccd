#pragma once

#include <random>
#include <vector>

#include "icm/backend.hpp"
#include "icm/core.hpp"
#include "icm/kernels.hpp"
#include "icm/tensor.hpp"

namespace icm::test {

inline ImagePlane random_plane(int h, int w, int c, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(h) * w * c);
    for (auto& x : v)
        x = u(rng);
    return ImagePlane(h, w, c, std::move(v));
}

inline ImagePlane random_mask(int h, int w, double p, std::mt19937_64& rng)
{
    std::bernoulli_distribution b(p);
    std::vector<double> v(static_cast<std::size_t>(h) * w);
    for (auto& x : v)
        x = b(rng) ? 1.0 : 0.0;
    return ImagePlane(h, w, 1, std::move(v));
}

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    Tensor t(std::move(shape));
    for (auto& x : t.storage())
        x = n(rng);
    return t;
}

inline ImagePlane solid(int h, int w, std::vector<double> rgb)
{
    std::vector<double> v;
    for (int i = 0; i < h * w; ++i)
        v.insert(v.end(), rgb.begin(), rgb.end());
    return ImagePlane(h, w, static_cast<int>(rgb.size()), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Single-scale bundle with random features and a random row-stochastic
// attention; scale id 1.
inline FeatureBundle random_bundle(int h, int w, int d, std::mt19937_64& rng, double attention_temperature = 0.5)
{
    FeatureBundle b;
    b.inter_scale_id = 1;
    b.frame = Frame::for_image(h, w, h > w ? h : w);
    FeatureMap f;
    f.scale_id = 1;
    f.values = random_tensor({d, h, w}, rng);
    AttentionMap a;
    a.scale_id = 1;
    a.height = h;
    a.width = w;
    a.matrix = kernels::cosine_attention(random_tensor({h * w, d}, rng), attention_temperature);
    b.features.push_back(std::move(f));
    b.attention.push_back(std::move(a));
    return b;
}

} // namespace icm::test
