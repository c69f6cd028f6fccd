#include "icm/autograd.hpp"

#include <cmath>

namespace icm::ad {

namespace {

double sign(double v)
{
    return static_cast<double>((v > 0.0) - (v < 0.0));
}

void accumulate(Tensor& into, const Tensor& add)
{
    for (std::size_t i = 0; i < into.size(); ++i)
        into[i] += add[i];
}

} // namespace

int pad_index(int i, int n, Padding padding)
{
    if (i >= 0 && i < n)
        return i;
    switch (padding) {
    case Padding::zero:
        return -1;
    case Padding::replicate:
        return i < 0 ? 0 : n - 1;
    case Padding::reflect: {
        if (n == 1)
            return 0;
        const int period = 2 * (n - 1);
        int m = i % period;
        if (m < 0)
            m += period;
        return m < n ? m : period - m;
    }
    }
    return -1;
}

Var Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&, Var)> backprop)
{
    nodes_.push_back({std::move(value), Tensor{}, requires_grad, std::move(backprop)});
    return static_cast<Var>(nodes_.size() - 1);
}

Var Graph::input(Tensor value, bool requires_grad)
{
    return push(std::move(value), requires_grad, nullptr);
}

Tensor& Graph::grad_ref(Var v)
{
    Node& n = nodes_[static_cast<std::size_t>(v)];
    if (n.grad.empty() && !n.value.empty())
        n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

Tensor Graph::grad(Var v) const
{
    const Node& n = nodes_[static_cast<std::size_t>(v)];
    return n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
}

Var Graph::conv2d(Var x, Var weight, Var bias, kernels::ConvGeometry g)
{
    Tensor out = kernels::conv2d(value(x), value(weight), value(bias), g);
    const bool rg = needs(x) || needs(weight) || needs(bias);
    return push(std::move(out), rg, [x, weight, bias, g](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        if (G.needs(x))
            accumulate(G.grad_ref(x),
                       kernels::conv2d_grad_input(go, G.value(weight), G.value(x).height(), G.value(x).width(), g));
        if (G.needs(weight) || G.needs(bias)) {
            Tensor gw(G.value(weight).shape(), 0.0);
            Tensor gb(G.value(bias).shape(), 0.0);
            kernels::conv2d_grad_params(G.value(x), go, g, gw, gb);
            if (G.needs(weight))
                accumulate(G.grad_ref(weight), gw);
            if (G.needs(bias))
                accumulate(G.grad_ref(bias), gb);
        }
    });
}

Var Graph::group_norm(Var x, Var gamma, Var beta, int groups, double eps)
{
    const Tensor& in = value(x);
    const int C = in.channels();
    if (groups < 1 || C % groups != 0)
        throw DimensionError("group count must divide the channel count");
    const int per = C / groups;
    const std::size_t plane = in.plane_size();
    const std::size_t count = plane * per;

    Tensor normalized(in.shape(), 0.0);
    std::vector<double> inv_std(static_cast<std::size_t>(groups));
    for (int gi = 0; gi < groups; ++gi) {
        const std::size_t base = static_cast<std::size_t>(gi) * count;
        double mean = 0.0;
        for (std::size_t i = 0; i < count; ++i)
            mean += in[base + i];
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (std::size_t i = 0; i < count; ++i)
            var += (in[base + i] - mean) * (in[base + i] - mean);
        var /= static_cast<double>(count);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(gi)] = is;
        for (std::size_t i = 0; i < count; ++i)
            normalized[base + i] = (in[base + i] - mean) * is;
    }
    Tensor out(in.shape(), 0.0);
    const Tensor& ga = value(gamma);
    const Tensor& be = value(beta);
    for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t k = static_cast<std::size_t>(c) * plane + i;
            out[k] = ga[static_cast<std::size_t>(c)] * normalized[k] + be[static_cast<std::size_t>(c)];
        }

    const bool rg = needs(x) || needs(gamma) || needs(beta);
    return push(std::move(out), rg,
                [x, gamma, beta, groups, per, plane, count, normalized = std::move(normalized),
                 inv_std = std::move(inv_std)](Graph& G, Var self) {
                    const Tensor& go = G.upstream(self);
                    const Tensor& ga = G.value(gamma);
                    const int C = G.value(x).channels();
                    if (G.needs(gamma) || G.needs(beta)) {
                        for (int c = 0; c < C; ++c) {
                            double dg = 0.0, db = 0.0;
                            for (std::size_t i = 0; i < plane; ++i) {
                                const std::size_t k = static_cast<std::size_t>(c) * plane + i;
                                dg += go[k] * normalized[k];
                                db += go[k];
                            }
                            if (G.needs(gamma))
                                G.grad_ref(gamma)[static_cast<std::size_t>(c)] += dg;
                            if (G.needs(beta))
                                G.grad_ref(beta)[static_cast<std::size_t>(c)] += db;
                        }
                    }
                    if (!G.needs(x))
                        return;
                    Tensor& gx = G.grad_ref(x);
                    const double N = static_cast<double>(count);
                    for (int gi = 0; gi < groups; ++gi) {
                        const std::size_t base = static_cast<std::size_t>(gi) * count;
                        double sum_d = 0.0, sum_dx = 0.0;
                        for (std::size_t i = 0; i < count; ++i) {
                            const int c = gi * per + static_cast<int>(i / plane);
                            const double d = go[base + i] * ga[static_cast<std::size_t>(c)];
                            sum_d += d;
                            sum_dx += d * normalized[base + i];
                        }
                        const double is = inv_std[static_cast<std::size_t>(gi)];
                        for (std::size_t i = 0; i < count; ++i) {
                            const int c = gi * per + static_cast<int>(i / plane);
                            const double d = go[base + i] * ga[static_cast<std::size_t>(c)];
                            gx[base + i] += is / N * (N * d - sum_d - normalized[base + i] * sum_dx);
                        }
                    }
                });
}

Var Graph::relu(Var x)
{
    Tensor out = value(x);
    for (double& v : out.values())
        v = v > 0.0 ? v : 0.0;
    return push(std::move(out), needs(x), [x](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        const Tensor& in = G.value(x);
        Tensor& gx = G.grad_ref(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (in[i] > 0.0)
                gx[i] += go[i];
    });
}

Var Graph::sigmoid(Var x)
{
    Tensor out = value(x);
    for (double& v : out.values())
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return push(std::move(out), needs(x), [x](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        const Tensor& y = G.value(self);
        Tensor& gx = G.grad_ref(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += go[i] * y[i] * (1.0 - y[i]);
    });
}

Var Graph::resize(Var x, int h, int w)
{
    const Tensor& in = value(x);
    if (in.height() == h && in.width() == w)
        return x;
    return push(kernels::resize_bilinear(in, h, w), needs(x), [x](Graph& G, Var self) {
        const Tensor& in = G.value(x);
        accumulate(G.grad_ref(x), kernels::resize_bilinear_adjoint(G.upstream(self), in.height(), in.width()));
    });
}

Var Graph::concat(const std::vector<Var>& xs)
{
    if (xs.empty())
        throw DimensionError("concat needs at least one input");
    const int h = value(xs.front()).height(), w = value(xs.front()).width();
    int channels = 0;
    bool rg = false;
    for (Var v : xs) {
        if (value(v).height() != h || value(v).width() != w)
            throw DimensionError("concat inputs must share spatial size");
        channels += value(v).channels();
        rg = rg || needs(v);
    }
    Tensor out = Tensor::chw(channels, h, w);
    std::size_t pos = 0;
    for (Var v : xs) {
        const Tensor& t = value(v);
        std::copy(t.storage().begin(), t.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(pos));
        pos += t.size();
    }
    return push(std::move(out), rg, [xs](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        std::size_t pos = 0;
        for (Var v : xs) {
            const std::size_t n = G.value(v).size();
            if (G.needs(v)) {
                Tensor& gv = G.grad_ref(v);
                for (std::size_t i = 0; i < n; ++i)
                    gv[i] += go[pos + i];
            }
            pos += n;
        }
    });
}

Var Graph::add(Var a, Var b)
{
    if (value(a).shape() != value(b).shape())
        throw DimensionError("add: shape mismatch");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += value(b)[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& G, Var self) {
        if (G.needs(a))
            accumulate(G.grad_ref(a), G.upstream(self));
        if (G.needs(b))
            accumulate(G.grad_ref(b), G.upstream(self));
    });
}

Var Graph::sub(Var a, Var b)
{
    if (value(a).shape() != value(b).shape())
        throw DimensionError("sub: shape mismatch " + value(a).shape_string() + " vs " + value(b).shape_string());
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] -= value(b)[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        if (G.needs(a))
            accumulate(G.grad_ref(a), go);
        if (G.needs(b)) {
            Tensor& gb = G.grad_ref(b);
            for (std::size_t i = 0; i < gb.size(); ++i)
                gb[i] -= go[i];
        }
    });
}

Var Graph::scale(Var x, double c)
{
    Tensor out = value(x);
    for (double& v : out.values())
        v *= c;
    return push(std::move(out), needs(x), [x, c](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        Tensor& gx = G.grad_ref(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += c * go[i];
    });
}

Var Graph::filter(Var x, const Tensor& kernel, Padding padding)
{
    if (kernel.rank() != 2 || kernel.rows() != kernel.cols() || kernel.rows() % 2 == 0)
        throw DimensionError("filter kernel must be square with odd size");
    const Tensor& in = value(x);
    const int C = in.channels(), H = in.height(), W = in.width();
    const int k = kernel.rows(), r = k / 2;
    Tensor out = Tensor::chw(C, H, W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double acc = 0.0;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = pad_index(y + ky - r, H, padding);
                    if (sy < 0)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int sx = pad_index(xx + kx - r, W, padding);
                        if (sx < 0)
                            continue;
                        acc += kernel.at(ky, kx) * in.at(c, sy, sx);
                    }
                }
                out.at(c, y, xx) = acc;
            }
    return push(std::move(out), needs(x), [x, kernel, padding](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        Tensor& gx = G.grad_ref(x);
        const int C = gx.channels(), H = gx.height(), W = gx.width();
        const int k = kernel.rows(), r = k / 2;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const double g = go.at(c, y, xx);
                    for (int ky = 0; ky < k; ++ky) {
                        const int sy = pad_index(y + ky - r, H, padding);
                        if (sy < 0)
                            continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int sx = pad_index(xx + kx - r, W, padding);
                            if (sx < 0)
                                continue;
                            gx.at(c, sy, sx) += kernel.at(ky, kx) * g;
                        }
                    }
                }
    });
}

Var Graph::subsample2(Var x)
{
    const Tensor& in = value(x);
    const int C = in.channels(), H = (in.height() + 1) / 2, W = (in.width() + 1) / 2;
    Tensor out = Tensor::chw(C, H, W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                out.at(c, y, xx) = in.at(c, 2 * y, 2 * xx);
    return push(std::move(out), needs(x), [x](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        Tensor& gx = G.grad_ref(x);
        for (int c = 0; c < go.channels(); ++c)
            for (int y = 0; y < go.height(); ++y)
                for (int xx = 0; xx < go.width(); ++xx)
                    gx.at(c, 2 * y, 2 * xx) += go.at(c, y, xx);
    });
}

Var Graph::zero_upsample2(Var x, int h, int w)
{
    const Tensor& in = value(x);
    Tensor out = Tensor::chw(in.channels(), h, w);
    for (int c = 0; c < in.channels(); ++c)
        for (int y = 0; y < in.height() && 2 * y < h; ++y)
            for (int xx = 0; xx < in.width() && 2 * xx < w; ++xx)
                out.at(c, 2 * y, 2 * xx) = in.at(c, y, xx);
    return push(std::move(out), needs(x), [x](Graph& G, Var self) {
        const Tensor& go = G.upstream(self);
        Tensor& gx = G.grad_ref(x);
        for (int c = 0; c < gx.channels(); ++c)
            for (int y = 0; y < gx.height() && 2 * y < go.height(); ++y)
                for (int xx = 0; xx < gx.width() && 2 * xx < go.width(); ++xx)
                    gx.at(c, y, xx) += go.at(c, 2 * y, 2 * xx);
    });
}

Var Graph::mean_abs(Var x)
{
    const Tensor& in = value(x);
    double s = 0.0;
    for (double v : in.values())
        s += std::abs(v);
    const double n = static_cast<double>(in.size());
    return push(Tensor({1}, s / n), needs(x), [x, n](Graph& G, Var self) {
        const double go = G.upstream(self)[0];
        const Tensor& in = G.value(x);
        Tensor& gx = G.grad_ref(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += go * sign(in[i]) / n;
    });
}

Var Graph::masked_abs_sum(Var x, const Tensor& mask, double denominator)
{
    const Tensor& in = value(x);
    if (mask.size() != in.size())
        throw DimensionError("mask size does not match tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i)
        if (mask[i] != 0.0)
            s += std::abs(in[i]);
    return push(Tensor({1}, s / denominator), needs(x), [x, mask, denominator](Graph& G, Var self) {
        const double go = G.upstream(self)[0];
        const Tensor& in = G.value(x);
        Tensor& gx = G.grad_ref(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (mask[i] != 0.0)
                gx[i] += go * sign(in[i]) / denominator;
    });
}

Var Graph::weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs)
{
    if (scalars.size() != coeffs.size())
        throw DimensionError("weighted_sum: one coefficient per scalar");
    double s = 0.0;
    bool rg = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        s += coeffs[i] * value(scalars[i])[0];
        rg = rg || needs(scalars[i]);
    }
    return push(Tensor({1}, s), rg, [scalars, coeffs](Graph& G, Var self) {
        const double go = G.upstream(self)[0];
        for (std::size_t i = 0; i < scalars.size(); ++i)
            if (G.needs(scalars[i]))
                G.grad_ref(scalars[i])[0] += coeffs[i] * go;
    });
}

void Graph::backward(Var out)
{
    backward(out, Tensor(value(out).shape(), 1.0));
}

void Graph::backward(Var out, const Tensor& seed)
{
    for (auto& n : nodes_)
        n.grad = Tensor{};
    if (seed.shape() != value(out).shape())
        throw DimensionError("backward seed shape mismatch");
    grad_ref(out) = seed;
    for (Var v = out; v >= 0; --v) {
        Node& n = nodes_[static_cast<std::size_t>(v)];
        if (n.backprop && n.requires_grad && !n.grad.empty())
            n.backprop(*this, v);
    }
}

} // namespace icm::ad
