#pragma once

#include <functional>
#include <vector>

#include "icm/kernels.hpp"
#include "icm/tensor.hpp"

// Minimal reverse-mode tape over (C,H,W) tensors: just the operators the
// matting head and the training losses are built from.

namespace icm::ad {

using Var = int;

enum class Padding { zero, reflect, replicate };

class Graph {
public:
    Var input(Tensor value, bool requires_grad = false);

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
    /// Gradient after backward(); zeros when the node received none.
    Tensor grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }

    Var conv2d(Var x, Var weight, Var bias, kernels::ConvGeometry g);
    Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
    Var relu(Var x);
    Var sigmoid(Var x);
    Var resize(Var x, int h, int w);
    Var concat(const std::vector<Var>& xs);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var x, double c);

    /// Same k x k kernel applied to every channel, output the size of the input.
    Var filter(Var x, const Tensor& kernel, Padding padding);
    /// Keeps every second row and column starting at 0.
    Var subsample2(Var x);
    /// Places x at even positions of an (h, w) zero raster.
    Var zero_upsample2(Var x, int h, int w);

    /// Scalar mean |x| over all elements.
    Var mean_abs(Var x);
    /// Scalar sum of |x| over elements where mask != 0, divided by `denominator`.
    Var masked_abs_sum(Var x, const Tensor& mask, double denominator);
    /// Scalar sum_i coeff_i * x_i over scalar nodes.
    Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs);

    /// Seeds d(out)/d(out) = 1 (or `seed` for non-scalar outputs) and runs the tape backwards.
    void backward(Var out);
    void backward(Var out, const Tensor& seed);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Graph&, Var)> backprop;
    };

    Var push(Tensor value, bool requires_grad, std::function<void(Graph&, Var)> backprop);
    bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }
    Tensor& grad_ref(Var v);
    const Tensor& upstream(Var v) const { return nodes_[static_cast<std::size_t>(v)].grad; }

    std::vector<Node> nodes_;
};

/// Index of `i` in [0, n) under the given padding rule; -1 means zero.
int pad_index(int i, int n, Padding padding);

} // namespace icm::ad
