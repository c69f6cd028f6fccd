#pragma once

#include <span>
#include <vector>

#include "icm/tensor.hpp"

// Data-parallel numeric kernels. The functions in `icm::kernels` are the
// OpenMP versions used by the library; `icm::kernels::serial` holds plain
// loop implementations with identical contracts, kept as the reference the
// tests and the benchmark compare against.
//
// Every parallel kernel assigns each output element to exactly one thread
// and accumulates in a fixed order, so results are run-to-run identical.

namespace icm::kernels {

struct ConvGeometry {
    int stride = 1;
    int pad = 1;
};

inline int conv_out_size(int in, int kernel, ConvGeometry g)
{
    return (in + 2 * g.pad - kernel) / g.stride + 1;
}

/// 2-D cross-correlation with zero padding. input (C,H,W), weight (O,C,k,k),
/// bias (O) or empty.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry g);

/// Gradient of conv2d with respect to its input.
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weight, int in_h, int in_w, ConvGeometry g);

/// Gradients of conv2d with respect to weight and bias (accumulated into the outputs).
void conv2d_grad_params(const Tensor& input, const Tensor& grad_out, ConvGeometry g, Tensor& grad_weight,
                        Tensor& grad_bias);

/// Bilinear resize of a (C,H,W) tensor with half-pixel centres.
Tensor resize_bilinear(const Tensor& input, int out_h, int out_w);

/// Adjoint of resize_bilinear: maps an output-sized gradient back to input size.
Tensor resize_bilinear_adjoint(const Tensor& grad_out, int in_h, int in_w);

/// C = A * B^T for A (m,d), B (n,d).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Row-wise softmax of (logits * scale), numerically stabilised.
Tensor softmax_rows(const Tensor& logits, double scale);

/// out(j) = sum_i weights(i) * m(i, j), i.e. m^T w.
std::vector<double> weighted_row_sum(const Tensor& m, std::span<const double> weights);

/// Row-softmax of pairwise cosine similarity divided by `temperature`.
/// Zero-norm rows have cosine 0 against everything.
Tensor cosine_attention(const Tensor& features, double temperature);

namespace serial {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry g);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weight, int in_h, int in_w, ConvGeometry g);
void conv2d_grad_params(const Tensor& input, const Tensor& grad_out, ConvGeometry g, Tensor& grad_weight,
                        Tensor& grad_bias);
Tensor resize_bilinear(const Tensor& input, int out_h, int out_w);
Tensor resize_bilinear_adjoint(const Tensor& grad_out, int in_h, int in_w);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& logits, double scale);
std::vector<double> weighted_row_sum(const Tensor& m, std::span<const double> weights);
Tensor cosine_attention(const Tensor& features, double temperature);

} // namespace serial

} // namespace icm::kernels
