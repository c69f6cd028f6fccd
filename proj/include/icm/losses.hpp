#pragma once

#include <optional>
#include <vector>

#include "icm/autograd.hpp"
#include "icm/core.hpp"
#include "icm/tensor.hpp"

namespace icm {

inline constexpr int kLaplacianLevels = 5;

struct LossWeights {
    double l1 = 1.0;
    double laplacian = 1.0;
    double gradient = 1.0;
};

struct MattingLossValue {
    double l1 = 0;
    double laplacian = 0;
    double gradient = 0;
    double total = 0;
};

/// 5x5 binomial kernel, [1 4 6 4 1]^T [1 4 6 4 1] / 256.
Tensor binomial_kernel();
Tensor sobel_x();
Tensor sobel_y();

/// Laplacian pyramid levels (finest first) of a (1, H, W) node: blur with
/// reflect padding, keep even pixels, re-expand with 4x the kernel, subtract.
std::vector<ad::Var> laplacian_pyramid(ad::Graph& graph, ad::Var x, int levels = kLaplacianLevels);

/// Combined l1 + Laplacian + Sobel-gradient loss on graph nodes. `pred` is
/// (1, H, W), `gt` the same shape. Component values land in `parts`.
ad::Var matting_loss(ad::Graph& graph, ad::Var pred, const Tensor& gt, const LossWeights& weights,
                     MattingLossValue* parts = nullptr);

MattingLossValue matting_loss(const AlphaMatte& pred, const AlphaMatte& gt, const LossWeights& weights = {});

/// erode(fg, r) union erode(bg, r) of a binary mask.
ImagePlane confident_area(const ImagePlane& gt_mask, int erosion_radius);

/// Mean |pred - gt| over the confident area, or nullopt when that area is
/// empty (degenerate sample).
std::optional<ad::Var> segmentation_loss(ad::Graph& graph, ad::Var pred, const ImagePlane& gt_mask,
                                         int erosion_radius);

std::optional<double> segmentation_loss(const AlphaMatte& pred, const ImagePlane& gt_mask, int erosion_radius);

} // namespace icm
