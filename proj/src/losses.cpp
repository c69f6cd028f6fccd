#include "icm/losses.hpp"

#include "icm/morphology.hpp"

namespace icm {

namespace {

Tensor plane_tensor(const ImagePlane& p)
{
    if (p.channels() != 1)
        throw DimensionError("losses expect single-channel rasters");
    return to_tensor(p);
}

} // namespace

Tensor binomial_kernel()
{
    const double b[5] = {1, 4, 6, 4, 1};
    Tensor k({5, 5});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            k.at(i, j) = b[i] * b[j] / 256.0;
    return k;
}

Tensor sobel_x()
{
    return Tensor({3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
}

Tensor sobel_y()
{
    return Tensor({3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
}

std::vector<ad::Var> laplacian_pyramid(ad::Graph& graph, ad::Var x, int levels)
{
    const Tensor k = binomial_kernel();
    Tensor k4 = k;
    for (auto& v : k4.storage())
        v *= 4.0;

    std::vector<ad::Var> out;
    ad::Var cur = x;
    for (int s = 0; s < levels; ++s) {
        const int h = graph.value(cur).height();
        const int w = graph.value(cur).width();
        const ad::Var down = graph.subsample2(graph.filter(cur, k, ad::Padding::reflect));
        const ad::Var up = graph.filter(graph.zero_upsample2(down, h, w), k4, ad::Padding::reflect);
        out.push_back(graph.sub(cur, up));
        cur = down;
    }
    return out;
}

ad::Var matting_loss(ad::Graph& graph, ad::Var pred, const Tensor& gt, const LossWeights& weights,
                     MattingLossValue* parts)
{
    if (graph.value(pred).shape() != gt.shape())
        throw DimensionError("matting loss: prediction " + graph.value(pred).shape_string() +
                             " vs ground truth " + gt.shape_string());
    // Every term is linear in its argument before the absolute value, so all
    // of them can be taken on the residual.
    const ad::Var diff = graph.sub(pred, graph.input(gt));

    const ad::Var l1 = graph.mean_abs(diff);

    std::vector<ad::Var> lap_terms;
    std::vector<double> lap_coeffs;
    double level_weight = 1.0;
    for (ad::Var level : laplacian_pyramid(graph, diff)) {
        lap_terms.push_back(graph.mean_abs(level));
        lap_coeffs.push_back(level_weight);
        level_weight *= 2.0;
    }
    const ad::Var lap = graph.weighted_sum(lap_terms, lap_coeffs);

    const ad::Var gx = graph.mean_abs(graph.filter(diff, sobel_x(), ad::Padding::replicate));
    const ad::Var gy = graph.mean_abs(graph.filter(diff, sobel_y(), ad::Padding::replicate));
    const ad::Var grad = graph.weighted_sum({gx, gy}, {1.0, 1.0});

    const ad::Var total =
        graph.weighted_sum({l1, lap, grad}, {weights.l1, weights.laplacian, weights.gradient});
    if (parts) {
        parts->l1 = graph.value(l1)[0];
        parts->laplacian = graph.value(lap)[0];
        parts->gradient = graph.value(grad)[0];
        parts->total = graph.value(total)[0];
    }
    return total;
}

MattingLossValue matting_loss(const AlphaMatte& pred, const AlphaMatte& gt, const LossWeights& weights)
{
    if (!pred.plane().same_shape(gt.plane()))
        throw DimensionError("matting loss: prediction and ground truth differ in shape");
    ad::Graph g;
    MattingLossValue v;
    matting_loss(g, g.input(plane_tensor(pred.plane())), plane_tensor(gt.plane()), weights, &v);
    return v;
}

ImagePlane confident_area(const ImagePlane& gt_mask, int erosion_radius)
{
    if (gt_mask.channels() != 1 || !is_binary(gt_mask))
        throw ValueError("segmentation ground truth must be strictly binary");
    const ImagePlane fg = erode(gt_mask, erosion_radius);
    std::vector<double> inv(gt_mask.pixels());
    for (std::size_t i = 0; i < inv.size(); ++i)
        inv[i] = 1.0 - gt_mask.data()[i];
    const ImagePlane bg = erode(ImagePlane(gt_mask.height(), gt_mask.width(), 1, std::move(inv)), erosion_radius);
    std::vector<double> out(gt_mask.pixels());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = fg.data()[i] != 0.0 || bg.data()[i] != 0.0 ? 1.0 : 0.0;
    return ImagePlane(gt_mask.height(), gt_mask.width(), 1, std::move(out));
}

std::optional<ad::Var> segmentation_loss(ad::Graph& graph, ad::Var pred, const ImagePlane& gt_mask,
                                         int erosion_radius)
{
    const Tensor gt = plane_tensor(gt_mask);
    if (graph.value(pred).shape() != gt.shape())
        throw DimensionError("segmentation loss: prediction " + graph.value(pred).shape_string() +
                             " vs mask " + gt.shape_string());
    const ImagePlane area = confident_area(gt_mask, erosion_radius);
    const std::size_t n = count_nonzero(area);
    if (n == 0)
        return std::nullopt;
    const ad::Var diff = graph.sub(pred, graph.input(gt));
    return graph.masked_abs_sum(diff, to_tensor(area), static_cast<double>(n));
}

std::optional<double> segmentation_loss(const AlphaMatte& pred, const ImagePlane& gt_mask, int erosion_radius)
{
    ad::Graph g;
    const auto v = segmentation_loss(g, g.input(plane_tensor(pred.plane())), gt_mask, erosion_radius);
    if (!v)
        return std::nullopt;
    return g.value(*v)[0];
}

} // namespace icm
