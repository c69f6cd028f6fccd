#pragma once

#include <vector>

#include "icm/backend.hpp"
#include "icm/tensor.hpp"

namespace icm {

struct GridCell {
    int row = 0;
    int col = 0;
    friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Query vectors Q_k: the nonzero rows of the reference inter features masked
/// by the RoI, in row-major cell order.
struct InContextQuery {
    Tensor vectors; // (K, d)
    int scale_id = 0;
    std::vector<int> reference_index; // per row
    std::vector<GridCell> cells;      // per row, on the inter grid

    int size() const { return vectors.rows(); }
    int dim() const { return vectors.cols(); }
};

/// Inter map S, propagated maps S'_l (one per attention scale, coarse to
/// fine) and their fused version at the finest scale, min-max normalized.
struct GuidanceSet {
    Tensor inter;                   // (1, h, w), sums to 1
    std::vector<Tensor> propagated; // (1, h_l, w_l)
    std::vector<int> scale_ids;     // parallel to `propagated`
    Tensor fused;                   // (1, h_f, w_f), values in [0,1]
};

inline constexpr double kRoiCoverage = 0.5;
inline constexpr int kDefaultExtension = 8;

/// Downsamples an image-resolution binary RoI onto a grid of the backend's
/// square input. A cell is set when at least half of its pixels are RoI; if
/// no cell qualifies, every cell touched by the RoI is set instead.
/// Returns a (1, grid_h, grid_w) binary tensor.
Tensor roi_to_grid(const ImagePlane& roi, const Frame& frame, int grid_h, int grid_w);

/// Builds the query from an image-resolution RoI. Throws EmptyPromptError when
/// no cell with a nonzero feature vector survives.
InContextQuery build_query(const FeatureBundle& reference, const ImagePlane& roi, int reference_index = 0);

/// Builds the query from a binary mask already on the inter grid.
InContextQuery build_query_from_grid(const FeatureBundle& reference, const Tensor& grid_mask,
                                     int reference_index = 0);

/// Per-query softmax maps S_k as a (K, h*w) matrix.
Tensor inter_similarity_rows(const InContextQuery& query, const FeatureBundle& target);

/// S = mean_k softmax(Q_k . F^T / sqrt(d)), as a (1, h, w) map on the target inter grid.
Tensor inter_similarity(const InContextQuery& query, const FeatureBundle& target);

/// S'_l(j) = sum_i S_l(i) A_l(i, j) where S_l is S bilinearly resized to
/// scale l and renormalized to unit mass. One map per attention scale.
std::vector<Tensor> intra_similarity(const Tensor& inter, const FeatureBundle& target);

/// Same propagation for a single attention matrix.
Tensor propagate(const Tensor& inter, const AttentionMap& attention);

/// Resizes every map to the largest grid among them, averages, and min-max
/// normalizes to [0,1]. A constant result maps to all zeros.
Tensor fuse_guidance(const std::vector<Tensor>& maps);

/// Adds, for every set cell, the `m` cells with the highest attention response
/// from that cell (cells already set are skipped; ties go to the lower index).
Tensor extend_prompt(const Tensor& grid_mask, const FeatureBundle& reference, int m);

/// Concatenates query rows in argument order.
InContextQuery merge_references(const std::vector<InContextQuery>& queries);

struct GuidanceOptions {
    bool use_inter = true;   // off: S is uniform over the target grid
    bool use_intra = true;   // off: S'_l is the resized, renormalized S
    bool multi_scale = true; // off: propagate at the inter scale only
};

/// Full in-context similarity for one target.
GuidanceSet compute_guidance(const InContextQuery& query, const FeatureBundle& target,
                             const GuidanceOptions& options = {});

} // namespace icm
