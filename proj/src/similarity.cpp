#include "icm/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icm/kernels.hpp"

namespace icm {

namespace {

Tensor resize_to_unit_mass(const Tensor& map, int h, int w)
{
    Tensor out = (map.height() == h && map.width() == w) ? map : kernels::resize_bilinear(map, h, w);
    double total = 0.0;
    for (double& v : out.values()) {
        v = std::max(v, 0.0);
        total += v;
    }
    if (total > 0.0)
        for (double& v : out.values())
            v /= total;
    else
        std::fill(out.values().begin(), out.values().end(), 1.0 / static_cast<double>(out.size()));
    return out;
}

} // namespace

Tensor roi_to_grid(const ImagePlane& roi, const Frame& frame, int grid_h, int grid_w)
{
    if (roi.channels() != 1)
        throw DimensionError("RoI must be a single-channel plane");
    if (roi.height() != frame.image_height || roi.width() != frame.image_width)
        throw DimensionError("RoI size does not match the reference image");
    const std::size_t cells = static_cast<std::size_t>(grid_h) * grid_w;
    std::vector<double> hits(cells, 0.0);
    std::vector<double> area(cells, 0.0);
    // Every pixel of the padded square belongs to exactly one cell.
    for (int y = 0; y < frame.square; ++y) {
        const int gy = static_cast<int>(static_cast<long long>(y) * grid_h / frame.square);
        for (int x = 0; x < frame.square; ++x) {
            const int gx = static_cast<int>(static_cast<long long>(x) * grid_w / frame.square);
            const std::size_t cell = static_cast<std::size_t>(gy) * grid_w + gx;
            area[cell] += 1.0;
            const int iy = y - frame.pad_top, ix = x - frame.pad_left;
            if (iy >= 0 && iy < roi.height() && ix >= 0 && ix < roi.width() && roi.at(iy, ix) >= 0.5)
                hits[cell] += 1.0;
        }
    }
    Tensor grid = Tensor::chw(1, grid_h, grid_w);
    bool any = false;
    for (std::size_t i = 0; i < cells; ++i)
        if (area[i] > 0.0 && hits[i] / area[i] >= kRoiCoverage) {
            grid[i] = 1.0;
            any = true;
        }
    if (!any)
        for (std::size_t i = 0; i < cells; ++i)
            if (hits[i] > 0.0)
                grid[i] = 1.0;
    return grid;
}

InContextQuery build_query_from_grid(const FeatureBundle& reference, const Tensor& grid_mask, int reference_index)
{
    const FeatureMap& inter = reference.inter();
    if (grid_mask.rank() != 3 || grid_mask.height() != inter.height() || grid_mask.width() != inter.width())
        throw DimensionError("RoI grid does not match the inter-feature grid");
    const int n = inter.cells(), d = inter.dim();

    std::vector<int> chosen;
    for (int cell = 0; cell < n; ++cell) {
        if (grid_mask[static_cast<std::size_t>(cell)] == 0.0)
            continue;
        bool nonzero = false;
        for (int k = 0; k < d && !nonzero; ++k)
            nonzero = inter.values[static_cast<std::size_t>(k) * n + cell] != 0.0;
        if (nonzero)
            chosen.push_back(cell);
    }
    if (chosen.empty())
        throw EmptyPromptError("region of interest selects no nonzero reference feature");

    InContextQuery q;
    q.scale_id = inter.scale_id;
    q.vectors = Tensor::matrix(static_cast<int>(chosen.size()), d);
    for (std::size_t r = 0; r < chosen.size(); ++r) {
        const int cell = chosen[r];
        for (int k = 0; k < d; ++k)
            q.vectors.at(static_cast<int>(r), k) = inter.values[static_cast<std::size_t>(k) * n + cell];
        q.cells.push_back({cell / inter.width(), cell % inter.width()});
        q.reference_index.push_back(reference_index);
    }
    return q;
}

InContextQuery build_query(const FeatureBundle& reference, const ImagePlane& roi, int reference_index)
{
    const FeatureMap& inter = reference.inter();
    return build_query_from_grid(reference, roi_to_grid(roi, reference.frame, inter.height(), inter.width()),
                                 reference_index);
}

Tensor inter_similarity_rows(const InContextQuery& query, const FeatureBundle& target)
{
    const FeatureMap& inter = target.inter();
    if (query.dim() != inter.dim())
        throw DimensionError("query dim " + std::to_string(query.dim()) + " does not match target inter dim " +
                             std::to_string(inter.dim()));
    if (query.size() < 1)
        throw EmptyPromptError("in-context query is empty");
    const Tensor logits = kernels::matmul_nt(query.vectors, inter.as_rows());
    return kernels::softmax_rows(logits, 1.0 / std::sqrt(static_cast<double>(query.dim())));
}

Tensor inter_similarity(const InContextQuery& query, const FeatureBundle& target)
{
    const Tensor rows = inter_similarity_rows(query, target);
    const FeatureMap& inter = target.inter();
    const int K = rows.rows(), n = rows.cols();
    Tensor s = Tensor::chw(1, inter.height(), inter.width());
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k)
            acc += rows.at(k, j);
        s[static_cast<std::size_t>(j)] = acc / K;
    }
    return s;
}

Tensor propagate(const Tensor& inter, const AttentionMap& attention)
{
    const Tensor weights = resize_to_unit_mass(inter, attention.height, attention.width);
    const auto out = kernels::weighted_row_sum(attention.matrix, weights.values());
    return Tensor({1, attention.height, attention.width}, out);
}

std::vector<Tensor> intra_similarity(const Tensor& inter, const FeatureBundle& target)
{
    std::vector<Tensor> maps;
    maps.reserve(target.attention.size());
    for (const auto& a : target.attention)
        maps.push_back(propagate(inter, a));
    return maps;
}

Tensor fuse_guidance(const std::vector<Tensor>& maps)
{
    if (maps.empty())
        throw DimensionError("fuse_guidance needs at least one map");
    int h = 0, w = 0;
    for (const auto& m : maps)
        if (static_cast<long long>(m.height()) * m.width() > static_cast<long long>(h) * w) {
            h = m.height();
            w = m.width();
        }
    Tensor fused = Tensor::chw(1, h, w);
    for (const auto& m : maps) {
        const Tensor r = (m.height() == h && m.width() == w) ? m : kernels::resize_bilinear(m, h, w);
        for (std::size_t i = 0; i < fused.size(); ++i)
            fused[i] += r[i];
    }
    for (double& v : fused.values())
        v /= static_cast<double>(maps.size());

    const auto [lo, hi] = std::minmax_element(fused.values().begin(), fused.values().end());
    const double mn = *lo, mx = *hi;
    if (mx - mn <= 1e-12 * std::max(1.0, std::abs(mx))) {
        std::fill(fused.values().begin(), fused.values().end(), 0.0);
        return fused;
    }
    for (double& v : fused.values())
        v = (v - mn) / (mx - mn);
    return fused;
}

Tensor extend_prompt(const Tensor& grid_mask, const FeatureBundle& reference, int m)
{
    if (m < 0)
        throw ValueError("prompt extension count must be nonnegative");
    const AttentionMap& attn = reference.attention_for(reference.inter_scale_id);
    const int n = attn.height * attn.width;
    if (grid_mask.rank() != 3 || grid_mask.height() != attn.height || grid_mask.width() != attn.width)
        throw DimensionError("RoI grid does not match the inter attention grid");
    Tensor out = grid_mask;
    if (m == 0)
        return out;

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (grid_mask[static_cast<std::size_t>(i)] == 0.0)
            continue;
        const auto row = attn.matrix.row(i);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)];
        });
        int added = 0;
        for (int j : order) {
            if (added == m)
                break;
            if (grid_mask[static_cast<std::size_t>(j)] != 0.0)
                continue;
            out[static_cast<std::size_t>(j)] = 1.0;
            ++added;
        }
    }
    return out;
}

InContextQuery merge_references(const std::vector<InContextQuery>& queries)
{
    if (queries.empty())
        throw EmptyPromptError("no queries to merge");
    const int d = queries.front().dim();
    const int scale = queries.front().scale_id;
    int total = 0;
    for (const auto& q : queries) {
        if (q.dim() != d)
            throw DimensionError("cannot merge queries of different feature dims");
        if (q.scale_id != scale)
            throw DimensionError("cannot merge queries from different scales");
        total += q.size();
    }
    InContextQuery merged;
    merged.scale_id = scale;
    merged.vectors = Tensor::matrix(total, d);
    int r = 0;
    for (const auto& q : queries) {
        for (int i = 0; i < q.size(); ++i, ++r)
            for (int k = 0; k < d; ++k)
                merged.vectors.at(r, k) = q.vectors.at(i, k);
        merged.cells.insert(merged.cells.end(), q.cells.begin(), q.cells.end());
        merged.reference_index.insert(merged.reference_index.end(), q.reference_index.begin(),
                                      q.reference_index.end());
    }
    return merged;
}

GuidanceSet compute_guidance(const InContextQuery& query, const FeatureBundle& target, const GuidanceOptions& options)
{
    GuidanceSet g;
    if (options.use_inter) {
        g.inter = inter_similarity(query, target);
    } else {
        const FeatureMap& inter = target.inter();
        g.inter = Tensor::chw(1, inter.height(), inter.width(), 1.0 / inter.cells());
    }
    for (const auto& a : target.attention) {
        if (!options.multi_scale && a.scale_id != target.inter_scale_id)
            continue;
        g.propagated.push_back(options.use_intra ? propagate(g.inter, a)
                                                 : resize_to_unit_mass(g.inter, a.height, a.width));
        g.scale_ids.push_back(a.scale_id);
    }
    if (g.propagated.empty())
        g.propagated.push_back(g.inter);
    g.fused = fuse_guidance(g.propagated);
    return g;
}

} // namespace icm
