#include "icm/pipeline.hpp"

#include <algorithm>

#include "icm/kernels.hpp"

namespace icm {

Tensor normalize_map(const Tensor& map)
{
    return fuse_guidance({map});
}

HeadInputs make_head_inputs(const Tensor& prepared_image, const FeatureBundle& target, const GuidanceSet& guidance)
{
    HeadInputs in;
    in.image = prepared_image;
    for (const auto& f : target.features) {
        in.features.push_back(f.values);
        const auto it = std::find(guidance.scale_ids.begin(), guidance.scale_ids.end(), f.scale_id);
        if (it != guidance.scale_ids.end()) {
            in.guidance.push_back(normalize_map(guidance.propagated[static_cast<std::size_t>(it - guidance.scale_ids.begin())]));
        } else {
            in.guidance.push_back(kernels::resize_bilinear(guidance.fused, f.height(), f.width()));
        }
    }
    in.fused = guidance.fused;
    return in;
}

MattingPipeline::MattingPipeline(std::shared_ptr<const Backend> backend, HeadParameters params,
                                 PipelineOptions options)
    : backend_(std::move(backend)), params_(std::move(params)), options_(options)
{
    if (!backend_)
        throw BackendError("pipeline needs a backend");
    params_.validate();
    const auto dims = backend_->feature_dims();
    if (dims != params_.config.feature_dims)
        throw ParameterError("head checkpoint expects feature dims that the " + backend_->name() +
                             " backend does not produce");
}

InContextQuery MattingPipeline::query(const std::vector<ReferenceInput>& references) const
{
    if (references.empty())
        throw EmptyPromptError("at least one reference is required");
    std::vector<InContextQuery> queries;
    for (std::size_t r = 0; r < references.size(); ++r) {
        const auto& ref = references[r];
        const ImagePlane roi = rasterize_prompt(ref.prompt, ref.image.height(), ref.image.width());
        const FeatureBundle bundle = backend_->extract(ref.image);
        const FeatureMap& inter = bundle.inter();
        Tensor grid = roi_to_grid(roi, bundle.frame, inter.height(), inter.width());
        if (ref.prompt.kind != PromptKind::mask && options_.extension > 0)
            grid = extend_prompt(grid, bundle, options_.extension);
        queries.push_back(build_query_from_grid(bundle, grid, static_cast<int>(r)));
    }
    return merge_references(queries);
}

TargetResult MattingPipeline::infer_one(const InContextQuery& query, const ImagePlane& target) const
{
    const int R = backend_->resolution();
    const Tensor prepared = prepare_input(target, R);
    const FeatureBundle bundle = backend_->extract(target);
    GuidanceSet guidance = compute_guidance(query, bundle, options_.guidance);

    const HeadInputs inputs = make_head_inputs(prepared, bundle, guidance);
    const AlphaMatte square = head_forward(inputs, params_);
    const Tensor alpha = crop_to_image(to_tensor(square.plane()), bundle.frame);
    const Tensor guide = crop_to_image(guidance.fused, bundle.frame);
    return {AlphaMatte(to_plane(alpha)), std::move(guidance), to_plane(guide)};
}

std::vector<TargetResult> MattingPipeline::infer(const MattingRequest& request) const
{
    request.validate();
    const InContextQuery q = query(request.references);
    std::vector<TargetResult> out;
    out.reserve(request.targets.size());
    for (const auto& t : request.targets)
        out.push_back(infer_one(q, t));
    return out;
}

} // namespace icm
