#pragma once

#include <memory>
#include <vector>

#include "icm/backend.hpp"
#include "icm/head.hpp"
#include "icm/similarity.hpp"

namespace icm {

struct PipelineOptions {
    GuidanceOptions guidance;
    /// Attention-based RoI extension for point and scribble prompts; 0 disables.
    int extension = kDefaultExtension;
};

struct TargetResult {
    AlphaMatte alpha;
    GuidanceSet guidance;
    /// Fused guidance mapped back to the target image's size.
    ImagePlane guidance_image;
};

/// Per-map min-max normalization used before maps enter the head.
Tensor normalize_map(const Tensor& map);

/// Assembles head inputs for one target from its bundle and guidance.
HeadInputs make_head_inputs(const Tensor& prepared_image, const FeatureBundle& target, const GuidanceSet& guidance);

/// End-to-end in-context matting: backend features, similarity, head.
class MattingPipeline {
public:
    MattingPipeline(std::shared_ptr<const Backend> backend, HeadParameters params, PipelineOptions options = {});

    /// Merged query over all references. Sparse prompts are extended first.
    InContextQuery query(const std::vector<ReferenceInput>& references) const;

    TargetResult infer_one(const InContextQuery& query, const ImagePlane& target) const;
    std::vector<TargetResult> infer(const MattingRequest& request) const;

    const Backend& backend() const { return *backend_; }
    const HeadParameters& params() const { return params_; }
    const PipelineOptions& options() const { return options_; }

private:
    std::shared_ptr<const Backend> backend_;
    HeadParameters params_;
    PipelineOptions options_;
};

} // namespace icm
