#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/core.hpp"
#include "icm/data.hpp"
#include "icm/metrics.hpp"

namespace icm {

class MattingPipeline;

/// Pixel access for a manifest's groups.
class ImageSource {
public:
    virtual ~ImageSource() = default;
    virtual ImagePlane image(const ContextGroup& group, int member) const = 0;
    /// Single-channel label, or nullopt when the member has none.
    virtual std::optional<ImagePlane> label(const ContextGroup& group, int member) const = 0;
};

/// Reads PNGs relative to the manifest root.
class ManifestSource : public ImageSource {
public:
    explicit ManifestSource(Manifest manifest) : manifest_(std::move(manifest)) {}
    ImagePlane image(const ContextGroup& group, int member) const override;
    std::optional<ImagePlane> label(const ContextGroup& group, int member) const override;
    const Manifest& manifest() const { return manifest_; }

private:
    Manifest manifest_;
};

/// Loads a label PNG as one channel (first channel of RGB labels).
ImagePlane load_label(const std::filesystem::path& path);

struct ProtocolCase {
    const ContextGroup* group = nullptr;
    std::vector<int> reference_indices;
    std::vector<ReferenceInput> references;
    std::vector<int> target_indices;
    std::vector<ImagePlane> targets;
};

class MattingModel {
public:
    virtual ~MattingModel() = default;
    virtual std::vector<AlphaMatte> predict(const ProtocolCase& c) = 0;
};

class PipelineModel : public MattingModel {
public:
    explicit PipelineModel(const MattingPipeline& pipeline) : pipeline_(pipeline) {}
    std::vector<AlphaMatte> predict(const ProtocolCase& c) override;

private:
    const MattingPipeline& pipeline_;
};

/// Returns the ground truth. Useful to check the protocol plumbing.
class OracleModel : public MattingModel {
public:
    explicit OracleModel(const ImageSource& source) : source_(source) {}
    std::vector<AlphaMatte> predict(const ProtocolCase& c) override;

private:
    const ImageSource& source_;
};

/// `n` distinct foreground pixels drawn uniformly (all of them if fewer).
std::vector<Point> sample_points(const ImagePlane& mask, int n, std::mt19937_64& rng);

/// One stroke through the mask: from a random deep pixel to the geodesically
/// farthest deep pixel, along a shortest 4-connected path inside the mask.
Polyline sample_scribble(const ImagePlane& mask, std::mt19937_64& rng);

/// Prompt of the requested kind derived from a reference label.
RoiPrompt derive_prompt(const ImagePlane& label, PromptKind kind, int points, double stroke_radius,
                        std::mt19937_64& rng);

struct ImageRecord {
    std::string group;
    int member = 0;
    std::string image;
    ImageMetrics metrics;
};

struct MetricReport {
    int round = 0; // -1 for the across-round average
    PromptKind prompt_kind = PromptKind::mask;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<int>> references;
    std::vector<ImageRecord> images;
    std::map<std::string, ImageMetrics> group_means;
    ImageMetrics overall;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

struct ProtocolOptions {
    PromptKind kind = PromptKind::mask;
    int rounds = 3;
    std::uint64_t seed = 0;
    bool include_references = false;
    int points = 5;
    double stroke_radius = kPointRadius;
};

struct ProtocolResult {
    std::vector<MetricReport> rounds;
    MetricReport average;
    std::vector<std::string> warnings;
};

using PredictionSink = std::function<void(int round, const ContextGroup&, int member, const AlphaMatte&)>;

/// Fixed-reference evaluation: each round derives prompts from the reference
/// labels, predicts every evaluated member and scores it.
ProtocolResult run_protocol(MattingModel& model, const ImageSource& source, const std::vector<ContextGroup>& groups,
                            const ProtocolOptions& options, const PredictionSink& sink = {});

} // namespace icm
