#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/backend.hpp"
#include "icm/head.hpp"
#include "icm/losses.hpp"
#include "icm/protocol.hpp"
#include "icm/similarity.hpp"

namespace icm {

struct TrainConfig {
    std::string profile = "standard"; // head profile: standard | toy
    double learning_rate = 4e-4;
    int batch_size = 8;
    int crop_size = 768;
    int iterations = 20000;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossWeights loss_weights;
    int erosion_radius = 10;
    std::uint64_t seed = 0;
    std::uint64_t head_seed = 0;
    int checkpoint_every = 1000;
    GuidanceOptions guidance;

    /// Small settings for the weight-free toy backend.
    static TrainConfig toy();

    /// Throws ConfigError unless every size and rate is positive.
    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct SamplePair {
    ImagePlane target;
    ImagePlane target_label; // single channel
    ImagePlane reference;
    ImagePlane reference_roi; // binary
    GroupKind kind = GroupKind::matting;
    std::string group;
    int target_member = 0;
    int reference_member = 0;

    std::string id() const;
};

/// Crop of `crop` x `crop` at a uniform offset; smaller sides are reflect-padded first.
ImagePlane random_crop(const ImagePlane& image, int crop, int top, int left);

/// Group weighted by member count, reference and target uniform within it,
/// each cropped independently. Empty groups are skipped with a warning.
SamplePair sample_pair(const ImageSource& source, const std::vector<ContextGroup>& groups, int crop,
                       std::mt19937_64& rng, std::vector<std::string>* warnings = nullptr);

struct LossRecord {
    double l1 = 0;
    double laplacian = 0;
    double gradient = 0;
    double segmentation = 0;
    double total = 0;
    std::vector<std::string> degenerate; // skipped sample ids

    std::map<std::string, double> as_map() const;
};

struct AdamState {
    std::int64_t step = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct NonFiniteLossError : Error {
    NonFiniteLossError(const std::string& what, std::vector<std::string> ids)
        : Error(what), sample_ids(std::move(ids))
    {
    }
    std::vector<std::string> sample_ids;
};

/// Decoupled weight decay then the bias-corrected adaptive step.
void adamw_update(HeadParameters& params, AdamState& state, const std::map<std::string, Tensor>& grads,
                  const TrainConfig& config);

/// Loss of one sample on a fresh tape, gradients accumulated into `grads`.
/// Returns false for a degenerate sample (empty query or confident area).
bool accumulate_sample(const SamplePair& sample, const HeadParameters& params, const Backend& backend,
                       const TrainConfig& config, std::map<std::string, Tensor>& grads, LossRecord& record);

/// One optimizer step over the summed batch loss. Params and state are left
/// untouched when a loss is non-finite (NonFiniteLossError).
LossRecord train_step(const std::vector<SamplePair>& batch, HeadParameters& params, AdamState& state,
                      const TrainConfig& config, const Backend& backend);

/// Run directory: config.json, loss.csv, checkpoints/{head,state}_<iter>.icma.
class Trainer {
public:
    Trainer(TrainConfig config, std::shared_ptr<const Backend> backend, const ImageSource& source,
            std::vector<ContextGroup> groups, std::filesystem::path run_dir);

    /// Fresh start from seeded parameters (or the given ones).
    void start();
    void start(HeadParameters params);
    /// Restores parameters, optimizer moments, sampler state and iteration.
    void resume(const std::filesystem::path& state_file);

    LossRecord step();
    void run(int iterations);
    void save_checkpoint() const;

    int iteration() const { return iteration_; }
    const HeadParameters& params() const { return params_; }
    const AdamState& optimizer() const { return adam_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    std::filesystem::path head_checkpoint(int iteration) const;
    std::filesystem::path state_checkpoint(int iteration) const;

private:
    TrainConfig config_;
    std::shared_ptr<const Backend> backend_;
    const ImageSource& source_;
    std::vector<ContextGroup> groups_;
    std::filesystem::path run_dir_;
    HeadParameters params_;
    AdamState adam_;
    std::mt19937_64 rng_;
    int iteration_ = 0;
    std::vector<std::string> warnings_;
};

/// Head configuration matching the backend's feature dims for a profile.
HeadConfig head_config_for(const std::string& profile, const Backend& backend);

/// In-memory source for tests and synthetic data.
class MemorySource : public ImageSource {
public:
    void add(const std::string& group, ImagePlane image, std::optional<ImagePlane> label);
    ImagePlane image(const ContextGroup& group, int member) const override;
    std::optional<ImagePlane> label(const ContextGroup& group, int member) const override;

private:
    std::map<std::string, std::vector<std::pair<ImagePlane, std::optional<ImagePlane>>>> data_;
};

} // namespace icm
