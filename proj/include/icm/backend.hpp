#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "icm/archive.hpp"
#include "icm/core.hpp"
#include "icm/tensor.hpp"

namespace icm {

/// Feature grid F_l for one scale: tensor of shape (d, h, w).
struct FeatureMap {
    int scale_id = 0;
    Tensor values;

    int dim() const { return values.channels(); }
    int height() const { return values.height(); }
    int width() const { return values.width(); }
    int cells() const { return values.height() * values.width(); }

    /// Cells as rows of an (h*w, d) matrix, row-major cell order.
    Tensor as_rows() const;
};

/// Row-stochastic self-attention A_l over the h*w cells of one scale.
struct AttentionMap {
    int scale_id = 0;
    int height = 0;
    int width = 0;
    Tensor matrix; // (h*w, h*w)
};

/// Where the original image sits inside the backend's square input.
struct Frame {
    int image_height = 0;
    int image_width = 0;
    int square = 0; // side of the zero-padded square, original pixels
    int pad_top = 0;
    int pad_left = 0;
    int resolution = 0; // backend input side

    static Frame for_image(int height, int width, int resolution);
};

/// Multi-scale features and attention from one backend pass. Scales are
/// ordered coarse to fine.
struct FeatureBundle {
    std::vector<FeatureMap> features;
    std::vector<AttentionMap> attention;
    int inter_scale_id = 0;
    Frame frame;

    const FeatureMap& feature(int scale_id) const;
    const AttentionMap& attention_for(int scale_id) const;
    const FeatureMap& inter() const { return feature(inter_scale_id); }

    /// Throws ValueError when an invariant fails: non-finite entries,
    /// attention rows not summing to 1 within `tolerance`, missing inter scale.
    void validate(double tolerance = 1e-5) const;

    friend bool operator==(const FeatureBundle& a, const FeatureBundle& b);
};

// --------------------------------------------------------------------------
// Noise schedule and latent noising

/// Cumulative signal coefficients for a "scaled linear" beta schedule.
class NoiseSchedule {
public:
    NoiseSchedule(int steps = 1000, double beta_start = 0.00085, double beta_end = 0.012);

    int steps() const { return static_cast<int>(alpha_bar_.size()); }
    /// Throws ConfigError when t is outside [0, steps).
    double alpha_bar(int t) const;

private:
    std::vector<double> alpha_bar_;
};

/// z_t = sqrt(alpha_bar) z_0 + sqrt(1 - alpha_bar) eps with eps ~ N(0, I)
/// drawn from a generator seeded by `seed`.
Tensor add_noise(const Tensor& latent, double alpha_bar, std::uint64_t seed);
Tensor add_noise(const Tensor& latent, int timestep, std::uint64_t seed, const NoiseSchedule& schedule);

// --------------------------------------------------------------------------
// Backends

class Backend {
public:
    virtual ~Backend() = default;

    virtual FeatureBundle extract(const ImagePlane& image) const = 0;
    virtual std::string name() const = 0;
    /// Side length of the square input the backend consumes.
    virtual int resolution() const = 0;
    /// Channel dims of the feature scales, coarse to fine.
    virtual std::vector<int> feature_dims() const = 0;
    /// Digest of everything that determines the backend's output.
    virtual std::uint64_t state_hash() const = 0;
};

/// Zero-pads to a square and bilinearly resizes to `resolution`. Returns (3, R, R).
Tensor prepare_input(const ImagePlane& image, int resolution);

/// Maps a (1, h, w) map over the backend input back to image size, dropping padding.
Tensor crop_to_image(const Tensor& map, const Frame& frame);

struct ToyConfig {
    int resolution = 64;
    int dim = 16;
    double position_weight = 0.3;           // in the features
    double attention_position_weight = 0.0; // in the attention keys
    double temperature = 0.05;
    double gain = 8.0;
    std::vector<int> scales = {16, 8, 4}; // downsample factors, coarse to fine
    int inter_scale = 4;
};

/// Deterministic, weight-free backend. Each cell of a scale holds
/// gain * normalize([mean RGB - 0.5, position_weight * sinusoidal code]);
/// attention is the row softmax of cosine similarity over `temperature`
/// between the same descriptors built with attention_position_weight.
class ToyBackend final : public Backend {
public:
    explicit ToyBackend(ToyConfig config = {});

    FeatureBundle extract(const ImagePlane& image) const override;
    /// Runs directly on a (3, R, R) tensor already at backend resolution.
    FeatureBundle extract_prepared(const Tensor& input, const Frame& frame) const;

    std::string name() const override { return "toy"; }
    int resolution() const override { return config_.resolution; }
    std::vector<int> feature_dims() const override;
    std::uint64_t state_hash() const override;
    const ToyConfig& config() const { return config_; }

    /// Positional code for cell (row, col) of a grid x grid layout; dim - 3 entries.
    std::vector<double> positional_code(int row, int col, int grid) const;

private:
    ToyConfig config_;
};

struct DiffusionConfig {
    int timestep = 200;
    std::string prompt_text;
    std::uint64_t noise_seed = 0;
    std::string checkpoint;
    std::vector<int> extraction_blocks = {5, 8, 11};
    int inter_block = 5;
    int resolution = 768;
    int decoder_blocks = 11;
    std::vector<int> block_dims = {1280, 1280, 1280, 1280, 1280, 1280, 640, 640, 640, 320, 320};

    /// Throws ConfigError on blocks outside the decoder or a missing inter block.
    void validate() const;
};

/// Cache key identifying one image under one configuration.
std::string feature_key(const ImagePlane& image, const DiffusionConfig& config);

Archive bundle_to_archive(const FeatureBundle& bundle);
FeatureBundle bundle_from_archive(const Archive& archive);
void save_bundle(const std::filesystem::path& path, const FeatureBundle& bundle);
FeatureBundle load_bundle(const std::filesystem::path& path);

/// Adapter for the frozen latent-diffusion U-Net. The U-Net itself runs out of
/// process; this adapter serves its decoder features and head-averaged
/// self-attention from per-image dump files stored in the checkpoint
/// directory as `<feature_key>.icma`.
class DiffusionBackend final : public Backend {
public:
    explicit DiffusionBackend(DiffusionConfig config);

    FeatureBundle extract(const ImagePlane& image) const override;
    std::string name() const override { return "diffusion"; }
    int resolution() const override { return config_.resolution; }
    std::vector<int> feature_dims() const override;
    std::uint64_t state_hash() const override;
    const DiffusionConfig& config() const { return config_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    std::filesystem::path dump_path(const ImagePlane& image) const;

private:
    DiffusionConfig config_;
    NoiseSchedule schedule_;
    mutable std::mutex mutex_;
};

enum class BackendKind { toy, diffusion };
BackendKind backend_kind_from_string(const std::string& name);

std::shared_ptr<Backend> make_backend(BackendKind kind, const std::string& checkpoint, int timestep);

/// 64-bit FNV-1a, used for content digests throughout.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

} // namespace icm
