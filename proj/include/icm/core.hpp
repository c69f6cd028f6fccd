#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace icm {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ValueError : Error {
    using Error::Error;
};
struct EmptyPromptError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct BackendError : Error {
    using Error::Error;
};
struct ParameterError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

/// Immutable H x W x C raster with values in [0,1], interleaved row-major.
class ImagePlane {
public:
    ImagePlane() = default;

    /// Validates shape, finiteness and range; throws ValueError / DimensionError.
    ImagePlane(int height, int width, int channels, std::vector<double> data);

    static ImagePlane filled(int height, int width, int channels, double value);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const { return data_.empty(); }

    double at(int row, int col, int ch = 0) const
    {
        return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
    }
    std::span<const double> data() const { return data_; }

    bool same_shape(const ImagePlane& other) const
    {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }
    bool same_size(const ImagePlane& other) const
    {
        return height_ == other.height_ && width_ == other.width_;
    }

    /// Single channel plane extracted from a multi-channel one.
    ImagePlane channel(int ch) const;

    friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Single-channel plane holding foreground opacity.
class AlphaMatte {
public:
    AlphaMatte() = default;
    explicit AlphaMatte(ImagePlane plane);
    AlphaMatte(int height, int width, std::vector<double> data)
        : AlphaMatte(ImagePlane(height, width, 1, std::move(data)))
    {
    }

    const ImagePlane& plane() const { return plane_; }
    int height() const { return plane_.height(); }
    int width() const { return plane_.width(); }
    double at(int row, int col) const { return plane_.at(row, col); }
    std::span<const double> data() const { return plane_.data(); }

    friend bool operator==(const AlphaMatte&, const AlphaMatte&) = default;

private:
    ImagePlane plane_;
};

/// True when every value of a single-channel plane is exactly 0 or 1.
bool is_binary(const ImagePlane& plane);

/// Binarizes a single-channel plane at `threshold` (v >= threshold -> 1).
ImagePlane binarize(const ImagePlane& plane, double threshold = 0.5);

std::size_t count_nonzero(const ImagePlane& plane);

struct Point {
    double row = 0;
    double col = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

using Polyline = std::vector<Point>;

enum class PromptKind { points, scribbles, mask };

std::string to_string(PromptKind kind);
PromptKind prompt_kind_from_string(const std::string& name);

inline constexpr double kPointRadius = 3.0;

/// User guidance on a reference image. Coordinates are (row, col) in pixels,
/// origin top-left.
struct RoiPrompt {
    PromptKind kind = PromptKind::mask;
    std::vector<Point> points;
    std::vector<Polyline> scribbles;
    double stroke_radius = kPointRadius;
    std::optional<ImagePlane> mask;

    static RoiPrompt from_points(std::vector<Point> pts);
    static RoiPrompt from_scribbles(std::vector<Polyline> lines, double radius);
    static RoiPrompt from_mask(ImagePlane mask);
};

/// Rasterizes a prompt to a strictly binary single-channel plane.
/// Throws EmptyPromptError when nothing is drawn and ValueError on
/// out-of-bounds coordinates.
ImagePlane rasterize_prompt(const RoiPrompt& prompt, int height, int width);

/// I = alpha * F + (1 - alpha) * B, per pixel and channel.
ImagePlane composite(const ImagePlane& fg, const ImagePlane& bg, const AlphaMatte& alpha);

enum class GroupKind { matting, segmentation };

std::string to_string(GroupKind kind);
GroupKind group_kind_from_string(const std::string& name);

struct GroupMember {
    std::string image;
    std::string label;
    friend bool operator==(const GroupMember&, const GroupMember&) = default;
};

struct ContextGroup {
    std::string id;
    GroupKind kind = GroupKind::matting;
    std::vector<GroupMember> members;
    std::vector<int> reference_indices;
    std::optional<std::string> category;

    friend bool operator==(const ContextGroup&, const ContextGroup&) = default;
};

struct ReferenceInput {
    ImagePlane image;
    RoiPrompt prompt;
};

struct MattingRequest {
    std::vector<ImagePlane> targets;
    std::vector<ReferenceInput> references;

    /// Throws ValueError unless there is at least one target and one reference.
    void validate() const;
};

} // namespace icm
