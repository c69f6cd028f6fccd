#include "icm/core.hpp"

#include <algorithm>
#include <cmath>

namespace icm {

ImagePlane::ImagePlane(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data))
{
    if (height < 1 || width < 1)
        throw DimensionError("image plane needs height, width >= 1");
    if (channels != 1 && channels != 3)
        throw DimensionError("image plane channels must be 1 or 3, got " + std::to_string(channels));
    if (data_.size() != static_cast<std::size_t>(height) * width * channels)
        throw DimensionError("image plane data size does not match its shape");
    for (double v : data_) {
        if (!std::isfinite(v))
            throw ValueError("image plane holds a non-finite value");
        if (v < 0.0 || v > 1.0)
            throw ValueError("image plane value outside [0,1]: " + std::to_string(v));
    }
}

ImagePlane ImagePlane::filled(int height, int width, int channels, double value)
{
    if (height < 1 || width < 1)
        throw DimensionError("image plane needs height, width >= 1");
    return ImagePlane(height, width, channels,
                      std::vector<double>(static_cast<std::size_t>(height) * width * channels, value));
}

ImagePlane ImagePlane::channel(int ch) const
{
    if (ch < 0 || ch >= channels_)
        throw DimensionError("channel index out of range");
    std::vector<double> out(pixels());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = data_[i * channels_ + ch];
    return ImagePlane(height_, width_, 1, std::move(out));
}

AlphaMatte::AlphaMatte(ImagePlane plane) : plane_(std::move(plane))
{
    if (plane_.channels() != 1)
        throw DimensionError("alpha matte must have exactly one channel");
}

bool is_binary(const ImagePlane& plane)
{
    return std::all_of(plane.data().begin(), plane.data().end(),
                       [](double v) { return v == 0.0 || v == 1.0; });
}

ImagePlane binarize(const ImagePlane& plane, double threshold)
{
    if (plane.channels() != 1)
        throw DimensionError("binarize expects a single-channel plane");
    std::vector<double> out(plane.pixels());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = plane.data()[i] >= threshold ? 1.0 : 0.0;
    return ImagePlane(plane.height(), plane.width(), 1, std::move(out));
}

std::size_t count_nonzero(const ImagePlane& plane)
{
    return static_cast<std::size_t>(
        std::count_if(plane.data().begin(), plane.data().end(), [](double v) { return v != 0.0; }));
}

std::string to_string(PromptKind kind)
{
    switch (kind) {
    case PromptKind::points: return "points";
    case PromptKind::scribbles: return "scribbles";
    case PromptKind::mask: return "mask";
    }
    return "mask";
}

PromptKind prompt_kind_from_string(const std::string& name)
{
    if (name == "points") return PromptKind::points;
    if (name == "scribbles" || name == "strokes") return PromptKind::scribbles;
    if (name == "mask") return PromptKind::mask;
    throw ValueError("unknown prompt kind '" + name + "'");
}

std::string to_string(GroupKind kind)
{
    return kind == GroupKind::matting ? "matting" : "segmentation";
}

GroupKind group_kind_from_string(const std::string& name)
{
    if (name == "matting") return GroupKind::matting;
    if (name == "segmentation") return GroupKind::segmentation;
    throw ValueError("unknown group kind '" + name + "'");
}

RoiPrompt RoiPrompt::from_points(std::vector<Point> pts)
{
    RoiPrompt p;
    p.kind = PromptKind::points;
    p.points = std::move(pts);
    return p;
}

RoiPrompt RoiPrompt::from_scribbles(std::vector<Polyline> lines, double radius)
{
    RoiPrompt p;
    p.kind = PromptKind::scribbles;
    p.scribbles = std::move(lines);
    p.stroke_radius = radius;
    return p;
}

RoiPrompt RoiPrompt::from_mask(ImagePlane mask)
{
    RoiPrompt p;
    p.kind = PromptKind::mask;
    p.mask = std::move(mask);
    return p;
}

namespace {

void check_bounds(const Point& p, int height, int width)
{
    if (!std::isfinite(p.row) || !std::isfinite(p.col) || p.row < 0 || p.col < 0 ||
        p.row > height - 1 || p.col > width - 1)
        throw ValueError("prompt coordinate (" + std::to_string(p.row) + ", " +
                         std::to_string(p.col) + ") outside the " + std::to_string(height) + "x" +
                         std::to_string(width) + " image");
}

// Squared distance from pixel centre (r, c) to segment a-b.
double segment_dist2(double r, double c, const Point& a, const Point& b)
{
    const double dr = b.row - a.row;
    const double dc = b.col - a.col;
    const double len2 = dr * dr + dc * dc;
    double t = 0.0;
    if (len2 > 0.0)
        t = std::clamp(((r - a.row) * dr + (c - a.col) * dc) / len2, 0.0, 1.0);
    const double pr = a.row + t * dr - r;
    const double pc = a.col + t * dc - c;
    return pr * pr + pc * pc;
}

void stamp_segment(std::vector<double>& out, int height, int width, const Point& a, const Point& b,
                   double radius)
{
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.row, b.row) - radius)));
    const int r1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(a.row, b.row) + radius)));
    const int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.col, b.col) - radius)));
    const int c1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(a.col, b.col) + radius)));
    const double rad2 = radius * radius;
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
            if (segment_dist2(r, c, a, b) <= rad2)
                out[static_cast<std::size_t>(r) * width + c] = 1.0;
}

} // namespace

ImagePlane rasterize_prompt(const RoiPrompt& prompt, int height, int width)
{
    if (height < 1 || width < 1)
        throw DimensionError("rasterization target must be at least 1x1");

    std::vector<double> out(static_cast<std::size_t>(height) * width, 0.0);
    switch (prompt.kind) {
    case PromptKind::mask: {
        if (!prompt.mask)
            throw EmptyPromptError("mask prompt carries no mask");
        const ImagePlane& m = *prompt.mask;
        if (m.height() != height || m.width() != width)
            throw DimensionError("mask prompt size does not match the reference image");
        const ImagePlane single = m.channels() == 1 ? m : m.channel(0);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = single.data()[i] >= 0.5 ? 1.0 : 0.0;
        break;
    }
    case PromptKind::points:
        for (const Point& p : prompt.points) {
            check_bounds(p, height, width);
            stamp_segment(out, height, width, p, p, kPointRadius);
        }
        break;
    case PromptKind::scribbles:
        if (!(prompt.stroke_radius >= 0.0))
            throw ValueError("stroke radius must be nonnegative");
        for (const Polyline& line : prompt.scribbles) {
            for (const Point& p : line)
                check_bounds(p, height, width);
            if (line.size() == 1)
                stamp_segment(out, height, width, line[0], line[0], prompt.stroke_radius);
            for (std::size_t i = 1; i < line.size(); ++i)
                stamp_segment(out, height, width, line[i - 1], line[i], prompt.stroke_radius);
        }
        break;
    }

    ImagePlane result(height, width, 1, std::move(out));
    if (count_nonzero(result) == 0)
        throw EmptyPromptError("prompt rasterizes to an empty region of interest");
    return result;
}

ImagePlane composite(const ImagePlane& fg, const ImagePlane& bg, const AlphaMatte& alpha)
{
    if (!fg.same_shape(bg) || !fg.same_size(alpha.plane()))
        throw DimensionError("composite needs foreground, background and alpha of equal size");
    const int ch = fg.channels();
    std::vector<double> out(fg.data().size());
    for (std::size_t i = 0; i < fg.pixels(); ++i) {
        const double a = alpha.data()[i];
        for (int k = 0; k < ch; ++k) {
            const std::size_t j = i * ch + k;
            out[j] = std::clamp(a * fg.data()[j] + (1.0 - a) * bg.data()[j], 0.0, 1.0);
        }
    }
    return ImagePlane(fg.height(), fg.width(), ch, std::move(out));
}

void MattingRequest::validate() const
{
    if (targets.empty())
        throw ValueError("matting request needs at least one target image");
    if (references.empty())
        throw ValueError("matting request needs at least one reference");
    for (const auto& t : targets)
        if (t.channels() != 3)
            throw DimensionError("target images must be RGB");
    for (const auto& r : references)
        if (r.image.channels() != 3)
            throw DimensionError("reference images must be RGB");
}

} // namespace icm
