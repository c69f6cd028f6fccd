#include "icm/backend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "icm/kernels.hpp"
#include "kernels_detail.hpp"

namespace icm {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed)
{
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4)
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

Tensor FeatureMap::as_rows() const
{
    const int d = dim(), n = cells();
    Tensor rows = Tensor::matrix(n, d);
    for (int k = 0; k < d; ++k)
        for (int i = 0; i < n; ++i)
            rows.at(i, k) = values[static_cast<std::size_t>(k) * n + i];
    return rows;
}

Frame Frame::for_image(int height, int width, int resolution)
{
    Frame f;
    f.image_height = height;
    f.image_width = width;
    f.square = std::max(height, width);
    f.pad_top = (f.square - height) / 2;
    f.pad_left = (f.square - width) / 2;
    f.resolution = resolution;
    return f;
}

const FeatureMap& FeatureBundle::feature(int scale_id) const
{
    for (const auto& f : features)
        if (f.scale_id == scale_id)
            return f;
    throw DimensionError("feature bundle has no scale " + std::to_string(scale_id));
}

const AttentionMap& FeatureBundle::attention_for(int scale_id) const
{
    for (const auto& a : attention)
        if (a.scale_id == scale_id)
            return a;
    throw DimensionError("feature bundle has no attention for scale " + std::to_string(scale_id));
}

void FeatureBundle::validate(double tolerance) const
{
    if (features.empty())
        throw ValueError("feature bundle has no feature scales");
    bool has_inter = false;
    for (const auto& f : features) {
        has_inter = has_inter || f.scale_id == inter_scale_id;
        for (double v : f.values.values())
            if (!std::isfinite(v))
                throw ValueError("non-finite feature value at scale " + std::to_string(f.scale_id));
    }
    if (!has_inter)
        throw ValueError("inter scale " + std::to_string(inter_scale_id) + " missing from feature bundle");
    for (const auto& a : attention) {
        const int n = a.height * a.width;
        if (a.matrix.rank() != 2 || a.matrix.rows() != n || a.matrix.cols() != n)
            throw DimensionError("attention matrix shape does not match its grid");
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (double v : a.matrix.row(i)) {
                if (!std::isfinite(v) || v < 0.0)
                    throw ValueError("attention entries must be finite and nonnegative");
                s += v;
            }
            if (std::abs(s - 1.0) > tolerance)
                throw ValueError("attention row " + std::to_string(i) + " sums to " + std::to_string(s));
        }
    }
}

bool operator==(const FeatureBundle& a, const FeatureBundle& b)
{
    if (a.inter_scale_id != b.inter_scale_id || a.features.size() != b.features.size() ||
        a.attention.size() != b.attention.size())
        return false;
    for (std::size_t i = 0; i < a.features.size(); ++i)
        if (a.features[i].scale_id != b.features[i].scale_id || a.features[i].values != b.features[i].values)
            return false;
    for (std::size_t i = 0; i < a.attention.size(); ++i)
        if (a.attention[i].scale_id != b.attention[i].scale_id || a.attention[i].matrix != b.attention[i].matrix)
            return false;
    return true;
}

// --------------------------------------------------------------------------

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
{
    if (steps < 1)
        throw ConfigError("noise schedule needs at least one step");
    alpha_bar_.resize(static_cast<std::size_t>(steps));
    const double s0 = std::sqrt(beta_start), s1 = std::sqrt(beta_end);
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double r = steps == 1 ? s0 : s0 + (s1 - s0) * t / (steps - 1);
        prod *= 1.0 - r * r;
        alpha_bar_[static_cast<std::size_t>(t)] = prod;
    }
}

double NoiseSchedule::alpha_bar(int t) const
{
    if (t < 0 || t >= steps())
        throw ConfigError("timestep " + std::to_string(t) + " outside schedule range [0, " +
                          std::to_string(steps()) + ")");
    return alpha_bar_[static_cast<std::size_t>(t)];
}

Tensor add_noise(const Tensor& latent, double alpha_bar, std::uint64_t seed)
{
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0))
        throw ConfigError("schedule coefficient must lie in [0,1]");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    Tensor out = latent;
    for (double& v : out.values())
        v = a * v + b * normal(rng);
    return out;
}

Tensor add_noise(const Tensor& latent, int timestep, std::uint64_t seed, const NoiseSchedule& schedule)
{
    return add_noise(latent, schedule.alpha_bar(timestep), seed);
}

// --------------------------------------------------------------------------

Tensor prepare_input(const ImagePlane& image, int resolution)
{
    if (image.channels() != 3)
        throw DimensionError("backend input must be an RGB image");
    if (resolution < 1)
        throw DimensionError("backend resolution must be positive");
    const Frame f = Frame::for_image(image.height(), image.width(), resolution);
    Tensor square = Tensor::chw(3, f.square, f.square);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c)
                square.at(c, y + f.pad_top, x + f.pad_left) = image.at(y, x, c);
    if (f.square == resolution)
        return square;
    return kernels::resize_bilinear(square, resolution, resolution);
}

Tensor crop_to_image(const Tensor& map, const Frame& frame)
{
    const Tensor square = (map.height() == frame.square && map.width() == frame.square)
                              ? map
                              : kernels::resize_bilinear(map, frame.square, frame.square);
    Tensor out = Tensor::chw(map.channels(), frame.image_height, frame.image_width);
    for (int c = 0; c < map.channels(); ++c)
        for (int y = 0; y < frame.image_height; ++y)
            for (int x = 0; x < frame.image_width; ++x)
                out.at(c, y, x) = square.at(c, y + frame.pad_top, x + frame.pad_left);
    return out;
}

// --------------------------------------------------------------------------

ToyBackend::ToyBackend(ToyConfig config) : config_(std::move(config))
{
    if (config_.dim < 3)
        throw ConfigError("toy feature dim must be at least 3");
    if (config_.temperature <= 0.0 || config_.gain <= 0.0 || config_.position_weight < 0.0)
        throw ConfigError("toy temperature and gain must be positive, position weight nonnegative");
    if (config_.scales.empty())
        throw ConfigError("toy backend needs at least one scale");
    if (std::find(config_.scales.begin(), config_.scales.end(), config_.inter_scale) == config_.scales.end())
        throw ConfigError("toy inter scale must be one of the feature scales");
    for (int s : config_.scales)
        if (s < 1 || config_.resolution % s != 0)
            throw ConfigError("toy resolution must be divisible by every scale factor");
}

std::vector<int> ToyBackend::feature_dims() const
{
    return std::vector<int>(config_.scales.size(), config_.dim);
}

std::vector<double> ToyBackend::positional_code(int row, int col, int grid) const
{
    std::vector<double> code(static_cast<std::size_t>(config_.dim - 3));
    for (std::size_t c = 0; c < code.size(); ++c) {
        const int freq = static_cast<int>(c / 4);
        const bool along_col = (c / 2) % 2 == 1;
        const double p = ((along_col ? col : row) + 0.5) / grid;
        const double arg = std::numbers::pi * std::ldexp(1.0, freq) * p;
        code[c] = c % 2 == 0 ? std::sin(arg) : std::cos(arg);
    }
    return code;
}

std::uint64_t ToyBackend::state_hash() const
{
    std::vector<double> state = {static_cast<double>(config_.resolution), static_cast<double>(config_.dim),
                                 config_.position_weight, config_.attention_position_weight,
                                 config_.temperature, config_.gain,
                                 static_cast<double>(config_.inter_scale)};
    for (int s : config_.scales) {
        state.push_back(s);
        const int grid = config_.resolution / s;
        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j)
                for (double v : positional_code(i, j, grid))
                    state.push_back(v);
    }
    return fnv1a(state.data(), state.size() * sizeof(double));
}

FeatureBundle ToyBackend::extract(const ImagePlane& image) const
{
    const Frame frame = Frame::for_image(image.height(), image.width(), config_.resolution);
    return extract_prepared(prepare_input(image, config_.resolution), frame);
}

FeatureBundle ToyBackend::extract_prepared(const Tensor& input, const Frame& frame) const
{
    const int R = config_.resolution;
    if (input.rank() != 3 || input.channels() != 3 || input.height() != R || input.width() != R)
        throw DimensionError("toy backend expects a (3, " + std::to_string(R) + ", " + std::to_string(R) +
                             ") input");
    FeatureBundle bundle;
    bundle.inter_scale_id = config_.inter_scale;
    bundle.frame = frame;
    const int d = config_.dim;

    for (int factor : config_.scales) {
        const int grid = R / factor;
        const int n = grid * grid;
        // Cell descriptors: centered mean color plus a weighted positional code.
        // Features and attention keys differ only in that weight.
        auto describe = [&](double position_weight) {
            Tensor rows = Tensor::matrix(n, d);
            std::vector<double> pixels, scratch;
            for (int i = 0; i < grid; ++i)
                for (int j = 0; j < grid; ++j) {
                    const int cell = i * grid + j;
                    // Order-free sum: cells holding the same pixels in any
                    // arrangement get bitwise-equal descriptors.
                    for (int c = 0; c < 3; ++c) {
                        pixels.clear();
                        for (int y = i * factor; y < (i + 1) * factor; ++y)
                            for (int x = j * factor; x < (j + 1) * factor; ++x)
                                pixels.push_back(input.at(c, y, x));
                        const double s = kernels::detail::order_free_sum(pixels.data(), static_cast<int>(pixels.size()), scratch);
                        rows.at(cell, c) = s / (factor * factor) - 0.5;
                    }
                    const auto code = positional_code(i, j, grid);
                    for (int k = 3; k < d; ++k)
                        rows.at(cell, k) = position_weight * code[static_cast<std::size_t>(k - 3)];
                    double norm = 0.0;
                    for (int k = 0; k < d; ++k)
                        norm += rows.at(cell, k) * rows.at(cell, k);
                    norm = std::sqrt(norm);
                    if (norm > 0.0)
                        for (int k = 0; k < d; ++k)
                            rows.at(cell, k) *= config_.gain / norm;
                }
            return rows;
        };
        const Tensor rows = describe(config_.position_weight);

        FeatureMap fm;
        fm.scale_id = factor;
        fm.values = Tensor::chw(d, grid, grid);
        for (int k = 0; k < d; ++k)
            for (int cell = 0; cell < n; ++cell)
                fm.values[static_cast<std::size_t>(k) * n + cell] = rows.at(cell, k);
        bundle.features.push_back(std::move(fm));

        AttentionMap am;
        am.scale_id = factor;
        am.height = grid;
        am.width = grid;
        am.matrix = kernels::cosine_attention(describe(config_.attention_position_weight), config_.temperature);
        bundle.attention.push_back(std::move(am));
    }
    return bundle;
}

// --------------------------------------------------------------------------

void DiffusionConfig::validate() const
{
    if (timestep < 0)
        throw ConfigError("timestep must be nonnegative");
    if (extraction_blocks.empty())
        throw ConfigError("at least one extraction block is required");
    for (int b : extraction_blocks)
        if (b < 1 || b > decoder_blocks)
            throw ConfigError("extraction block " + std::to_string(b) + " outside decoder depth " +
                              std::to_string(decoder_blocks));
    if (std::find(extraction_blocks.begin(), extraction_blocks.end(), inter_block) == extraction_blocks.end())
        throw ConfigError("inter block must be one of the extraction blocks");
    if (static_cast<int>(block_dims.size()) != decoder_blocks)
        throw ConfigError("block_dims must list one channel width per decoder block");
    if (resolution < 1)
        throw ConfigError("resolution must be positive");
}

std::string feature_key(const ImagePlane& image, const DiffusionConfig& config)
{
    std::uint64_t h = fnv1a(image.data().data(), image.data().size() * sizeof(double));
    const int dims[3] = {image.height(), image.width(), image.channels()};
    h = fnv1a(dims, sizeof(dims), h);
    const int knobs[3] = {config.timestep, config.inter_block, config.resolution};
    h = fnv1a(knobs, sizeof(knobs), h);
    h = fnv1a(&config.noise_seed, sizeof(config.noise_seed), h);
    h = fnv1a(config.prompt_text.data(), config.prompt_text.size(), h);
    h = fnv1a(config.extraction_blocks.data(), config.extraction_blocks.size() * sizeof(int), h);
    return hex64(h);
}

Archive bundle_to_archive(const FeatureBundle& bundle)
{
    Archive a;
    a.version = "icm-features/1";
    nlohmann::json scales = nlohmann::json::array();
    for (const auto& f : bundle.features) {
        scales.push_back(f.scale_id);
        a.arrays.emplace("feature/" + std::to_string(f.scale_id), f.values);
    }
    nlohmann::json attn = nlohmann::json::array();
    for (const auto& m : bundle.attention) {
        attn.push_back({{"scale", m.scale_id}, {"height", m.height}, {"width", m.width}});
        a.arrays.emplace("attention/" + std::to_string(m.scale_id), m.matrix);
    }
    const Frame& fr = bundle.frame;
    a.meta = {{"scales", scales},
              {"attention", attn},
              {"inter_scale", bundle.inter_scale_id},
              {"frame",
               {{"image_height", fr.image_height},
                {"image_width", fr.image_width},
                {"square", fr.square},
                {"pad_top", fr.pad_top},
                {"pad_left", fr.pad_left},
                {"resolution", fr.resolution}}}};
    return a;
}

FeatureBundle bundle_from_archive(const Archive& a)
{
    FeatureBundle b;
    try {
        b.inter_scale_id = a.meta.at("inter_scale").get<int>();
        for (const auto& s : a.meta.at("scales")) {
            const int id = s.get<int>();
            b.features.push_back({id, a.get("feature/" + std::to_string(id))});
        }
        for (const auto& m : a.meta.at("attention")) {
            AttentionMap am;
            am.scale_id = m.at("scale").get<int>();
            am.height = m.at("height").get<int>();
            am.width = m.at("width").get<int>();
            am.matrix = a.get("attention/" + std::to_string(am.scale_id));
            b.attention.push_back(std::move(am));
        }
        const auto& fr = a.meta.at("frame");
        b.frame.image_height = fr.at("image_height").get<int>();
        b.frame.image_width = fr.at("image_width").get<int>();
        b.frame.square = fr.at("square").get<int>();
        b.frame.pad_top = fr.at("pad_top").get<int>();
        b.frame.pad_left = fr.at("pad_left").get<int>();
        b.frame.resolution = fr.at("resolution").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed feature dump: ") + e.what());
    }
    return b;
}

void save_bundle(const std::filesystem::path& path, const FeatureBundle& bundle)
{
    save_archive(path, bundle_to_archive(bundle));
}

FeatureBundle load_bundle(const std::filesystem::path& path)
{
    return bundle_from_archive(load_archive(path));
}

DiffusionBackend::DiffusionBackend(DiffusionConfig config) : config_(std::move(config))
{
    config_.validate();
    schedule_.alpha_bar(config_.timestep);
    if (config_.checkpoint.empty() || !std::filesystem::is_directory(config_.checkpoint))
        throw BackendError("diffusion checkpoint '" + config_.checkpoint + "' is not an available feature store");
}

std::vector<int> DiffusionBackend::feature_dims() const
{
    std::vector<int> dims;
    for (int b : config_.extraction_blocks)
        dims.push_back(config_.block_dims[static_cast<std::size_t>(b - 1)]);
    return dims;
}

std::uint64_t DiffusionBackend::state_hash() const
{
    const std::string text = config_.checkpoint + "|" + std::to_string(config_.timestep) + "|" +
                             std::to_string(config_.noise_seed) + "|" + config_.prompt_text;
    return fnv1a(text.data(), text.size());
}

std::filesystem::path DiffusionBackend::dump_path(const ImagePlane& image) const
{
    return std::filesystem::path(config_.checkpoint) / (feature_key(image, config_) + ".icma");
}

FeatureBundle DiffusionBackend::extract(const ImagePlane& image) const
{
    std::lock_guard lock(mutex_);
    if (image.channels() != 3)
        throw DimensionError("backend input must be an RGB image");
    const auto path = dump_path(image);
    if (!std::filesystem::exists(path))
        throw BackendError("no diffusion features for this image at " + path.string());
    FeatureBundle bundle;
    try {
        bundle = load_bundle(path);
    } catch (const IoError& e) {
        throw BackendError(e.what());
    }
    if (bundle.inter_scale_id != config_.inter_block)
        throw BackendError("feature dump inter scale does not match the configured inter block");
    bundle.validate();
    return bundle;
}

BackendKind backend_kind_from_string(const std::string& name)
{
    if (name == "toy") return BackendKind::toy;
    if (name == "diffusion") return BackendKind::diffusion;
    throw ConfigError("unknown backend '" + name + "'");
}

std::shared_ptr<Backend> make_backend(BackendKind kind, const std::string& checkpoint, int timestep)
{
    if (kind == BackendKind::toy)
        return std::make_shared<ToyBackend>();
    DiffusionConfig cfg;
    cfg.checkpoint = checkpoint;
    cfg.timestep = timestep;
    return std::make_shared<DiffusionBackend>(cfg);
}

} // namespace icm
