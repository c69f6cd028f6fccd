#include "icm/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "icm/archive.hpp"
#include "icm/backend.hpp"
#include "icm/image_io.hpp"

namespace icm {

HeadConfig HeadConfig::standard()
{
    return HeadConfig{};
}

HeadConfig HeadConfig::toy(int feature_dim)
{
    HeadConfig c;
    c.profile = "toy";
    c.feature_dims = {feature_dim, feature_dim, feature_dim};
    c.fusion_widths = {32, 16, 8};
    c.detail_widths = {8, 16};
    return c;
}

void HeadConfig::validate() const
{
    if (feature_dims.empty())
        throw ConfigError("head needs at least one feature scale");
    if (fusion_widths.size() != feature_dims.size())
        throw ConfigError("head needs one fusion width per feature scale");
    auto positive = [](const std::vector<int>& v) {
        return std::all_of(v.begin(), v.end(), [](int x) { return x > 0; });
    };
    if (!positive(feature_dims) || !positive(fusion_widths) || !positive(detail_widths) || max_groups < 1)
        throw ConfigError("head widths must be positive");
}

nlohmann::json HeadConfig::to_json() const
{
    return {{"profile", profile},           {"feature_dims", feature_dims}, {"fusion_widths", fusion_widths},
            {"detail_widths", detail_widths}, {"max_groups", max_groups},   {"seed", seed}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j)
{
    HeadConfig c;
    c.profile = j.value("profile", c.profile);
    c.feature_dims = j.value("feature_dims", c.feature_dims);
    c.fusion_widths = j.value("fusion_widths", c.fusion_widths);
    c.detail_widths = j.value("detail_widths", c.detail_widths);
    c.max_groups = j.value("max_groups", c.max_groups);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

namespace {

int groups_for(int channels, int max_groups)
{
    return std::gcd(channels, max_groups);
}

void add_block(std::vector<ParameterShape>& out, const std::string& name, int in, int width)
{
    out.push_back({name + ".weight", {width, in, 3, 3}});
    out.push_back({name + ".bias", {width}});
    out.push_back({name + ".gn.gamma", {width}});
    out.push_back({name + ".gn.beta", {width}});
}

int last_fusion_width(const HeadConfig& c)
{
    return c.fusion_widths.back();
}

} // namespace

std::vector<ParameterShape> parameter_manifest(const HeadConfig& c)
{
    c.validate();
    std::vector<ParameterShape> m;
    const std::size_t L = c.feature_dims.size();
    for (std::size_t l = 0; l < L; ++l) {
        const std::string p = "fuse" + std::to_string(l);
        add_block(m, p + ".a", c.feature_dims[l] + 1, c.fusion_widths[l]);
        add_block(m, p + ".b", c.fusion_widths[l], c.fusion_widths[l]);
        if (l > 0)
            add_block(m, "merge" + std::to_string(l), c.fusion_widths[l - 1] + c.fusion_widths[l],
                      c.fusion_widths[l]);
    }
    const std::size_t K = c.detail_widths.size();
    for (std::size_t k = 0; k < K; ++k)
        add_block(m, "detail.stream" + std::to_string(k + 1), k == 0 ? 4 : c.detail_widths[k - 1],
                  c.detail_widths[k]);
    int prev = last_fusion_width(c);
    for (std::size_t k = K; k-- > 0;) {
        add_block(m, "detail.fuse" + std::to_string(k + 1), prev + c.detail_widths[k], c.detail_widths[k]);
        prev = c.detail_widths[k];
    }
    add_block(m, "out.a", prev + 4, prev);
    m.push_back({"out.b.weight", {1, prev, 3, 3}});
    m.push_back({"out.b.bias", {1}});
    return m;
}

std::size_t HeadParameters::count() const
{
    std::size_t n = 0;
    for (const auto& [name, t] : tensors)
        n += t.size();
    return n;
}

void HeadParameters::validate() const
{
    const auto manifest = parameter_manifest(config);
    if (manifest.size() != tensors.size())
        throw ParameterError("parameter set has " + std::to_string(tensors.size()) + " tensors, manifest expects " +
                             std::to_string(manifest.size()));
    for (const auto& p : manifest) {
        auto it = tensors.find(p.name);
        if (it == tensors.end())
            throw ParameterError("missing parameter " + p.name);
        if (it->second.shape() != p.shape)
            throw ParameterError("parameter " + p.name + " has shape " + it->second.shape_string());
        for (double v : it->second.values())
            if (!std::isfinite(v))
                throw ParameterError("parameter " + p.name + " holds a non-finite value");
    }
}

std::uint64_t HeadParameters::digest() const
{
    const auto bytes = encode_params(*this);
    return fnv1a(bytes.data(), bytes.size());
}

HeadParameters init_params(const HeadConfig& config, std::uint64_t seed)
{
    HeadParameters p;
    p.config = config;
    p.config.seed = seed;
    std::mt19937_64 rng(seed);
    for (const auto& entry : parameter_manifest(config)) {
        Tensor t(entry.shape, 0.0);
        const auto& n = entry.name;
        if (n.ends_with(".weight")) {
            const int fan_in = entry.shape[1] * entry.shape[2] * entry.shape[3];
            std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
            for (double& v : t.values())
                v = normal(rng);
        } else if (n.ends_with(".gamma")) {
            std::fill(t.values().begin(), t.values().end(), 1.0);
        }
        p.tensors.emplace(n, std::move(t));
    }
    return p;
}

std::vector<unsigned char> encode_params(const HeadParameters& params)
{
    Archive a;
    a.version = params.version;
    a.meta = {{"config", params.config.to_json()}};
    a.arrays = params.tensors;
    return encode_archive(a);
}

HeadParameters decode_params(const std::vector<unsigned char>& bytes)
{
    const Archive a = decode_archive(bytes);
    if (a.version != kHeadVersion)
        throw ParameterError("unsupported head checkpoint version '" + a.version + "'");
    HeadParameters p;
    p.version = a.version;
    try {
        p.config = HeadConfig::from_json(a.meta.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("malformed head config: ") + e.what());
    }
    p.tensors = a.arrays;
    p.validate();
    return p;
}

void save_params(const std::filesystem::path& path, const HeadParameters& params)
{
    io::write_bytes(path, encode_params(params));
}

HeadParameters load_params(const std::filesystem::path& path)
{
    return decode_params(io::read_bytes(path));
}

// --------------------------------------------------------------------------

namespace {

struct Builder {
    ad::Graph& g;
    HeadGraph& hg;
    const HeadConfig& cfg;

    ad::Var block(ad::Var x, const std::string& name, int stride = 1)
    {
        const ad::Var w = hg.params.at(name + ".weight");
        const ad::Var b = hg.params.at(name + ".bias");
        const ad::Var y = g.conv2d(x, w, b, {stride, 1});
        const int width = g.value(y).channels();
        const ad::Var n = g.group_norm(y, hg.params.at(name + ".gn.gamma"), hg.params.at(name + ".gn.beta"),
                                       groups_for(width, cfg.max_groups));
        return g.relu(n);
    }
};

} // namespace

HeadGraph build_head(ad::Graph& graph, const HeadInputs& in, const HeadParameters& params, bool train_params,
                     bool train_guidance)
{
    const HeadConfig& cfg = params.config;
    const std::size_t L = cfg.feature_dims.size();
    if (in.image.rank() != 3 || in.image.channels() != 3)
        throw DimensionError("head image input must be (3, H, W)");
    if (in.features.size() != L || in.guidance.size() != L)
        throw DimensionError("head expects " + std::to_string(L) + " feature scales and guidance maps");
    for (std::size_t l = 0; l < L; ++l) {
        const Tensor& f = in.features[l];
        const Tensor& s = in.guidance[l];
        if (f.rank() != 3 || f.channels() != cfg.feature_dims[l])
            throw DimensionError("feature scale " + std::to_string(l) + " has shape " + f.shape_string() +
                                 ", head expects " + std::to_string(cfg.feature_dims[l]) + " channels");
        if (s.rank() != 3 || s.channels() != 1 || s.height() != f.height() || s.width() != f.width())
            throw DimensionError("guidance map " + std::to_string(l) + " is not aligned with its feature scale");
    }
    if (in.fused.rank() != 3 || in.fused.channels() != 1)
        throw DimensionError("fused guidance must be (1, h, w)");

    HeadGraph hg;
    for (const auto& [name, t] : params.tensors)
        hg.params[name] = graph.input(t, train_params);
    Builder b{graph, hg, cfg};

    const int H = in.image.height(), W = in.image.width();
    hg.image = graph.input(in.image);
    hg.fused = graph.input(in.fused, train_guidance);
    const ad::Var fused_full = graph.resize(hg.fused, H, W);

    ad::Var x = -1;
    for (std::size_t l = 0; l < L; ++l) {
        const ad::Var feat = graph.input(in.features[l]);
        const ad::Var guide = graph.input(in.guidance[l], train_guidance);
        hg.guidance.push_back(guide);
        const std::string p = "fuse" + std::to_string(l);
        ad::Var f = b.block(graph.concat({feat, guide}), p + ".a");
        f = b.block(f, p + ".b");
        if (x < 0) {
            x = f;
        } else {
            const Tensor& fv = graph.value(f);
            const ad::Var up = graph.resize(x, fv.height(), fv.width());
            x = b.block(graph.concat({up, f}), "merge" + std::to_string(l));
        }
    }

    const std::size_t K = cfg.detail_widths.size();
    const ad::Var raw = graph.concat({hg.image, fused_full});
    std::vector<ad::Var> stream;
    ad::Var s = raw;
    for (std::size_t k = 0; k < K; ++k) {
        s = b.block(s, "detail.stream" + std::to_string(k + 1), 2);
        stream.push_back(s);
    }
    for (std::size_t k = K; k-- > 0;) {
        const Tensor& dv = graph.value(stream[k]);
        const ad::Var up = graph.resize(x, dv.height(), dv.width());
        x = b.block(graph.concat({up, stream[k]}), "detail.fuse" + std::to_string(k + 1));
    }
    const ad::Var up = graph.resize(x, H, W);
    x = b.block(graph.concat({up, raw}), "out.a");
    const ad::Var logit = graph.conv2d(x, hg.params.at("out.b.weight"), hg.params.at("out.b.bias"), {1, 1});
    hg.alpha = graph.sigmoid(logit);
    return hg;
}

AlphaMatte head_forward(const HeadInputs& inputs, const HeadParameters& params)
{
    params.validate();
    ad::Graph graph;
    const HeadGraph hg = build_head(graph, inputs, params, false);
    return AlphaMatte(to_plane(graph.value(hg.alpha)));
}

} // namespace icm
