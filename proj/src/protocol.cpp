#include "icm/protocol.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <sstream>

#include "icm/backend.hpp"
#include "icm/image_io.hpp"
#include "icm/morphology.hpp"
#include "icm/pipeline.hpp"

namespace icm {

ImagePlane load_label(const std::filesystem::path& path)
{
    ImagePlane p = io::read_png(path);
    return p.channels() == 1 ? p : p.channel(0);
}

ImagePlane ManifestSource::image(const ContextGroup& group, int member) const
{
    return io::read_rgb(manifest_.resolve(group.members.at(static_cast<std::size_t>(member)).image));
}

std::optional<ImagePlane> ManifestSource::label(const ContextGroup& group, int member) const
{
    const auto& m = group.members.at(static_cast<std::size_t>(member));
    if (m.label.empty())
        return std::nullopt;
    const auto path = manifest_.resolve(m.label);
    if (!std::filesystem::exists(path))
        return std::nullopt;
    ImagePlane l = load_label(path);
    check_label(group, l, m.label);
    return l;
}

std::vector<AlphaMatte> PipelineModel::predict(const ProtocolCase& c)
{
    MattingRequest req{c.targets, c.references};
    std::vector<AlphaMatte> out;
    for (auto& r : pipeline_.infer(req))
        out.push_back(std::move(r.alpha));
    return out;
}

std::vector<AlphaMatte> OracleModel::predict(const ProtocolCase& c)
{
    std::vector<AlphaMatte> out;
    for (int m : c.target_indices) {
        auto l = source_.label(*c.group, m);
        if (!l)
            throw ValueError("oracle model: no label for member " + std::to_string(m));
        out.emplace_back(*l);
    }
    return out;
}

std::vector<Point> sample_points(const ImagePlane& mask, int n, std::mt19937_64& rng)
{
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < mask.pixels(); ++i)
        if (mask.data()[i] != 0.0)
            fg.push_back(i);
    // Partial Fisher-Yates with explicit index draws.
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(n, 0)), fg.size());
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, fg.size() - 1);
        std::swap(fg[i], fg[pick(rng)]);
    }
    std::vector<Point> pts;
    for (std::size_t i = 0; i < k; ++i)
        pts.push_back({static_cast<double>(fg[i] / static_cast<std::size_t>(mask.width())),
                       static_cast<double>(fg[i] % static_cast<std::size_t>(mask.width()))});
    return pts;
}

Polyline sample_scribble(const ImagePlane& mask, std::mt19937_64& rng)
{
    const int H = mask.height(), W = mask.width();
    std::vector<std::uint8_t> bg(mask.pixels());
    for (std::size_t i = 0; i < bg.size(); ++i)
        bg[i] = mask.data()[i] == 0.0 ? 1 : 0;
    auto depth = squared_distance_transform(bg, H, W);
    std::int64_t max_depth = 0;
    for (std::size_t i = 0; i < depth.size(); ++i)
        if (!bg[i])
            max_depth = std::max(max_depth, std::min(depth[i], std::int64_t{1} << 40));
    if (max_depth == 0)
        return {};
    std::vector<int> deep;
    for (std::size_t i = 0; i < depth.size(); ++i)
        if (!bg[i] && 4 * std::min(depth[i], std::int64_t{1} << 40) >= max_depth)
            deep.push_back(static_cast<int>(i));
    std::uniform_int_distribution<std::size_t> pick(0, deep.size() - 1);
    const int start = deep[pick(rng)];

    std::vector<int> parent(mask.pixels(), -2);
    std::vector<int> dist(mask.pixels(), -1);
    std::deque<int> queue{start};
    parent[static_cast<std::size_t>(start)] = -1;
    dist[static_cast<std::size_t>(start)] = 0;
    while (!queue.empty()) {
        const int p = queue.front();
        queue.pop_front();
        const int y = p / W, x = p % W;
        const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (const auto& n : nb) {
            if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W)
                continue;
            const int q = n[0] * W + n[1];
            if (bg[static_cast<std::size_t>(q)] || dist[static_cast<std::size_t>(q)] >= 0)
                continue;
            dist[static_cast<std::size_t>(q)] = dist[static_cast<std::size_t>(p)] + 1;
            parent[static_cast<std::size_t>(q)] = p;
            queue.push_back(q);
        }
    }
    int end = start;
    for (int d : deep)
        if (dist[static_cast<std::size_t>(d)] > dist[static_cast<std::size_t>(end)])
            end = d;

    std::vector<int> path;
    for (int p = end; p != -1; p = parent[static_cast<std::size_t>(p)])
        path.push_back(p);
    std::reverse(path.begin(), path.end());
    Polyline line;
    for (std::size_t i = 0; i < path.size(); ++i)
        if (i % 4 == 0 || i + 1 == path.size())
            line.push_back({static_cast<double>(path[i] / W), static_cast<double>(path[i] % W)});
    return line;
}

RoiPrompt derive_prompt(const ImagePlane& label, PromptKind kind, int points, double stroke_radius,
                        std::mt19937_64& rng)
{
    const ImagePlane mask = binarize(label, 0.5);
    switch (kind) {
    case PromptKind::mask:
        return RoiPrompt::from_mask(mask);
    case PromptKind::points:
        return RoiPrompt::from_points(sample_points(mask, points, rng));
    case PromptKind::scribbles: {
        Polyline line = sample_scribble(mask, rng);
        if (line.empty())
            return RoiPrompt::from_scribbles({}, stroke_radius);
        return RoiPrompt::from_scribbles({std::move(line)}, stroke_radius);
    }
    }
    throw ValueError("unknown prompt kind");
}

namespace {

ImageMetrics mean_of(const std::vector<const ImageMetrics*>& ms)
{
    ImageMetrics out;
    if (ms.empty())
        return out;
    for (const auto* m : ms) {
        out.mse += m->mse;
        out.sad += m->sad;
        out.grad += m->grad;
        out.conn += m->conn;
    }
    const double n = static_cast<double>(ms.size());
    out.mse /= n;
    out.sad /= n;
    out.grad /= n;
    out.conn /= n;
    return out;
}

void summarize(MetricReport& r)
{
    std::map<std::string, std::vector<const ImageMetrics*>> per_group;
    std::vector<const ImageMetrics*> all;
    for (const auto& rec : r.images) {
        per_group[rec.group].push_back(&rec.metrics);
        all.push_back(&rec.metrics);
    }
    r.group_means.clear();
    for (const auto& [g, ms] : per_group)
        r.group_means[g] = mean_of(ms);
    r.overall = mean_of(all);
}

nlohmann::json metrics_json(const ImageMetrics& m)
{
    return {{"mse", m.mse}, {"sad", m.sad}, {"grad", m.grad}, {"conn", m.conn}};
}

std::uint64_t group_salt(const std::string& id)
{
    return fnv1a(id.data(), id.size());
}

} // namespace

nlohmann::json MetricReport::to_json() const
{
    nlohmann::json images_j = nlohmann::json::array();
    for (const auto& r : images) {
        auto j = metrics_json(r.metrics);
        j["group"] = r.group;
        j["member"] = r.member;
        j["image"] = r.image;
        j["conn_fallback"] = r.metrics.conn_fallback;
        images_j.push_back(std::move(j));
    }
    nlohmann::json groups_j = nlohmann::json::object();
    for (const auto& [g, m] : group_means)
        groups_j[g] = metrics_json(m);
    return {{"round", round},
            {"prompt_kind", icm::to_string(prompt_kind)},
            {"seed", seed},
            {"references", references},
            {"mse_display_scale", 1.0},
            {"images", images_j},
            {"groups", groups_j},
            {"overall", metrics_json(overall)}};
}

std::string MetricReport::to_csv() const
{
    std::ostringstream out;
    out.precision(17);
    out << "round,group,member,image,mse,sad,grad,conn\n";
    for (const auto& r : images)
        out << round << ',' << r.group << ',' << r.member << ',' << r.image << ',' << r.metrics.mse << ','
            << r.metrics.sad << ',' << r.metrics.grad << ',' << r.metrics.conn << '\n';
    return out.str();
}

ProtocolResult run_protocol(MattingModel& model, const ImageSource& source, const std::vector<ContextGroup>& groups,
                            const ProtocolOptions& options, const PredictionSink& sink)
{
    if (options.rounds < 1)
        throw ConfigError("protocol needs at least one round");
    for (const auto& g : groups)
        if (g.reference_indices.empty())
            throw ConfigError("group '" + g.id + "' has no designated reference");

    ProtocolResult result;
    for (int round = 0; round < options.rounds; ++round) {
        MetricReport report;
        report.round = round;
        report.prompt_kind = options.kind;
        report.seed = options.seed;
        for (const auto& g : groups) {
            std::vector<std::optional<ImagePlane>> labels;
            bool complete = true;
            for (int m = 0; m < static_cast<int>(g.members.size()); ++m) {
                labels.push_back(source.label(g, m));
                complete = complete && labels.back().has_value();
            }
            if (!complete) {
                if (round == 0)
                    result.warnings.push_back("group '" + g.id + "' has missing labels; skipped");
                continue;
            }

            const std::uint64_t a = options.seed + static_cast<std::uint64_t>(round);
            const std::uint64_t b = group_salt(g.id);
            std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                              static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
            std::mt19937_64 rng(seq);

            ProtocolCase c;
            c.group = &g;
            c.reference_indices = g.reference_indices;
            for (int r : g.reference_indices)
                c.references.push_back({source.image(g, r),
                                        derive_prompt(*labels[static_cast<std::size_t>(r)], options.kind,
                                                      options.points, options.stroke_radius, rng)});
            for (int m = 0; m < static_cast<int>(g.members.size()); ++m) {
                const bool is_ref = std::find(g.reference_indices.begin(), g.reference_indices.end(), m) !=
                                    g.reference_indices.end();
                if (is_ref && !options.include_references)
                    continue;
                c.target_indices.push_back(m);
                c.targets.push_back(source.image(g, m));
            }
            report.references[g.id] = g.reference_indices;
            if (c.targets.empty())
                continue;

            const auto preds = model.predict(c);
            if (preds.size() != c.targets.size())
                throw ValueError("model returned " + std::to_string(preds.size()) + " mattes for " +
                                 std::to_string(c.targets.size()) + " targets");
            for (std::size_t i = 0; i < preds.size(); ++i) {
                const int m = c.target_indices[i];
                if (sink)
                    sink(round, g, m, preds[i]);
                const AlphaMatte gt(*labels[static_cast<std::size_t>(m)]);
                report.images.push_back(
                    {g.id, m, g.members[static_cast<std::size_t>(m)].image, evaluate_matte(preds[i], gt)});
            }
        }
        summarize(report);
        result.rounds.push_back(std::move(report));
    }

    MetricReport avg = result.rounds.front();
    avg.round = -1;
    for (std::size_t i = 0; i < avg.images.size(); ++i) {
        std::vector<const ImageMetrics*> ms;
        for (const auto& r : result.rounds)
            ms.push_back(&r.images[i].metrics);
        const bool fallback = avg.images[i].metrics.conn_fallback;
        avg.images[i].metrics = mean_of(ms);
        avg.images[i].metrics.conn_fallback = fallback;
    }
    summarize(avg);
    result.average = std::move(avg);
    return result;
}

} // namespace icm
