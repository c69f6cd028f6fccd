#include "icm/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "icm/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace icm {

std::string to_string(Split split)
{
    return split == Split::train ? "train" : "test";
}

Split split_from_string(const std::string& name)
{
    if (name == "train")
        return Split::train;
    if (name == "test")
        return Split::test;
    throw ConfigError("unknown split '" + name + "'");
}

std::size_t Manifest::image_count() const
{
    std::size_t n = 0;
    for (const auto& g : groups)
        n += g.members.size();
    return n;
}

const ContextGroup& Manifest::group(const std::string& id) const
{
    for (const auto& g : groups)
        if (g.id == id)
            return g;
    throw ConfigError("no group '" + id + "' in manifest");
}

void Manifest::validate() const
{
    std::set<std::string> ids;
    for (const auto& g : groups) {
        if (g.id.empty())
            throw ConfigError("group with empty id");
        if (!ids.insert(g.id).second)
            throw ConfigError("duplicate group id '" + g.id + "'");
        for (int r : g.reference_indices)
            if (r < 0 || r >= static_cast<int>(g.members.size()))
                throw ConfigError("group '" + g.id + "' reference index " + std::to_string(r) + " out of range");
    }
}

json Manifest::to_json() const
{
    json gs = json::array();
    for (const auto& g : groups) {
        json members = json::array();
        for (const auto& m : g.members)
            members.push_back({{"image", m.image}, {"label", m.label}});
        json jg = {{"id", g.id},
                   {"kind", icm::to_string(g.kind)},
                   {"members", members},
                   {"reference_indices", g.reference_indices}};
        if (g.category)
            jg["category"] = *g.category;
        gs.push_back(std::move(jg));
    }
    return {{"version", version},
            {"split", icm::to_string(split)},
            {"groups", gs},
            {"stats", {{"groups", groups.size()}, {"images", image_count()}}}};
}

Manifest Manifest::from_json(const json& j, fs::path root)
{
    Manifest m;
    try {
        m.version = j.at("version").get<std::string>();
        if (m.version != kManifestVersion)
            throw ConfigError("unsupported manifest version '" + m.version + "'");
        m.split = split_from_string(j.value("split", std::string("test")));
        for (const auto& jg : j.at("groups")) {
            ContextGroup g;
            g.id = jg.at("id").get<std::string>();
            g.kind = group_kind_from_string(jg.value("kind", std::string("matting")));
            if (jg.contains("category"))
                g.category = jg.at("category").get<std::string>();
            for (const auto& jm : jg.at("members"))
                g.members.push_back({jm.at("image").get<std::string>(), jm.value("label", std::string())});
            g.reference_indices = jg.value("reference_indices", std::vector<int>{});
            m.groups.push_back(std::move(g));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
    m.root = std::move(root);
    m.validate();
    return m;
}

std::string Manifest::serialize() const
{
    return to_json().dump(2) + "\n";
}

Manifest read_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return Manifest::from_json(j, path.parent_path());
}

void write_manifest(const fs::path& path, const Manifest& manifest)
{
    manifest.validate();
    const std::string text = manifest.serialize();
    io::write_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

namespace {

std::map<std::string, fs::path> files_by_stem(const fs::path& dir)
{
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir))
        return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file())
            continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png")
            out[e.path().stem().string()] = e.path();
    }
    return out;
}

} // namespace

IngestResult ingest_tree(const fs::path& root, Split split)
{
    IngestResult result;
    result.manifest.split = split;
    result.manifest.root = root;
    if (!fs::exists(root))
        throw IoError("dataset root " + root.string() + " does not exist");

    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory())
            dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    for (const auto& dir : dirs) {
        ContextGroup g;
        g.id = dir.filename().string();
        const fs::path meta_path = dir / "meta.json";
        if (fs::exists(meta_path)) {
            std::ifstream in(meta_path);
            json meta;
            try {
                in >> meta;
                g.kind = group_kind_from_string(meta.value("kind", std::string("matting")));
                if (meta.contains("category") && !meta["category"].is_null())
                    g.category = meta["category"].get<std::string>();
                g.reference_indices = meta.value("reference_indices", std::vector<int>{});
            } catch (const json::exception& e) {
                throw ConfigError("malformed " + meta_path.string() + ": " + e.what());
            }
        } else {
            result.warnings.push_back("group '" + g.id + "' has no meta.json; assuming matting");
        }

        const auto images = files_by_stem(dir / "images");
        const auto labels = files_by_stem(dir / "labels");
        for (const auto& [stem, image] : images) {
            const auto it = labels.find(stem);
            if (it == labels.end()) {
                if (g.kind == GroupKind::matting)
                    throw ConfigError("matting group '" + g.id + "': image '" + stem + "' has no label");
                result.warnings.push_back("segmentation group '" + g.id + "': skipping unlabeled image '" + stem +
                                          "'");
                continue;
            }
            g.members.push_back({fs::relative(image, root).generic_string(),
                                 fs::relative(it->second, root).generic_string()});
        }
        if (g.members.empty()) {
            result.warnings.push_back("group '" + g.id + "' has no usable images; skipped");
            continue;
        }
        result.manifest.groups.push_back(std::move(g));
    }
    result.manifest.validate();
    return result;
}

AggregateResult aggregate_by_category(const std::vector<InstanceAnnotation>& annotations, Split split)
{
    // category -> image -> union mask
    std::map<std::string, std::map<std::string, std::vector<double>>> unions;
    std::map<std::string, std::pair<int, int>> sizes;
    for (const auto& a : annotations) {
        if (a.mask.channels() != 1 || !is_binary(a.mask))
            throw ValueError("instance mask for '" + a.image + "' is not binary");
        auto [sit, fresh] = sizes.try_emplace(a.image, a.mask.height(), a.mask.width());
        if (!fresh && sit->second != std::pair{a.mask.height(), a.mask.width()})
            throw DimensionError("instance masks for '" + a.image + "' differ in size");
        if (count_nonzero(a.mask) == 0)
            continue;
        auto& u = unions[a.category][a.image];
        if (u.empty())
            u.assign(a.mask.pixels(), 0.0);
        for (std::size_t i = 0; i < u.size(); ++i)
            u[i] = std::max(u[i], a.mask.data()[i]);
    }

    AggregateResult result;
    result.manifest.split = split;
    for (auto& [category, images] : unions) {
        ContextGroup g;
        g.id = category;
        g.kind = GroupKind::segmentation;
        g.category = category;
        for (auto& [image, bits] : images) {
            const auto [h, w] = sizes.at(image);
            const std::string label = "labels/" + category + "/" + fs::path(image).stem().string() + ".png";
            g.members.push_back({image, label});
            result.labels.emplace(label, ImagePlane(h, w, 1, std::move(bits)));
        }
        result.manifest.groups.push_back(std::move(g));
    }
    result.manifest.validate();
    return result;
}

void check_label(const ContextGroup& group, const ImagePlane& label, const std::string& path)
{
    if (label.channels() != 1)
        throw ConfigError("label " + path + " must be single-channel");
    if (group.kind == GroupKind::segmentation && !is_binary(label))
        throw ConfigError("segmentation label " + path + " must be binary");
}

} // namespace icm
