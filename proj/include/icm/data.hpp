#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/core.hpp"

namespace icm {

inline const char* const kManifestVersion = "icm-manifest/1";

enum class Split { train, test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

/// Dataset description. Member paths are relative to `root`, which is the
/// directory holding the manifest file (not serialized).
struct Manifest {
    std::string version = kManifestVersion;
    Split split = Split::test;
    std::vector<ContextGroup> groups;
    std::filesystem::path root;

    std::size_t image_count() const;
    std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
    const ContextGroup& group(const std::string& id) const;

    /// Throws ConfigError on duplicate ids or bad reference indices.
    void validate() const;

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j, std::filesystem::path root = {});
    std::string serialize() const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct IngestResult {
    Manifest manifest;
    std::vector<std::string> warnings;
};

/// One group per subdirectory of `root`, laid out as
/// <group>/{images,labels}/<stem>.png plus an optional <group>/meta.json with
/// {kind, category, reference_indices}. Groups and members sorted by name.
IngestResult ingest_tree(const std::filesystem::path& root, Split split = Split::test);

struct InstanceAnnotation {
    std::string image; // path, relative to the eventual manifest root
    ImagePlane mask;   // binary, one instance
    std::string category;
};

struct AggregateResult {
    Manifest manifest;
    /// Union label per (image, category), keyed like the member label paths.
    std::map<std::string, ImagePlane> labels;
};

/// Unions instance masks per (image, category); one segmentation group per
/// category. Labels are named "labels/<category>/<image stem>.png".
AggregateResult aggregate_by_category(const std::vector<InstanceAnnotation>& annotations,
                                      Split split = Split::train);

/// Label content checks that need pixels: single channel for matting,
/// binary for segmentation. Throws ConfigError.
void check_label(const ContextGroup& group, const ImagePlane& label, const std::string& path);

} // namespace icm
