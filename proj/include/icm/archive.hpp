#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/tensor.hpp"

namespace icm {

/// Container of named real arrays plus a JSON manifest and a version tag.
///
/// Layout: 8-byte magic "ICMARR\0\1", little-endian u64 header length, the
/// header as compact JSON ({"arrays":[{name,offset,shape}...],"meta":..,
/// "version":..}), then every array as little-endian float64 in name order.
/// Encoding is canonical, so decode followed by encode reproduces the bytes.
struct Archive {
    std::string version;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> arrays;

    const Tensor& get(const std::string& name) const;
};

std::vector<unsigned char> encode_archive(const Archive& archive);
Archive decode_archive(const std::vector<unsigned char>& bytes);

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

} // namespace icm
