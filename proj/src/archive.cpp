#include "icm/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "icm/image_io.hpp"

namespace icm {

static_assert(std::endian::native == std::endian::little, "archive encoding assumes a little-endian host");

namespace {

constexpr unsigned char kMagic[8] = {'I', 'C', 'M', 'A', 'R', 'R', 0, 1};

} // namespace

const Tensor& Archive::get(const std::string& name) const
{
    auto it = arrays.find(name);
    if (it == arrays.end())
        throw IoError("archive has no array named '" + name + "'");
    return it->second;
}

std::vector<unsigned char> encode_archive(const Archive& archive)
{
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : archive.arrays) {
        index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    const nlohmann::json header = {{"version", archive.version}, {"meta", archive.meta}, {"arrays", index}};
    const std::string text = header.dump();

    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    const std::uint64_t len = text.size();
    out.resize(out.size() + sizeof(len));
    std::memcpy(out.data() + 8, &len, sizeof(len));
    out.insert(out.end(), text.begin(), text.end());

    const std::size_t base = out.size();
    out.resize(base + offset * sizeof(double));
    std::size_t pos = base;
    for (const auto& [name, t] : archive.arrays) {
        std::memcpy(out.data() + pos, t.storage().data(), t.size() * sizeof(double));
        pos += t.size() * sizeof(double);
    }
    return out;
}

Archive decode_archive(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw IoError("not an array archive (bad magic)");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, sizeof(len));
    if (16 + len > bytes.size())
        throw IoError("array archive header is truncated");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("array archive header is not valid JSON: ") + e.what());
    }

    Archive archive;
    archive.version = header.at("version").get<std::string>();
    archive.meta = header.at("meta");
    const std::size_t base = 16 + len;
    for (const auto& entry : header.at("arrays")) {
        const auto shape = entry.at("shape").get<std::vector<int>>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const std::size_t count = Tensor::element_count(shape);
        if (base + (offset + count) * sizeof(double) > bytes.size())
            throw IoError("array archive payload is truncated");
        std::vector<double> data(count);
        std::memcpy(data.data(), bytes.data() + base + offset * sizeof(double), count * sizeof(double));
        archive.arrays.emplace(entry.at("name").get<std::string>(), Tensor(shape, std::move(data)));
    }
    return archive;
}

void save_archive(const std::filesystem::path& path, const Archive& archive)
{
    io::write_bytes(path, encode_archive(archive));
}

Archive load_archive(const std::filesystem::path& path)
{
    return decode_archive(io::read_bytes(path));
}

} // namespace icm
