#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/autograd.hpp"
#include "icm/core.hpp"
#include "icm/tensor.hpp"

namespace icm {

/// Architecture of the matting head. Per-scale lists run coarse to fine.
struct HeadConfig {
    std::string profile = "standard";
    std::vector<int> feature_dims = {1280, 640, 320};
    std::vector<int> fusion_widths = {256, 128, 64};
    /// Detail stream stages at 1/2, 1/4, ... of the input resolution.
    std::vector<int> detail_widths = {48, 96, 192};
    int max_groups = 8;
    std::uint64_t seed = 0;

    static HeadConfig standard();
    static HeadConfig toy(int feature_dim = 16);

    void validate() const;
    nlohmann::json to_json() const;
    static HeadConfig from_json(const nlohmann::json& j);
    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

inline const char* const kHeadVersion = "icm-head/1";

struct ParameterShape {
    std::string name;
    std::vector<int> shape;
};

/// Every parameter tensor the configuration implies, in a fixed order.
std::vector<ParameterShape> parameter_manifest(const HeadConfig& config);

struct HeadParameters {
    HeadConfig config;
    std::string version = kHeadVersion;
    std::map<std::string, Tensor> tensors;

    std::size_t count() const;
    /// Throws ParameterError on missing/misshapen/non-finite tensors.
    void validate() const;
    std::uint64_t digest() const;
    friend bool operator==(const HeadParameters&, const HeadParameters&) = default;
};

/// Fan-in scaled normal weights, zero biases, unit norm scales. Deterministic in `seed`.
HeadParameters init_params(const HeadConfig& config, std::uint64_t seed);

std::vector<unsigned char> encode_params(const HeadParameters& params);
HeadParameters decode_params(const std::vector<unsigned char>& bytes);
void save_params(const std::filesystem::path& path, const HeadParameters& params);
HeadParameters load_params(const std::filesystem::path& path);

/// Everything the head consumes for one target, all at backend resolution.
struct HeadInputs {
    Tensor image;                 // (3, H, W)
    std::vector<Tensor> features; // (d_l, h_l, w_l), coarse to fine
    std::vector<Tensor> guidance; // (1, h_l, w_l), aligned with features
    Tensor fused;                 // (1, h_f, w_f)
};

/// Head graph built on a tape, exposing the nodes training and tests need.
struct HeadGraph {
    std::map<std::string, ad::Var> params;
    std::vector<ad::Var> guidance;
    ad::Var fused = -1;
    ad::Var image = -1;
    ad::Var alpha = -1; // (1, H, W)
};

/// Builds the forward graph. Parameters get gradients when `train_params`;
/// guidance inputs when `train_guidance`.
HeadGraph build_head(ad::Graph& graph, const HeadInputs& inputs, const HeadParameters& params,
                     bool train_params, bool train_guidance = false);

/// Alpha at the input image's resolution, squashed into [0,1].
AlphaMatte head_forward(const HeadInputs& inputs, const HeadParameters& params);

} // namespace icm
