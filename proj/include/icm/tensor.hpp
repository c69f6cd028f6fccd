#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "icm/core.hpp"

namespace icm {

/// Dense row-major real tensor. Rasters are stored channel-major (C, H, W);
/// matrices as (rows, cols).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(element_count(shape_), fill)
    {
    }
    Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (data_.size() != element_count(shape_))
            throw DimensionError("tensor data does not match shape " + shape_string());
    }

    static Tensor chw(int c, int h, int w, double fill = 0.0) { return Tensor({c, h, w}, fill); }
    static Tensor matrix(int rows, int cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // (C, H, W) accessors; valid only for rank-3 tensors.
    int channels() const { return shape_[0]; }
    int height() const { return shape_[1]; }
    int width() const { return shape_[2]; }
    std::size_t plane_size() const { return static_cast<std::size_t>(shape_[1]) * shape_[2]; }

    // (rows, cols) accessors; valid only for rank-2 tensors.
    int rows() const { return shape_[0]; }
    int cols() const { return shape_[1]; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
    double at(int c, int y, int x) const
    {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    std::span<const double> row(int r) const
    {
        return std::span<const double>(data_).subspan(static_cast<std::size_t>(r) * shape_[1],
                                                      static_cast<std::size_t>(shape_[1]));
    }

    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

    std::string shape_string() const
    {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? ", " : "") + std::to_string(shape_[i]);
        return s + ")";
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::size_t element_count(const std::vector<int>& shape)
    {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0)
                throw DimensionError("negative tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

/// Converts an interleaved image plane to a (C, H, W) tensor.
Tensor to_tensor(const ImagePlane& plane);

/// Converts a (1, H, W) or (3, H, W) tensor back, clamping into [0,1].
ImagePlane to_plane(const Tensor& t);

} // namespace icm
