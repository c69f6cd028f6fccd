#pragma once

#include <vector>

#include "icm/core.hpp"

namespace icm {

inline constexpr double kGradSigma = 1.4;
inline constexpr double kConnStep = 0.1;
inline constexpr double kConnTolerance = 0.15;

/// Raw mean squared error.
double mse(const AlphaMatte& pred, const AlphaMatte& gt);
/// Sum of absolute differences / 1000.
double sad(const AlphaMatte& pred, const AlphaMatte& gt);
/// Gaussian-derivative gradient error / 1000. Throws DimensionError for
/// images smaller than the 13 x 13 filter.
double grad_metric(const AlphaMatte& pred, const AlphaMatte& gt);

struct ConnResult {
    double value = 0;
    bool fell_back_to_sad = false;
};
/// Connectivity error / 1000. Falls back to SAD when pred and gt share no
/// foreground at any threshold.
ConnResult conn_metric_detail(const AlphaMatte& pred, const AlphaMatte& gt);
double conn_metric(const AlphaMatte& pred, const AlphaMatte& gt);

/// Normalized 2-D Gaussian-derivative kernel along columns (x), (2h+1)^2
/// with h = ceil(4 sigma), row-major.
std::vector<double> gaussian_derivative_kernel(double sigma, int& halfsize);

struct ImageMetrics {
    double mse = 0;
    double sad = 0;
    double grad = 0;
    double conn = 0;
    bool conn_fallback = false;
};

ImageMetrics evaluate_matte(const AlphaMatte& pred, const AlphaMatte& gt);

} // namespace icm
