#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "cdgan/core.hpp"

namespace cdgan {

/// Spatially invariant Gaussian blur followed by regular decimation (H1).
/// Boundary handling is half-sample symmetric reflection; decimation keeps
/// pixels at offset 0, d, 2d, ... in both directions.
class SpatialOp {
public:
    SpatialOp() : SpatialOp(2.35, 4) {}
    /// radius < 0 selects the default truncation ceil(4 sigma).
    SpatialOp(double blur_sigma, std::size_t subsample_factor, int kernel_radius = -1);

    double blur_sigma() const { return sigma_; }
    std::size_t kernel_radius() const { return radius_; }
    std::size_t subsample_factor() const { return factor_; }
    /// Normalized 1-D taps, length 2*radius+1. The 2-D kernel is the outer product.
    const std::vector<double>& kernel() const { return taps_; }

    Shape output_shape(const Shape& in) const;
    Shape input_shape(const Shape& out) const;

    HyperImage apply(const HyperImage& x) const;
    HyperImage adjoint(const HyperImage& y) const;

    /// Blur-and-decimate matrix of one axis of length n, size (n/d) x n.
    Eigen::MatrixXd axis_matrix(std::size_t n) const;

private:
    double sigma_;
    std::size_t factor_;
    std::size_t radius_;
    std::vector<double> taps_;
};

/// Per-pixel spectral response (H2): y_p = L x_p with L of size m_out x m_in.
class SpectralOp {
public:
    SpectralOp() = default;
    explicit SpectralOp(Eigen::MatrixXd response);

    /// floor(bands/width) output bands, each the mean of `width` contiguous
    /// input bands; leftover bands are dropped.
    static SpectralOp band_average(std::size_t bands, std::size_t width);
    static SpectralOp identity(std::size_t bands);

    const Eigen::MatrixXd& response() const { return response_; }
    std::size_t in_bands() const { return static_cast<std::size_t>(response_.cols()); }
    std::size_t out_bands() const { return static_cast<std::size_t>(response_.rows()); }

    HyperImage apply(const HyperImage& x) const;
    HyperImage adjoint(const HyperImage& y) const;

private:
    Eigen::MatrixXd response_;
};

struct DegradationPair {
    SpatialOp spatial;
    SpectralOp spectral;
};

HyperImage apply_spatial(const SpatialOp& op, const HyperImage& x);
HyperImage apply_spectral(const SpectralOp& op, const HyperImage& x);
HyperImage adjoint_spatial(const SpatialOp& op, const HyperImage& y);
HyperImage adjoint_spectral(const SpectralOp& op, const HyperImage& y);

/// Half-sample symmetric reflection of index i into [0, n).
std::size_t reflect_index(long i, std::size_t n);

/// Operator-mismatch scenario: replaces the blur width and adds zero-mean
/// Gaussian noise to the spectral response with variance chosen so that
/// 10 log10(||L||_F^2 / E||N||_F^2) = snr_db. snr_db = +inf leaves L untouched.
DegradationPair corrupt_operators(const DegradationPair& ops, double blur_sigma, double snr_db, Rng& rng);

inline constexpr double kNoCorruption = std::numeric_limits<double>::infinity();

} // namespace cdgan
