#include "cdgan/operators.hpp"

#include <cmath>

namespace cdgan {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> as_matrix(const HyperImage& img) {
    return {img.data().data(), static_cast<Eigen::Index>(img.bands()), static_cast<Eigen::Index>(img.pixels())};
}

Eigen::Map<RowMajor> as_matrix(HyperImage& img) {
    return {img.data().data(), static_cast<Eigen::Index>(img.bands()), static_cast<Eigen::Index>(img.pixels())};
}

} // namespace

std::size_t reflect_index(long i, std::size_t n) {
    const long period = 2 * static_cast<long>(n);
    long k = i % period;
    if (k < 0) k += period;
    return static_cast<std::size_t>(k < static_cast<long>(n) ? k : period - 1 - k);
}

SpatialOp::SpatialOp(double blur_sigma, std::size_t subsample_factor, int kernel_radius)
    : sigma_(blur_sigma), factor_(subsample_factor) {
    if (!(blur_sigma > 0.0)) throw ConfigError("SpatialOp: blur_sigma must be positive");
    if (subsample_factor == 0) throw ConfigError("SpatialOp: subsample_factor must be >= 1");
    radius_ = kernel_radius < 0 ? static_cast<std::size_t>(std::ceil(4.0 * blur_sigma))
                                : static_cast<std::size_t>(kernel_radius);
    taps_.resize(2 * radius_ + 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < taps_.size(); ++i) {
        const double x = static_cast<double>(i) - static_cast<double>(radius_);
        taps_[i] = std::exp(-x * x / (2.0 * sigma_ * sigma_));
        sum += taps_[i];
    }
    for (double& t : taps_) t /= sum;
}

Shape SpatialOp::output_shape(const Shape& in) const {
    if (in.rows % factor_ != 0)
        throw ShapeError("apply_spatial: rows (" + std::to_string(in.rows) + ") not divisible by subsample factor " +
                         std::to_string(factor_));
    if (in.cols % factor_ != 0)
        throw ShapeError("apply_spatial: cols (" + std::to_string(in.cols) + ") not divisible by subsample factor " +
                         std::to_string(factor_));
    return {in.bands, in.rows / factor_, in.cols / factor_};
}

Shape SpatialOp::input_shape(const Shape& out) const { return {out.bands, out.rows * factor_, out.cols * factor_}; }

// One axis of H1: row o holds the reflected, truncated Gaussian centred on
// input index o*factor. H1 applied to a band X is then D_r X D_c^T.
Eigen::MatrixXd SpatialOp::axis_matrix(std::size_t n) const {
    const std::size_t m = n / factor_;
    const long r = static_cast<long>(radius_);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t o = 0; o < m; ++o) {
        const long c0 = static_cast<long>(o * factor_);
        for (long t = -r; t <= r; ++t)
            d(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(reflect_index(c0 + t, n))) += taps_[t + r];
    }
    return d;
}

HyperImage SpatialOp::apply(const HyperImage& x) const {
    const Shape out = output_shape(x.shape());
    const Eigen::MatrixXd dr = axis_matrix(x.rows()), dc = axis_matrix(x.cols());
    HyperImage y(out);
    // Column pass over all bands at once: (bands*rows x cols) * dc^T.
    const RowMajor tmp = Eigen::Map<const RowMajor>(x.data().data(), static_cast<Eigen::Index>(x.bands() * x.rows()),
                                                    static_cast<Eigen::Index>(x.cols())) *
                         dc.transpose();
    const auto rows = static_cast<Eigen::Index>(x.rows());
    for (std::size_t b = 0; b < x.bands(); ++b)
        Eigen::Map<RowMajor>(y.band(b).data(), static_cast<Eigen::Index>(out.rows), static_cast<Eigen::Index>(out.cols))
            .noalias() = dr * tmp.middleRows(static_cast<Eigen::Index>(b) * rows, rows);
    return y;
}

HyperImage SpatialOp::adjoint(const HyperImage& y) const {
    const Shape in = input_shape(y.shape());
    const Eigen::MatrixXd dr = axis_matrix(in.rows), dc = axis_matrix(in.cols);
    HyperImage x(in);
    const RowMajor tmp = Eigen::Map<const RowMajor>(y.data().data(), static_cast<Eigen::Index>(y.bands() * y.rows()),
                                                    static_cast<Eigen::Index>(y.cols())) *
                         dc;
    const auto rows = static_cast<Eigen::Index>(y.rows());
    for (std::size_t b = 0; b < y.bands(); ++b)
        Eigen::Map<RowMajor>(x.band(b).data(), static_cast<Eigen::Index>(in.rows), static_cast<Eigen::Index>(in.cols))
            .noalias() = dr.transpose() * tmp.middleRows(static_cast<Eigen::Index>(b) * rows, rows);
    return x;
}

SpectralOp::SpectralOp(Eigen::MatrixXd response) : response_(std::move(response)) {
    if (response_.rows() == 0 || response_.cols() == 0) throw ConfigError("SpectralOp: empty response");
    if (!response_.allFinite()) throw ConfigError("SpectralOp: non-finite response");
}

SpectralOp SpectralOp::band_average(std::size_t bands, std::size_t width) {
    if (width == 0 || bands < width)
        throw ConfigError("band_average: need width >= 1 and at least `width` bands (bands=" + std::to_string(bands) +
                          ", width=" + std::to_string(width) + ")");
    const std::size_t out = bands / width;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(bands));
    for (std::size_t j = 0; j < out; ++j)
        for (std::size_t k = 0; k < width; ++k)
            L(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j * width + k)) = 1.0 / static_cast<double>(width);
    return SpectralOp(std::move(L));
}

SpectralOp SpectralOp::identity(std::size_t bands) {
    return SpectralOp(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(bands), static_cast<Eigen::Index>(bands)));
}

HyperImage SpectralOp::apply(const HyperImage& x) const {
    if (x.bands() != in_bands())
        throw ShapeError("apply_spectral: image has " + std::to_string(x.bands()) + " bands, response expects " +
                         std::to_string(in_bands()));
    HyperImage y(out_bands(), x.rows(), x.cols());
    as_matrix(y).noalias() = response_ * as_matrix(x);
    return y;
}

HyperImage SpectralOp::adjoint(const HyperImage& y) const {
    if (y.bands() != out_bands())
        throw ShapeError("adjoint_spectral: image has " + std::to_string(y.bands()) + " bands, response produces " +
                         std::to_string(out_bands()));
    HyperImage x(in_bands(), y.rows(), y.cols());
    as_matrix(x).noalias() = response_.transpose() * as_matrix(y);
    return x;
}

HyperImage apply_spatial(const SpatialOp& op, const HyperImage& x) { return op.apply(x); }
HyperImage apply_spectral(const SpectralOp& op, const HyperImage& x) { return op.apply(x); }
HyperImage adjoint_spatial(const SpatialOp& op, const HyperImage& y) { return op.adjoint(y); }
HyperImage adjoint_spectral(const SpectralOp& op, const HyperImage& y) { return op.adjoint(y); }

DegradationPair corrupt_operators(const DegradationPair& ops, double blur_sigma, double snr_db, Rng& rng) {
    if (std::isnan(snr_db)) throw ConfigError("corrupt_operators: snr_db must not be NaN");
    DegradationPair out{SpatialOp(blur_sigma, ops.spatial.subsample_factor()), ops.spectral};
    if (std::isinf(snr_db) && snr_db > 0) return out;
    const Eigen::MatrixXd& L = ops.spectral.response();
    const double signal = L.squaredNorm();
    const double variance = signal / (static_cast<double>(L.size()) * std::pow(10.0, snr_db / 10.0));
    const double sd = std::sqrt(variance);
    Eigen::MatrixXd noisy = L;
    for (Eigen::Index j = 0; j < noisy.cols(); ++j)
        for (Eigen::Index i = 0; i < noisy.rows(); ++i) noisy(i, j) += sd * rng.normal();
    out.spectral = SpectralOp(std::move(noisy));
    return out;
}

} // namespace cdgan
