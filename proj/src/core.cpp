#include "cdgan/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cdgan {

std::string to_string(const Shape& s) {
    return std::to_string(s.bands) + "x" + std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

HyperImage::HyperImage(std::size_t bands, std::size_t rows, std::size_t cols, double fill)
    : shape_{bands, rows, cols}, data_(bands * rows * cols, fill) {}

HyperImage::HyperImage(Shape s, std::vector<double> data) : shape_(s), data_(std::move(data)) {
    if (data_.size() != s.size())
        throw ShapeError("HyperImage: data length " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(s));
}

std::vector<double> HyperImage::pixel_column(std::size_t p) const {
    std::vector<double> v(bands());
    for (std::size_t b = 0; b < bands(); ++b) v[b] = at(b, p);
    return v;
}

void HyperImage::set_pixel_column(std::size_t p, std::span<const double> v) {
    if (v.size() != bands()) throw ShapeError("set_pixel_column: band count mismatch");
    for (std::size_t b = 0; b < bands(); ++b) at(b, p) = v[b];
}

bool HyperImage::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool HyperImage::all_nonnegative() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0; });
}

void require_same_shape(const HyperImage& a, const HyperImage& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

HyperImage& HyperImage::operator+=(const HyperImage& o) {
    require_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

HyperImage& HyperImage::operator-=(const HyperImage& o) {
    require_same_shape(*this, o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

HyperImage& HyperImage::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

HyperImage operator+(HyperImage a, const HyperImage& b) { return a += b; }
HyperImage operator-(HyperImage a, const HyperImage& b) { return a -= b; }
HyperImage operator*(HyperImage a, double s) { return a *= s; }
HyperImage operator*(double s, HyperImage a) { return a *= s; }

HyperImage image_sub(const HyperImage& a, const HyperImage& b) {
    require_same_shape(a, b, "image_sub");
    return a - b;
}

double frobenius_norm(const HyperImage& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double group21_norm(const HyperImage& a) {
    std::vector<double> sq(a.pixels(), 0.0);
    for (std::size_t b = 0; b < a.bands(); ++b) {
        auto plane = a.band(b);
        for (std::size_t p = 0; p < a.pixels(); ++p) sq[p] += plane[p] * plane[p];
    }
    double s = 0.0;
    for (double v : sq) s += std::sqrt(v);
    return s;
}

double dot(const HyperImage& a, const HyperImage& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

BinaryMap::BinaryMap(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw ShapeError("BinaryMap: data length does not match rows*cols");
    for (auto v : data_)
        if (v > 1) throw ShapeError("BinaryMap: entries must be 0 or 1");
}

std::size_t BinaryMap::count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw Error("Rng::index: empty range");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined state
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace cdgan
