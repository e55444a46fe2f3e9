#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdgan {

// Error categories map onto CLI exit codes (config 2, numeric 3, I/O 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
public:
    using Error::Error;
};
class ConfigError : public Error {
public:
    using Error::Error;
};
class NumericError : public Error {
public:
    using Error::Error;
};
class IoError : public Error {
public:
    using Error::Error;
};

struct Shape {
    std::size_t bands = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t pixels() const { return rows * cols; }
    std::size_t size() const { return bands * rows * cols; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Band-major (band-sequential) raster. Entry (b, r, c) lives at
/// b*rows*cols + r*cols + c, so each band plane is contiguous and a pixel's
/// spectral column is strided by rows*cols.
class HyperImage {
public:
    HyperImage() = default;
    HyperImage(std::size_t bands, std::size_t rows, std::size_t cols, double fill = 0.0);
    explicit HyperImage(Shape s, double fill = 0.0) : HyperImage(s.bands, s.rows, s.cols, fill) {}
    HyperImage(Shape s, std::vector<double> data);

    std::size_t bands() const { return shape_.bands; }
    std::size_t rows() const { return shape_.rows; }
    std::size_t cols() const { return shape_.cols; }
    std::size_t pixels() const { return shape_.pixels(); }
    std::size_t size() const { return data_.size(); }
    const Shape& shape() const { return shape_; }

    double& at(std::size_t b, std::size_t r, std::size_t c) { return data_[(b * shape_.rows + r) * shape_.cols + c]; }
    double at(std::size_t b, std::size_t r, std::size_t c) const { return data_[(b * shape_.rows + r) * shape_.cols + c]; }
    // Pixel index p = r*cols + c.
    double& at(std::size_t b, std::size_t p) { return data_[b * pixels() + p]; }
    double at(std::size_t b, std::size_t p) const { return data_[b * pixels() + p]; }

    std::span<double> band(std::size_t b) { return {data_.data() + b * pixels(), pixels()}; }
    std::span<const double> band(std::size_t b) const { return {data_.data() + b * pixels(), pixels()}; }

    std::vector<double> pixel_column(std::size_t p) const;
    void set_pixel_column(std::size_t p, std::span<const double> v);

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const;
    bool all_nonnegative() const;

    HyperImage& operator+=(const HyperImage& o);
    HyperImage& operator-=(const HyperImage& o);
    HyperImage& operator*=(double s);

private:
    Shape shape_{};
    std::vector<double> data_;
};

HyperImage operator+(HyperImage a, const HyperImage& b);
HyperImage operator-(HyperImage a, const HyperImage& b);
HyperImage operator*(HyperImage a, double s);
HyperImage operator*(double s, HyperImage a);

/// Per-entry difference a - b. Throws ShapeError on mismatch.
HyperImage image_sub(const HyperImage& a, const HyperImage& b);
double frobenius_norm(const HyperImage& a);
/// Sum over pixels of the l2 norm of each pixel's spectral column.
double group21_norm(const HyperImage& a);
double dot(const HyperImage& a, const HyperImage& b);
void require_same_shape(const HyperImage& a, const HyperImage& b, const char* what);

class BinaryMap {
public:
    BinaryMap() = default;
    BinaryMap(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}
    BinaryMap(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::uint8_t operator[](std::size_t i) const { return data_[i]; }
    void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }
    const std::vector<std::uint8_t>& data() const { return data_; }
    std::size_t count() const;

    bool operator==(const BinaryMap&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Deterministic generator: mt19937_64 engine (bit-exact by the standard)
/// with in-house uniform/normal transforms, since std distributions differ
/// between library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    /// Standard normal via Box-Muller.
    double normal();

    /// Child generator whose seed depends only on (this seed, stream).
    Rng fork(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace cdgan
