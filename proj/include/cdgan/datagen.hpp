#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdgan/core.hpp"
#include "cdgan/operators.hpp"

namespace cdgan {

struct UnmixModel {
    Eigen::MatrixXd endmembers; // m x k, nonnegative
    Eigen::MatrixXd abundances; // k x n, columns on the simplex
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t k() const { return static_cast<std::size_t>(endmembers.cols()); }
    std::size_t bands() const { return static_cast<std::size_t>(endmembers.rows()); }
};

/// Greedy pure-pixel endmember selection followed by per-pixel projected
/// gradient NNLS and sum-to-one renormalization.
UnmixModel unmix(const HyperImage& x_ref, std::size_t k);

/// ||X - M A||_F / ||X||_F
double unmix_residual(const HyperImage& x_ref, const UnmixModel& model);

/// Smooth abundance fields over k random smooth nonnegative spectra.
HyperImage procedural_reference(std::size_t bands, std::size_t rows, std::size_t cols, std::size_t k, Rng& rng);

enum class ChangeRule { Zero, Same, Block };
std::string to_string(ChangeRule r);
ChangeRule parse_change_rule(const std::string& s);

struct Rect {
    std::size_t row = 0, col = 0, height = 0, width = 0;

    bool contains(std::size_t r, std::size_t c) const {
        return r >= row && r < row + height && c >= col && c < col + width;
    }
    bool overlaps(const Rect& o) const {
        return row < o.row + o.height && o.row < row + height && col < o.col + o.width && o.col < col + width;
    }
    std::size_t area() const { return height * width; }
};

struct ChangeSpec {
    ChangeRule rule = ChangeRule::Zero;
    Rect region;
    std::optional<std::size_t> endmember; // R_z: removed material (auto: dominant in region)
    std::optional<std::size_t> source_pixel; // R_s: donor abundance vector (auto: picked outside region)
    std::optional<Rect> donor; // R_b: donor block (auto: picked, non-overlapping)
};

struct ChangeResult {
    Eigen::MatrixXd abundances; // A_chg
    BinaryMap dref;
    ChangeSpec resolved; // spec with every auto field filled in
};

/// Random axis-aligned rectangle covering [min_frac, max_frac] of the image.
Rect random_region(std::size_t rows, std::size_t cols, double min_frac, double max_frac, Rng& rng);

ChangeResult apply_change_rule(const UnmixModel& model, const ChangeSpec& spec, Rng& rng);

enum class UpmixDirection { Forward, Reverse };
std::string to_string(UpmixDirection d);
UpmixDirection parse_direction(const std::string& s);

HyperImage mix(const UnmixModel& model, const Eigen::MatrixXd& abundances);
std::pair<HyperImage, HyperImage> upmix(const UnmixModel& model, const Eigen::MatrixXd& a_chg, UpmixDirection dir);

/// Y1 = H1(X1), Y2 = H2(X2).
std::pair<HyperImage, HyperImage> observe(const HyperImage& x1, const HyperImage& x2, const DegradationPair& ops);

struct DatasetPair {
    HyperImage y1, y2, x1, x2;
    BinaryMap dref;
    ChangeRule rule = ChangeRule::Zero;
    UpmixDirection direction = UpmixDirection::Forward;
    std::size_t ref_index = 0;
    std::uint64_t seed = 0;
    bool no_change = false;
};

struct GenerationConfig {
    std::size_t k = 4;
    std::vector<ChangeRule> rules{ChangeRule::Zero, ChangeRule::Same, ChangeRule::Block};
    std::vector<UpmixDirection> directions{UpmixDirection::Forward, UpmixDirection::Reverse};
    double min_region_frac = 0.02;
    double max_region_frac = 0.15;
    std::size_t test_pairs = 4;
    double obs_noise_sd = 0.0; // additive Gaussian noise on both observations
};

struct Dataset {
    std::vector<DatasetPair> train;
    std::vector<DatasetPair> test;
};

/// Pairs are generated per reference, rule and direction with per-pair
/// derived seeds. The test split is stratified round-robin over rules.
Dataset build_dataset(const std::vector<HyperImage>& refs, const GenerationConfig& cfg, const DegradationPair& ops,
                      std::uint64_t seed);

/// X1 = X2 = M A_ref, used for fusion pretraining.
DatasetPair no_change_pair(const UnmixModel& model, const DegradationPair& ops, std::size_t ref_index);

void add_observation_noise(HyperImage& img, double sd, Rng& rng);

// Layout: <dir>/pair_<idx>/{Y1.hsc,Y2.hsc,X1.hsc,X2.hsc,dref.cm} plus a
// manifest.json with split membership and per-pair metadata.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const std::string& provenance_json);
Dataset read_dataset(const std::filesystem::path& dir);

} // namespace cdgan
