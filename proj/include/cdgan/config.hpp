#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cdgan/datagen.hpp"
#include "cdgan/fusion.hpp"
#include "cdgan/gan.hpp"
#include "cdgan/nn.hpp"
#include "cdgan/operators.hpp"

namespace cdgan {

struct ProceduralRefs {
    std::size_t count = 6;
    std::size_t bands = 32, rows = 64, cols = 64;
    std::size_t materials = 4;
    std::uint64_t seed = 1;
};

struct DataConfig {
    std::variant<ProceduralRefs, std::vector<std::filesystem::path>> references;
    GenerationConfig generation;
    std::uint64_t seed = 1;
};

struct CorruptionConfig {
    double blur_sigma = 1.70;
    double snr_db = 8.0;
    std::uint64_t seed = 1;
};

struct OperatorConfig {
    double blur_sigma = 2.35;
    std::size_t subsample_factor = 4;
    int kernel_radius = -1;
    std::size_t spectral_width = 4;
    std::optional<CorruptionConfig> corruption;
};

struct FusionPretrainConfig {
    ProceduralRefs refs{24, 32, 64, 64, 4, 101};
    std::size_t held_out = 4;
    PretrainConfig train;
    std::uint64_t seed = 1;
};

struct FusionConfig {
    bool neural = false;
    ModelBasedFusion model_based;
    std::size_t branch_channels = 32;
    std::size_t trunk_channels = 64;
    FusionPretrainConfig pretrain;
};

struct TrainBlock {
    TrainConfig train;
    std::size_t branch_channels = 32;
    std::size_t trunk_channels = 64;
    std::size_t disc_channels = 16;
    bool zero_init_head = false;
    bool kaiming_init = false; // weights drawn from U(+-sqrt(6 / fan_in)) instead of U(+-1 / sqrt(fan_in))
    std::uint64_t init_seed = 1;
};

struct DetectConfig {
    std::optional<double> tau; // empty: Otsu
    std::size_t smooth_radius = 1;
};

struct EvalConfig {
    std::vector<double> ablation_betas{0.0, 1e-4, 1e-3, 1e-2};
};

struct ExperimentConfig {
    std::string name = "experiment";
    DataConfig data;
    OperatorConfig operators;
    FusionConfig fusion;
    TrainBlock train;
    DetectConfig detect;
    EvalConfig eval;
    std::string canonical_json; // normalized source, hashed into the manifest
    std::string hash;
};

/// Parses the JSON experiment description. Relative reference paths are
/// resolved against `base_dir`. Unknown keys, missing seeds and missing
/// files raise ConfigError.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Operators that generate the data.
DegradationPair data_operators(const ExperimentConfig& cfg);
/// Operators assumed by the fusion/correction/prediction stages (corrupted
/// when a corruption block is present).
DegradationPair model_operators(const ExperimentConfig& cfg);

std::vector<HyperImage> make_references(const ProceduralRefs& p);
std::vector<HyperImage> load_references(const DataConfig& d);

nn::DualBranchArch fusion_arch(const ExperimentConfig& cfg);
nn::DualBranchArch ci_arch(const ExperimentConfig& cfg);
nn::DiscriminatorArch disc_arch(const ExperimentConfig& cfg);

std::string hex64(std::uint64_t v);
std::uint64_t fnv1a(const std::string& s);

} // namespace cdgan
