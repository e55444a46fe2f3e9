#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cdgan/config.hpp"
#include "cdgan/eval.hpp"
#include "cdgan/gan.hpp"

namespace cdgan {

struct RunOptions {
    std::filesystem::path workdir;
    bool force = false;
    bool dry_run = false;
    std::size_t threads = 1;
    std::ostream* log = nullptr;
};

struct PairMetrics {
    std::size_t index = 0;
    ChangeRule rule = ChangeRule::Zero;
    double auc = 0.0;
    double dist = 0.0;
    double tau = 0.0;
    std::size_t detected = 0;
    std::size_t changed = 0;
};

struct RuleMetrics {
    ChangeRule rule = ChangeRule::Zero;
    std::size_t pairs = 0;
    double auc = 0.0;
    double dist = 0.0;
};

struct ExperimentReport {
    std::string config_hash;
    std::vector<PairMetrics> pairs;
    std::vector<RuleMetrics> rules;
    double mean_auc = 0.0;
    double mean_dist = 0.0;
    std::vector<EpochLog> train_log;
    bool d_collapse_warning = false;
    std::vector<std::string> stages_run;
    std::vector<std::string> stages_skipped;
};

/// Ordered stage names the configuration would execute.
std::vector<std::string> stage_plan(const ExperimentConfig& cfg);

/// gen -> pretrain-fusion (neural backend only) -> train -> detect -> eval -> report.
/// Completed stages recorded in <workdir>/manifest.json are skipped unless
/// `force` is set. Stage failures are rethrown with the stage name prefixed.
ExperimentReport run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts);

/// Per-rule means in a fixed rule order; rules without test pairs are omitted.
std::vector<RuleMetrics> aggregate_by_rule(const std::vector<PairMetrics>& pairs);
std::string report_csv(const ExperimentReport& r);

/// Fusion pretraining pairs (no change) split into train and held-out.
struct PretrainPairs {
    std::vector<DatasetPair> train;
    std::vector<DatasetPair> held_out;
};
PretrainPairs fusion_pretrain_pairs(const ExperimentConfig& cfg);

struct PretrainOutcome {
    NeuralFusion fusion;
    PretrainLog log;
    double held_out_consistency = 0.0; // mean over held-out pairs
};
PretrainOutcome pretrain_fusion_stage(const ExperimentConfig& cfg, std::size_t threads);

/// Model-based backend from the config, or the neural checkpoint at `ckpt`.
FusionBackend make_fusion_backend(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& ckpt);
GeneratorState make_generator(const ExperimentConfig& cfg, FusionBackend fusion);
Discriminator make_discriminator(const ExperimentConfig& cfg);
TrainConfig effective_train_config(const ExperimentConfig& cfg, std::size_t threads);

/// CI -> CVA energy -> median smoothing. Threshold from the config (Otsu by default).
struct Detection {
    EnergyMap energy;
    double tau = 0.0;
    BinaryMap map;
};
Detection detect_changes(const HyperImage& ci, const DetectConfig& cfg);

/// Runs the full pipeline once per beta in cfg.eval.ablation_betas (in
/// <workdir>/beta_<value>) and returns a CSV laid out as rule x metric rows
/// and one column per beta.
struct AblationResult {
    std::vector<double> betas;
    std::vector<ExperimentReport> reports;
};
AblationResult run_beta_ablation(const ExperimentConfig& cfg, const RunOptions& opts);
std::string ablation_csv(const AblationResult& r);

/// Copy of cfg with train.beta replaced; hash and canonical text updated.
ExperimentConfig with_beta(const ExperimentConfig& cfg, double beta);

} // namespace cdgan
