#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cdgan/datagen.hpp"
#include "cdgan/fusion.hpp"
#include "cdgan/nn.hpp"

namespace cdgan {

/// Generator G = H1 o F(Y1, Y2 - H2 o C(Y1, Y2)). Only the CI-network
/// parameters are trainable; the fusion backend stays frozen.
struct GeneratorState {
    nn::Network ci_net;
    nn::NetParams ci_params;
    FusionBackend fusion;
    DegradationPair ops;
};

struct Discriminator {
    nn::Network net;
    nn::NetParams params;
};

struct TrainConfig {
    double alpha = 1.0;
    double beta = 1e-3;
    nn::AdamConfig adam{2e-4, 0.9, 0.999, 1e-8};
    std::size_t epochs = 15;
    std::size_t batch = 4;
    std::uint64_t seed = 0;
    double d_clamp = 1e-6;      // D scores are clamped to [d_clamp, 1 - d_clamp] inside logs
    bool saturating = false;    // C minimizes log(1 - D(G)) instead of -log D(G)
    double adversarial_weight = 1.0; // 0 removes the adversarial term from C's objective
    std::size_t val_smooth_radius = 0;
    std::size_t threads = 1;
};

/// Delta X^ = C(Y1, Y2), at latent resolution, possibly negative.
HyperImage infer_ci(const GeneratorState& state, const HyperImage& y1, const HyperImage& y2);

/// Y2~ = Y2 - H2(Delta X^)
HyperImage correct(const HyperImage& y2, const HyperImage& ci, const DegradationPair& ops);

struct Generated {
    HyperImage y1_hat;
    HyperImage x1_hat;
    HyperImage ci;
    HyperImage y2_corrected;
};

/// CI inference, correction, fusion and prediction in that order.
Generated generate(const GeneratorState& state, const HyperImage& y1, const HyperImage& y2);

/// Global average of the discriminator's sigmoid map, in (0, 1).
double discriminate(const Discriminator& d, const HyperImage& image);

struct LossTerms {
    double adv = 0.0;     // mean log D(Y1) + mean log(1 - D(Y1^))
    double pre = 0.0;     // mean ||Y1 - Y1^||_F^2
    double spa = 0.0;     // mean ||Delta X^||_{2,1}
    double total_c = 0.0; // objective minimized by C (non-saturating adversarial part by default)
    double total_d = 0.0; // objective maximized by D (= adv)
};

LossTerms losses(const GeneratorState& state, const Discriminator& d, std::span<const DatasetPair> batch,
                 const TrainConfig& cfg);

struct BatchGradient {
    LossTerms terms;
    nn::Gradients grads;
    std::vector<double> real_scores, fake_scores;
};

/// Loss terms and d(total_c)/d(Theta_C) averaged over the batch.
BatchGradient generator_gradient(const GeneratorState& state, const Discriminator& d,
                                 std::span<const DatasetPair> batch, const TrainConfig& cfg);

/// Loss terms and d(-total_d)/d(Theta_D) averaged over the batch.
BatchGradient discriminator_gradient(const GeneratorState& state, const Discriminator& d,
                                     std::span<const DatasetPair> batch, const TrainConfig& cfg);

struct EpochLog {
    std::size_t epoch = 0;
    double adv = 0.0, pre = 0.0, spa = 0.0;
    double val_auc = 0.0; // NaN when no validation pairs are given
    bool d_saturated = false;
};

struct TrainResult {
    std::vector<EpochLog> log;
    bool d_collapse_warning = false;
};

/// Alternating updates: for each minibatch one D ascent step, then one C
/// descent step with the fusion backend frozen. On a non-finite loss the CI
/// and D parameters are rolled back to the end of the last completed epoch
/// and NumericError is thrown.
TrainResult train(GeneratorState& state, Discriminator& d, std::span<const DatasetPair> train_pairs,
                  std::span<const DatasetPair> val_pairs, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Mean test AUC of the CVA energy of C's output over the given pairs.
double mean_auc(const GeneratorState& state, std::span<const DatasetPair> pairs, std::size_t smooth_radius);

std::string training_log_csv(const TrainResult& r);

} // namespace cdgan
