#pragma once

#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "cdgan/core.hpp"
#include "cdgan/datagen.hpp"
#include "cdgan/nn.hpp"
#include "cdgan/operators.hpp"

namespace cdgan {

struct ModelBasedFusion {
    double lambda = 1e-4;
    std::size_t cg_iters = 500;
    double cg_tol = 1e-8;
};

struct NeuralFusion {
    nn::Network net;
    nn::NetParams params;
};

struct CgStats {
    std::size_t iterations = 0;
    double relative_residual = 0.0; // ||b - A x|| / ||b||
    bool converged = true;
    /// sqrt of the regularized least-squares objective after each iteration
    /// (nonincreasing in exact arithmetic).
    std::vector<double> objective_history;
};

/// Solves (H1'H1 + H2'H2 + lambda I) x = b by conjugate gradient on the
/// normal equations, starting from x0 (zero when empty).
HyperImage cg_normal_solve(const DegradationPair& ops, double lambda, const HyperImage& b, std::size_t max_iters,
                           double tol, CgStats* stats, const HyperImage* x0 = nullptr,
                           const std::function<double(const HyperImage&)>* objective = nullptr);

/// x -> H1'H1 x + H2'H2 x + lambda x
HyperImage normal_operator(const DegradationPair& ops, double lambda, const HyperImage& x);

struct FusionTrace {
    HyperImage fused;     // nonnegative output
    HyperImage unclamped; // model-based: solver output before clamping
    nn::Tape tape;        // neural: activation record
    CgStats stats;
    double clamp_magnitude = 0.0; // ||min(x, 0)||_F removed by the clamp
};

/// F(Y1, Y2~): either the Tikhonov-regularized fusion solver or a
/// pretrained dual-branch network. Parameters are never updated here.
class FusionBackend {
public:
    explicit FusionBackend(ModelBasedFusion mb);
    explicit FusionBackend(NeuralFusion nf);

    bool is_neural() const { return std::holds_alternative<NeuralFusion>(impl_); }
    const ModelBasedFusion* model_based() const { return std::get_if<ModelBasedFusion>(&impl_); }
    const NeuralFusion* neural() const { return std::get_if<NeuralFusion>(&impl_); }
    std::string describe() const;

    HyperImage fuse(const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops) const;
    FusionTrace fuse_traced(const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops) const;
    /// Gradient of a scalar loss w.r.t. Y2~ given its gradient w.r.t. the
    /// fused image. The model-based path uses one extra solve with the same
    /// (symmetric) normal operator.
    HyperImage backward_y2t(const FusionTrace& trace, const HyperImage& grad_fused, const DegradationPair& ops) const;

    /// Checksum of the backend parameters (0 for the model-based solver).
    std::uint64_t checksum() const;

private:
    void check_inputs(const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops) const;

    std::variant<ModelBasedFusion, NeuralFusion> impl_;
};

HyperImage fuse(const FusionBackend& backend, const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops);

struct Consistency {
    double value = 0.0;
    bool absolute = false; // ||Y1|| was zero, value is the unnormalized norm
};

/// ||H1(X1^) - Y1||_F / ||Y1||_F
Consistency consistency(const HyperImage& x1_hat, const HyperImage& y1, const DegradationPair& ops);

struct PretrainConfig {
    std::size_t epochs = 15;
    std::size_t batch = 4;
    nn::AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
};

struct PretrainLog {
    std::vector<double> epoch_loss; // mean ||F(Y1, Y2) - X1||_F^2 per epoch
};

/// Fits the fusion network on no-change pairs by minimizing the mean
/// squared Frobenius error against the latent X1.
PretrainLog pretrain_fusion(const nn::Network& net, nn::NetParams& params, std::span<const DatasetPair> pairs,
                            const PretrainConfig& cfg, Rng& rng, std::size_t threads = 1);

} // namespace cdgan
