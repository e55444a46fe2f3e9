#include "cdgan/fusion.hpp"

#include <cmath>
#include <numeric>
#include <thread>

namespace cdgan {

HyperImage normal_operator(const DegradationPair& ops, double lambda, const HyperImage& x) {
    HyperImage out = ops.spatial.adjoint(ops.spatial.apply(x));
    out += ops.spectral.adjoint(ops.spectral.apply(x));
    if (lambda != 0.0)
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += lambda * x.data()[i];
    return out;
}

HyperImage cg_normal_solve(const DegradationPair& ops, double lambda, const HyperImage& b, std::size_t max_iters,
                           double tol, CgStats* stats, const HyperImage* x0,
                           const std::function<double(const HyperImage&)>* objective) {
    HyperImage x = x0 ? *x0 : HyperImage(b.shape());
    HyperImage r = x0 ? b - normal_operator(ops, lambda, x) : b;
    HyperImage p = r;
    const double bnorm = frobenius_norm(b);
    CgStats local;
    CgStats& st = stats ? *stats : local;
    st = CgStats{};
    if (bnorm == 0.0) {
        st.relative_residual = 0.0;
        st.converged = true;
        return HyperImage(b.shape());
    }
    double rr = dot(r, r);
    std::size_t it = 0;
    while (it < max_iters && std::sqrt(rr) > tol * bnorm) {
        const HyperImage Ap = normal_operator(ops, lambda, p);
        const double pAp = dot(p, Ap);
        if (!(pAp > 0.0)) throw NumericError("cg_normal_solve: operator is not positive definite (pAp=" +
                                             std::to_string(pAp) + ")");
        const double alpha = rr / pAp;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data()[i] += alpha * p.data()[i];
            r.data()[i] -= alpha * Ap.data()[i];
        }
        const double rr_new = dot(r, r);
        const double beta = rr_new / rr;
        for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = r.data()[i] + beta * p.data()[i];
        rr = rr_new;
        ++it;
        if (objective) st.objective_history.push_back(std::sqrt(std::max(0.0, (*objective)(x))));
    }
    st.iterations = it;
    st.relative_residual = std::sqrt(rr) / bnorm;
    st.converged = st.relative_residual <= tol;
    if (!std::isfinite(st.relative_residual)) throw NumericError("cg_normal_solve: residual is not finite");
    return x;
}

FusionBackend::FusionBackend(ModelBasedFusion mb) : impl_(mb) {
    if (!(mb.lambda > 0.0)) throw ConfigError("model-based fusion: lambda must be > 0");
    if (mb.cg_iters == 0) throw ConfigError("model-based fusion: cg_iters must be >= 1");
}

FusionBackend::FusionBackend(NeuralFusion nf) : impl_(std::move(nf)) {
    const auto& net = std::get<NeuralFusion>(impl_).net;
    if (net.num_inputs() != 2) throw ConfigError("neural fusion: network must take (LRHS, HRLS) inputs");
}

std::string FusionBackend::describe() const {
    if (const auto* mb = model_based())
        return "model_based(lambda=" + std::to_string(mb->lambda) + ", cg_iters=" + std::to_string(mb->cg_iters) +
               ", cg_tol=" + std::to_string(mb->cg_tol) + ")";
    return "neural(" + std::to_string(neural()->params.count()) + " parameters)";
}

void FusionBackend::check_inputs(const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops) const {
    const Shape latent{y1.bands(), y2t.rows(), y2t.cols()};
    if (ops.spatial.output_shape(latent) != y1.shape())
        throw ShapeError("fuse: LRHS shape " + to_string(y1.shape()) + " is not H1 of latent " + to_string(latent));
    if (ops.spectral.in_bands() != y1.bands() || ops.spectral.out_bands() != y2t.bands())
        throw ShapeError("fuse: HRLS bands (" + std::to_string(y2t.bands()) +
                         ") or LRHS bands do not match the spectral operator");
}

FusionTrace FusionBackend::fuse_traced(const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops) const {
    check_inputs(y1, y2t, ops);
    FusionTrace tr;
    if (const auto* mb = model_based()) {
        HyperImage b = ops.spatial.adjoint(y1);
        b += ops.spectral.adjoint(y2t);
        tr.unclamped = cg_normal_solve(ops, mb->lambda, b, mb->cg_iters, mb->cg_tol, &tr.stats);
        tr.fused = tr.unclamped;
        double neg = 0.0;
        for (double& v : tr.fused.data())
            if (v < 0.0) {
                neg += v * v;
                v = 0.0;
            }
        tr.clamp_magnitude = std::sqrt(neg);
    } else {
        const auto& nf = *neural();
        const std::vector<HyperImage> in{y1, y2t};
        auto res = nn::forward(nf.net, nf.params, in);
        tr.fused = std::move(res.output);
        tr.tape = std::move(res.tape);
    }
    return tr;
}

HyperImage FusionBackend::fuse(const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops) const {
    return fuse_traced(y1, y2t, ops).fused;
}

HyperImage FusionBackend::backward_y2t(const FusionTrace& trace, const HyperImage& grad_fused,
                                       const DegradationPair& ops) const {
    if (const auto* mb = model_based()) {
        HyperImage g = grad_fused;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (trace.unclamped.data()[i] < 0.0) g.data()[i] = 0.0;
        // x = A^{-1}(H1'Y1 + H2'Y2~)  =>  dL/dY2~ = H2 A^{-1} dL/dx  (A symmetric)
        const HyperImage v = cg_normal_solve(ops, mb->lambda, g, mb->cg_iters, mb->cg_tol, nullptr);
        return ops.spectral.apply(v);
    }
    const auto& nf = *neural();
    auto grads = nn::backward(nf.net, nf.params, trace.tape, grad_fused, nullptr);
    return std::move(grads.at(1));
}

std::uint64_t FusionBackend::checksum() const { return is_neural() ? neural()->params.checksum() : 0; }

HyperImage fuse(const FusionBackend& backend, const HyperImage& y1, const HyperImage& y2t, const DegradationPair& ops) {
    return backend.fuse(y1, y2t, ops);
}

Consistency consistency(const HyperImage& x1_hat, const HyperImage& y1, const DegradationPair& ops) {
    const HyperImage pred = ops.spatial.apply(x1_hat);
    require_same_shape(pred, y1, "consistency");
    const double num = frobenius_norm(pred - y1);
    const double den = frobenius_norm(y1);
    if (den == 0.0) return {num, true};
    return {num / den, false};
}

namespace {

struct SampleGrad {
    nn::Gradients grads;
    double loss = 0.0;
};

SampleGrad fusion_sample_grad(const nn::Network& net, const nn::NetParams& params, const DatasetPair& p) {
    const std::vector<HyperImage> in{p.y1, p.y2};
    auto res = nn::forward(net, params, in);
    HyperImage diff = res.output - p.x1;
    SampleGrad sg;
    sg.loss = dot(diff, diff);
    diff *= 2.0;
    sg.grads = nn::Gradients::zeros_like(params);
    nn::backward(net, params, res.tape, diff, &sg.grads);
    return sg;
}

} // namespace

PretrainLog pretrain_fusion(const nn::Network& net, nn::NetParams& params, std::span<const DatasetPair> pairs,
                            const PretrainConfig& cfg, Rng& rng, std::size_t threads) {
    PretrainLog log;
    if (cfg.epochs == 0) return log;
    if (pairs.empty()) throw ConfigError("pretrain_fusion: no training pairs");
    if (cfg.batch == 0) throw ConfigError("pretrain_fusion: batch must be >= 1");
    threads = std::max<std::size_t>(1, threads);
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t bs = std::min(cfg.batch, order.size() - start);
            std::vector<SampleGrad> parts(bs);
            auto work = [&](std::size_t t) {
                for (std::size_t i = t; i < bs; i += threads)
                    parts[i] = fusion_sample_grad(net, params, pairs[order[start + i]]);
            };
            if (threads == 1 || bs == 1) {
                work(0);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t t = 0; t < std::min(threads, bs); ++t) pool.emplace_back(work, t);
                for (auto& th : pool) th.join();
            }
            nn::Gradients g = nn::Gradients::zeros_like(params);
            double batch_loss = 0.0;
            for (const auto& sp : parts) {
                g.add(sp.grads);
                batch_loss += sp.loss;
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("pretrain_fusion: loss diverged (NaN/inf) in epoch " + std::to_string(epoch + 1));
            g.scale(1.0 / static_cast<double>(bs));
            nn::adam_step(params, g, cfg.adam);
            total += batch_loss;
        }
        log.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
    }
    return log;
}

} // namespace cdgan
