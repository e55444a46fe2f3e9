#include "cdgan/gan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <thread>

#include "cdgan/detect.hpp"
#include "cdgan/eval.hpp"

namespace cdgan {
namespace {

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

double clamp_score(double s, double eps) { return std::clamp(s, eps, 1.0 - eps); }

HyperImage score_map_grad(const HyperImage& map, double upstream) {
    return HyperImage(map.shape(), upstream / static_cast<double>(map.size()));
}

double mean_of(const HyperImage& m) {
    return std::accumulate(m.data().begin(), m.data().end(), 0.0) / static_cast<double>(m.size());
}

// Subgradient of sum_i ||dx_i||_2 (zero on zero columns).
HyperImage group21_grad(const HyperImage& ci) {
    std::vector<double> norms(ci.pixels(), 0.0);
    for (std::size_t b = 0; b < ci.bands(); ++b) {
        auto plane = ci.band(b);
        for (std::size_t p = 0; p < ci.pixels(); ++p) norms[p] += plane[p] * plane[p];
    }
    for (double& v : norms) v = std::sqrt(v);
    HyperImage g(ci.shape());
    for (std::size_t b = 0; b < ci.bands(); ++b)
        for (std::size_t p = 0; p < ci.pixels(); ++p)
            g.at(b, p) = norms[p] > 0.0 ? ci.at(b, p) / norms[p] : 0.0;
    return g;
}

struct GenTrace {
    nn::Tape ci_tape;
    HyperImage ci, y2t, y1_hat;
    FusionTrace fusion;
};

GenTrace generate_traced(const GeneratorState& s, const HyperImage& y1, const HyperImage& y2) {
    GenTrace t;
    const std::vector<HyperImage> in{y1, y2};
    auto res = nn::forward(s.ci_net, s.ci_params, in);
    t.ci = std::move(res.output);
    t.ci_tape = std::move(res.tape);
    if (t.ci.rows() != y2.rows() || t.ci.cols() != y2.cols() || t.ci.bands() != y1.bands())
        throw ShapeError("infer_ci: CI network output " + to_string(t.ci.shape()) + " does not match latent shape " +
                         to_string(Shape{y1.bands(), y2.rows(), y2.cols()}));
    t.y2t = correct(y2, t.ci, s.ops);
    t.fusion = s.fusion.fuse_traced(y1, t.y2t, s.ops);
    t.y1_hat = s.ops.spatial.apply(t.fusion.fused);
    return t;
}

struct SampleOut {
    nn::Gradients grads;
    double adv = 0.0, pre = 0.0, spa = 0.0, real = 0.0, fake = 0.0, c_adv = 0.0;
};

} // namespace

HyperImage infer_ci(const GeneratorState& state, const HyperImage& y1, const HyperImage& y2) {
    const std::vector<HyperImage> in{y1, y2};
    HyperImage ci = nn::infer(state.ci_net, state.ci_params, in);
    if (ci.rows() != y2.rows() || ci.cols() != y2.cols() || ci.bands() != y1.bands())
        throw ShapeError("infer_ci: CI network output " + to_string(ci.shape()) + " does not match latent shape " +
                         to_string(Shape{y1.bands(), y2.rows(), y2.cols()}));
    return ci;
}

HyperImage correct(const HyperImage& y2, const HyperImage& ci, const DegradationPair& ops) {
    HyperImage h = ops.spectral.apply(ci);
    require_same_shape(y2, h, "correct");
    return y2 - h;
}

Generated generate(const GeneratorState& state, const HyperImage& y1, const HyperImage& y2) {
    Generated g;
    g.ci = infer_ci(state, y1, y2);
    g.y2_corrected = correct(y2, g.ci, state.ops);
    g.x1_hat = state.fusion.fuse(y1, g.y2_corrected, state.ops);
    g.y1_hat = apply_spatial(state.ops.spatial, g.x1_hat);
    return g;
}

double discriminate(const Discriminator& d, const HyperImage& image) {
    const std::vector<HyperImage> in{image};
    return mean_of(nn::infer(d.net, d.params, in));
}

LossTerms losses(const GeneratorState& state, const Discriminator& d, std::span<const DatasetPair> batch,
                 const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("losses: empty batch");
    LossTerms t;
    double c_adv = 0.0;
    for (const auto& p : batch) {
        const Generated g = generate(state, p.y1, p.y2);
        const double real = clamp_score(discriminate(d, p.y1), cfg.d_clamp);
        const double fake = clamp_score(discriminate(d, g.y1_hat), cfg.d_clamp);
        t.adv += std::log(real) + std::log(1.0 - fake);
        c_adv += cfg.saturating ? std::log(1.0 - fake) : -std::log(fake);
        const HyperImage r = p.y1 - g.y1_hat;
        t.pre += dot(r, r);
        t.spa += group21_norm(g.ci);
    }
    const double n = static_cast<double>(batch.size());
    t.adv /= n;
    t.pre /= n;
    t.spa /= n;
    c_adv /= n;
    t.total_c = cfg.adversarial_weight * c_adv + cfg.alpha * t.pre + cfg.beta * t.spa;
    t.total_d = t.adv;
    return t;
}

namespace {

SampleOut generator_sample(const GeneratorState& s, const Discriminator& d, const DatasetPair& p,
                           const TrainConfig& cfg, const GenTrace& tr, double inv_b) {
    SampleOut out;
    // Real score only enters the reported L_adv.
    const std::vector<HyperImage> real_in{p.y1};
    out.real = mean_of(nn::infer(d.net, d.params, real_in));

    const std::vector<HyperImage> fake_in{tr.y1_hat};
    auto dres = nn::forward(d.net, d.params, fake_in);
    out.fake = mean_of(dres.output);
    const double fc = clamp_score(out.fake, cfg.d_clamp);
    const bool inside = out.fake > cfg.d_clamp && out.fake < 1.0 - cfg.d_clamp;
    out.adv = std::log(clamp_score(out.real, cfg.d_clamp)) + std::log(1.0 - fc);
    out.c_adv = cfg.saturating ? std::log(1.0 - fc) : -std::log(fc);

    const HyperImage resid = p.y1 - tr.y1_hat;
    out.pre = dot(resid, resid);
    out.spa = group21_norm(tr.ci);

    // dL/dY1^
    HyperImage g_y1hat = resid * (-2.0 * cfg.alpha * inv_b);
    if (cfg.adversarial_weight != 0.0 && inside) {
        const double dscore = cfg.adversarial_weight * inv_b * (cfg.saturating ? -1.0 / (1.0 - fc) : -1.0 / fc);
        auto gd = nn::backward(d.net, d.params, dres.tape, score_map_grad(dres.output, dscore), nullptr);
        g_y1hat += gd[0];
    }
    const HyperImage g_x = s.ops.spatial.adjoint(g_y1hat);
    const HyperImage g_y2t = s.fusion.backward_y2t(tr.fusion, g_x, s.ops);
    HyperImage g_ci = s.ops.spectral.adjoint(g_y2t) * -1.0;
    if (cfg.beta != 0.0) g_ci += group21_grad(tr.ci) * (cfg.beta * inv_b);

    out.grads = nn::Gradients::zeros_like(s.ci_params);
    nn::backward(s.ci_net, s.ci_params, tr.ci_tape, g_ci, &out.grads);
    return out;
}

SampleOut discriminator_sample(const Discriminator& d, const HyperImage& y1, const HyperImage& y1_hat,
                               const TrainConfig& cfg, double inv_b) {
    SampleOut out;
    out.grads = nn::Gradients::zeros_like(d.params);
    auto side = [&](const HyperImage& img, bool real) {
        const std::vector<HyperImage> in{img};
        auto res = nn::forward(d.net, d.params, in);
        const double s = mean_of(res.output);
        const double sc = clamp_score(s, cfg.d_clamp);
        const bool inside = s > cfg.d_clamp && s < 1.0 - cfg.d_clamp;
        // minimize -[log D(real) + log(1 - D(fake))]
        const double dscore = real ? -1.0 / sc : 1.0 / (1.0 - sc);
        if (inside) nn::backward(d.net, d.params, res.tape, score_map_grad(res.output, dscore * inv_b), &out.grads);
        return std::pair{s, real ? std::log(sc) : std::log(1.0 - sc)};
    };
    auto [rs, rl] = side(y1, true);
    auto [fs, fl] = side(y1_hat, false);
    out.real = rs;
    out.fake = fs;
    out.adv = rl + fl;
    return out;
}

BatchGradient reduce(std::vector<SampleOut>& parts, const nn::NetParams& like, const TrainConfig& cfg,
                     bool generator) {
    BatchGradient bg;
    bg.grads = nn::Gradients::zeros_like(like);
    double c_adv = 0.0;
    for (auto& s : parts) {
        bg.grads.add(s.grads);
        bg.terms.adv += s.adv;
        bg.terms.pre += s.pre;
        bg.terms.spa += s.spa;
        c_adv += s.c_adv;
        bg.real_scores.push_back(s.real);
        bg.fake_scores.push_back(s.fake);
    }
    const double n = static_cast<double>(parts.size());
    bg.terms.adv /= n;
    bg.terms.pre /= n;
    bg.terms.spa /= n;
    c_adv /= n;
    if (generator) bg.terms.total_c = cfg.adversarial_weight * c_adv + cfg.alpha * bg.terms.pre + cfg.beta * bg.terms.spa;
    bg.terms.total_d = bg.terms.adv;
    return bg;
}

BatchGradient generator_gradient_traced(const GeneratorState& state, const Discriminator& d,
                                        std::span<const DatasetPair> batch, const std::vector<GenTrace>& traces,
                                        const TrainConfig& cfg) {
    std::vector<SampleOut> parts(batch.size());
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    parallel_for(batch.size(), cfg.threads,
                 [&](std::size_t i) { parts[i] = generator_sample(state, d, batch[i], cfg, traces[i], inv_b); });
    return reduce(parts, state.ci_params, cfg, true);
}

BatchGradient discriminator_gradient_traced(const Discriminator& d, std::span<const DatasetPair> batch,
                                            const std::vector<GenTrace>& traces, const TrainConfig& cfg) {
    std::vector<SampleOut> parts(batch.size());
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
        parts[i] = discriminator_sample(d, batch[i].y1, traces[i].y1_hat, cfg, inv_b);
    });
    return reduce(parts, d.params, cfg, false);
}

std::vector<GenTrace> trace_batch(const GeneratorState& state, std::span<const DatasetPair> batch,
                                  std::size_t threads) {
    std::vector<GenTrace> traces(batch.size());
    parallel_for(batch.size(), threads,
                 [&](std::size_t i) { traces[i] = generate_traced(state, batch[i].y1, batch[i].y2); });
    return traces;
}

} // namespace

BatchGradient generator_gradient(const GeneratorState& state, const Discriminator& d,
                                 std::span<const DatasetPair> batch, const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("generator_gradient: empty batch");
    const auto traces = trace_batch(state, batch, cfg.threads);
    return generator_gradient_traced(state, d, batch, traces, cfg);
}

BatchGradient discriminator_gradient(const GeneratorState& state, const Discriminator& d,
                                     std::span<const DatasetPair> batch, const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("discriminator_gradient: empty batch");
    const auto traces = trace_batch(state, batch, cfg.threads);
    return discriminator_gradient_traced(d, batch, traces, cfg);
}

double mean_auc(const GeneratorState& state, std::span<const DatasetPair> pairs, std::size_t smooth_radius) {
    if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (const auto& p : pairs) {
        const EnergyMap e = smooth(cva_energy(infer_ci(state, p.y1, p.y2)), smooth_radius);
        s += roc(e, p.dref).auc;
    }
    return s / static_cast<double>(pairs.size());
}

TrainResult train(GeneratorState& state, Discriminator& d, std::span<const DatasetPair> train_pairs,
                  std::span<const DatasetPair> val_pairs, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    if (cfg.alpha < 0.0 || cfg.beta < 0.0) throw ConfigError("train: alpha and beta must be >= 0");
    if (cfg.batch == 0) throw ConfigError("train: batch must be >= 1");
    if (train_pairs.empty() && cfg.epochs > 0) throw ConfigError("train: no training pairs");

    TrainResult result;
    Rng rng(cfg.seed);
    const std::uint64_t fusion_sum = state.fusion.checksum();
    std::vector<std::size_t> order(train_pairs.size());
    nn::NetParams ci_snapshot = state.ci_params, d_snapshot = d.params;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        EpochLog log;
        log.epoch = epoch;
        std::size_t batches = 0;
        bool all_saturated = true;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t bs = std::min(cfg.batch, order.size() - start);
            std::vector<DatasetPair> batch_store;
            batch_store.reserve(bs);
            for (std::size_t i = 0; i < bs; ++i) batch_store.push_back(train_pairs[order[start + i]]);
            const std::span<const DatasetPair> batch(batch_store);

            // C is unchanged by the D step, so one generator pass serves both updates.
            const auto traces = trace_batch(state, batch, cfg.threads);
            BatchGradient dg = discriminator_gradient_traced(d, batch, traces, cfg);
            if (!std::isfinite(dg.terms.adv) || !std::isfinite(dg.grads.squared_norm())) {
                state.ci_params = ci_snapshot;
                d.params = d_snapshot;
                throw NumericError("train: non-finite discriminator loss in epoch " + std::to_string(epoch) +
                                   "; parameters rolled back to the last completed epoch");
            }
            nn::adam_step(d.params, dg.grads, cfg.adam);
            BatchGradient cg = generator_gradient_traced(state, d, batch, traces, cfg);

            if (!std::isfinite(cg.terms.total_c) || !std::isfinite(cg.grads.squared_norm())) {
                state.ci_params = ci_snapshot;
                d.params = d_snapshot;
                throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch) +
                                   "; parameters rolled back to the last completed epoch");
            }
            nn::adam_step(state.ci_params, cg.grads, cfg.adam);

            log.adv += dg.terms.adv;
            log.pre += cg.terms.pre;
            log.spa += cg.terms.spa;
            for (double s : dg.real_scores) all_saturated &= (s <= cfg.d_clamp || s >= 1.0 - cfg.d_clamp);
            for (double s : dg.fake_scores) all_saturated &= (s <= cfg.d_clamp || s >= 1.0 - cfg.d_clamp);
            ++batches;
        }
        if (batches > 0) {
            log.adv /= static_cast<double>(batches);
            log.pre /= static_cast<double>(batches);
            log.spa /= static_cast<double>(batches);
        }
        log.d_saturated = batches > 0 && all_saturated;
        result.d_collapse_warning |= log.d_saturated;
        log.val_auc = mean_auc(state, val_pairs, cfg.val_smooth_radius);
        if (state.fusion.checksum() != fusion_sum) throw Error("train: fusion parameters changed during training");
        ci_snapshot = state.ci_params;
        d_snapshot = d.params;
        result.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return result;
}

std::string training_log_csv(const TrainResult& r) {
    std::string out = "epoch,L_adv,L_pre,L_spa,val_AUC\n";
    char buf[256];
    for (const auto& e : r.log) {
        std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.adv, e.pre, e.spa, e.val_auc);
        out += buf;
    }
    return out;
}

} // namespace cdgan
