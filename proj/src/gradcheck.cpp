#include "cdgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace cdgan {
namespace {

constexpr double kFloor = 1e-12;

double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
    double diff = 0.0, na = 0.0, nn_ = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn_ += n[i] * n[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn_), kFloor});
}

std::vector<double> numeric_grad(std::vector<double>& x, double eps, const std::function<double()>& f) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double fp = f();
        x[i] = keep - eps;
        const double fm = f();
        x[i] = keep;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// A kink crossing or cancellation spoils only one of two step sizes; a wrong
// gradient disagrees at both.
double step_error(const std::vector<double>& analytic, std::vector<double>& x, double eps,
                  const std::function<double()>& f) {
    return std::min(rel_error(analytic, numeric_grad(x, eps, f)), rel_error(analytic, numeric_grad(x, eps / 10.0, f)));
}

void record(GradCheckReport& r, std::string name, double err) {
    r.tensors.push_back({std::move(name), err});
    r.max_rel_error = std::max(r.max_rel_error, err);
}

} // namespace

GradCheckReport check_network_gradients(const nn::Network& net, const nn::NetParams& params,
                                        std::span<const HyperImage> inputs, std::uint64_t seed, double eps) {
    std::vector<Shape> shapes;
    for (const auto& in : inputs) shapes.push_back(in.shape());
    Rng rng(seed);
    HyperImage w(net.output_shape(shapes));
    for (double& v : w.data()) v = rng.normal();

    nn::NetParams p = params;
    std::vector<HyperImage> x(inputs.begin(), inputs.end());
    auto loss = [&] { return dot(w, nn::infer(net, p, x)); };

    auto res = nn::forward(net, p, x);
    nn::Gradients g = nn::Gradients::zeros_like(p);
    const auto in_grads = nn::backward(net, p, res.tape, w, &g);

    GradCheckReport r;
    for (std::size_t t = 0; t < p.tensors.size(); ++t)
        record(r, "param[" + std::to_string(t) + "]", step_error(g.g[t], p.tensors[t].data, eps, loss));
    for (std::size_t i = 0; i < x.size(); ++i)
        record(r, "input[" + std::to_string(i) + "]", step_error(in_grads[i].data(), x[i].data(), eps, loss));
    return r;
}

GradCheckReport check_generator_gradients(const GeneratorState& state, const Discriminator& d, const DatasetPair& pair,
                                          const TrainConfig& cfg, double eps) {
    GeneratorState s = state;
    const std::span<const DatasetPair> batch(&pair, 1);
    const BatchGradient bg = generator_gradient(s, d, batch, cfg);
    auto loss = [&] { return losses(s, d, batch, cfg).total_c; };
    GradCheckReport r;
    for (std::size_t t = 0; t < s.ci_params.tensors.size(); ++t)
        record(r, "ci_param[" + std::to_string(t) + "]",
               step_error(bg.grads.g[t], s.ci_params.tensors[t].data, eps, loss));
    return r;
}

GradCheckReport check_discriminator_gradients(const GeneratorState& state, const Discriminator& d,
                                              const DatasetPair& pair, const TrainConfig& cfg, double eps) {
    Discriminator dd = d;
    const std::span<const DatasetPair> batch(&pair, 1);
    const BatchGradient bg = discriminator_gradient(state, dd, batch, cfg);
    auto loss = [&] { return -losses(state, dd, batch, cfg).total_d; };
    GradCheckReport r;
    for (std::size_t t = 0; t < dd.params.tensors.size(); ++t)
        record(r, "d_param[" + std::to_string(t) + "]",
               step_error(bg.grads.g[t], dd.params.tensors[t].data, eps, loss));
    return r;
}

} // namespace cdgan
