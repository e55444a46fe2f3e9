#include "cdgan/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <Eigen/Dense>

namespace cdgan::nn {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMajor>;
using CMapM = Eigen::Map<const RowMajor>;

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::size_t conv_out(std::size_t n, std::size_t stride) { return (n - 1) / stride + 1; }

// Patch matrix of a 3x3, pad-1 convolution: row (c*9 + ky*3 + kx), column (oy*wo + ox).
void im2col(const HyperImage& x, std::size_t stride, std::size_t ho, std::size_t wo, std::vector<double>& cols) {
    const std::size_t C = x.bands(), H = x.rows(), W = x.cols(), P = ho * wo;
    cols.assign(C * 9 * P, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        auto plane = x.band(c);
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                double* dst = cols.data() + ((c * 9) + ky * 3 + kx) * P;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - 1;
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    const double* src = plane.data() + static_cast<std::size_t>(iy) * W;
                    double* d = dst + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long jx = static_cast<long>(ox * stride + kx) - 1;
                        if (jx >= 0 && jx < static_cast<long>(W)) d[ox] = src[jx];
                    }
                }
            }
    }
}

// Adjoint of im2col: scatters patch rows back onto the (C, H, W) grid.
void col2im(const std::vector<double>& cols, std::size_t stride, std::size_t ho, std::size_t wo, HyperImage& x) {
    const std::size_t C = x.bands(), H = x.rows(), W = x.cols(), P = ho * wo;
    for (std::size_t c = 0; c < C; ++c) {
        auto plane = x.band(c);
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const double* src = cols.data() + ((c * 9) + ky * 3 + kx) * P;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - 1;
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    double* d = plane.data() + static_cast<std::size_t>(iy) * W;
                    const double* s = src + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long jx = static_cast<long>(ox * stride + kx) - 1;
                        if (jx >= 0 && jx < static_cast<long>(W)) d[jx] += s[ox];
                    }
                }
            }
    }
}

void add_bias(HyperImage& y, const std::vector<double>& bias) {
    for (std::size_t c = 0; c < y.bands(); ++c)
        for (double& v : y.band(c)) v += bias[c];
}

Tensor make_tensor(std::vector<std::size_t> dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return {std::move(dims), std::vector<double>(n, 0.0)};
}

[[noreturn]] void layer_error(const LayerSpec& l, std::size_t idx, const std::string& msg) {
    throw ShapeError("layer " + std::to_string(idx) + " (" + (l.name.empty() ? to_string(l.kind) : l.name) +
                     "): " + msg);
}

} // namespace

std::string to_string(LayerKind k) {
    switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::DownConv: return "down_conv";
    case LayerKind::UpConv: return "up_conv";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Concat: return "concat";
    case LayerKind::SkipAdd: return "skip_add";
    }
    return "?";
}

std::size_t NetParams::count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

std::uint64_t NetParams::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors)
        for (double v : t.data) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    return h;
}

Gradients Gradients::zeros_like(const NetParams& p) {
    Gradients g;
    for (const auto& t : p.tensors) g.g.emplace_back(t.size(), 0.0);
    return g;
}

void Gradients::add(const Gradients& o, double s) {
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] += s * o.g[i][j];
}

void Gradients::scale(double s) {
    for (auto& t : g)
        for (double& v : t) v *= s;
}

double Gradients::squared_norm() const {
    double s = 0.0;
    for (const auto& t : g)
        for (double v : t) s += v * v;
    return s;
}

std::size_t Network::push(LayerSpec spec, std::size_t ch) {
    for (auto in : spec.inputs)
        if (in >= layers_.size()) throw ConfigError("Network: layer input refers to a later node");
    layers_.push_back(std::move(spec));
    channels_.push_back(ch);
    return layers_.size() - 1;
}

std::size_t Network::input(std::size_t slot, std::size_t channels, std::string name) {
    LayerSpec s;
    s.kind = LayerKind::Input;
    s.slot = slot;
    s.in_ch = s.out_ch = channels;
    s.name = std::move(name);
    num_inputs_ = std::max(num_inputs_, slot + 1);
    return push(std::move(s), channels);
}

std::size_t Network::conv_like(LayerKind kind, std::size_t from, std::size_t out_ch, std::size_t stride,
                               std::string name) {
    if (stride == 0) throw ConfigError("Network: stride must be >= 1");
    LayerSpec s;
    s.kind = kind;
    s.inputs = {from};
    s.in_ch = channels_.at(from);
    s.out_ch = out_ch;
    s.stride = stride;
    s.weight = num_params_++;
    s.bias = num_params_++;
    s.name = std::move(name);
    return push(std::move(s), out_ch);
}

std::size_t Network::conv(std::size_t from, std::size_t out_ch, std::string name) {
    return conv_like(LayerKind::Conv, from, out_ch, 1, std::move(name));
}
std::size_t Network::down_conv(std::size_t from, std::size_t out_ch, std::size_t stride, std::string name) {
    return conv_like(LayerKind::DownConv, from, out_ch, stride, std::move(name));
}
std::size_t Network::up_conv(std::size_t from, std::size_t out_ch, std::size_t stride, std::string name) {
    return conv_like(LayerKind::UpConv, from, out_ch, stride, std::move(name));
}

std::size_t Network::leaky_relu(std::size_t from, double slope, std::string name) {
    LayerSpec s;
    s.kind = LayerKind::LeakyRelu;
    s.inputs = {from};
    s.slope = slope;
    s.name = std::move(name);
    return push(std::move(s), channels_.at(from));
}

std::size_t Network::relu(std::size_t from, std::string name) {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    s.inputs = {from};
    s.name = std::move(name);
    return push(std::move(s), channels_.at(from));
}

std::size_t Network::sigmoid(std::size_t from, std::string name) {
    LayerSpec s;
    s.kind = LayerKind::Sigmoid;
    s.inputs = {from};
    s.name = std::move(name);
    return push(std::move(s), channels_.at(from));
}

std::size_t Network::concat(std::size_t a, std::size_t b, std::string name) {
    LayerSpec s;
    s.kind = LayerKind::Concat;
    s.inputs = {a, b};
    s.name = std::move(name);
    return push(std::move(s), channels_.at(a) + channels_.at(b));
}

std::size_t Network::skip_add(std::size_t a, std::size_t b, std::string name) {
    if (channels_.at(a) != channels_.at(b)) throw ConfigError("Network: skip_add channel mismatch");
    LayerSpec s;
    s.kind = LayerKind::SkipAdd;
    s.inputs = {a, b};
    s.name = std::move(name);
    return push(std::move(s), channels_.at(a));
}

void Network::set_output(std::size_t node) {
    if (node >= layers_.size()) throw ConfigError("Network: output node out of range");
    output_ = node;
    has_output_ = true;
}

Network Network::from_layers(std::vector<LayerSpec> layers, std::size_t output) {
    Network net;
    for (auto& l : layers) {
        std::size_t ch = 0;
        switch (l.kind) {
        case LayerKind::Input:
            ch = l.in_ch;
            net.num_inputs_ = std::max(net.num_inputs_, l.slot + 1);
            break;
        case LayerKind::Conv:
        case LayerKind::DownConv:
        case LayerKind::UpConv:
            ch = l.out_ch;
            net.num_params_ = std::max(net.num_params_, std::max(l.weight, l.bias) + 1);
            break;
        case LayerKind::Concat: ch = net.channels_.at(l.inputs.at(0)) + net.channels_.at(l.inputs.at(1)); break;
        default: ch = net.channels_.at(l.inputs.at(0)); break;
        }
        net.push(std::move(l), ch);
    }
    net.set_output(output);
    return net;
}

NetParams Network::zero_params() const {
    NetParams p;
    p.tensors.resize(num_params_);
    for (const auto& l : layers_) {
        if (!l.has_params()) continue;
        if (l.kind == LayerKind::UpConv)
            p.tensors[l.weight] = make_tensor({l.in_ch, l.out_ch, kKernel, kKernel});
        else
            p.tensors[l.weight] = make_tensor({l.out_ch, l.in_ch, kKernel, kKernel});
        p.tensors[l.bias] = make_tensor({l.out_ch});
    }
    for (const auto& t : p.tensors) {
        p.m.emplace_back(t.size(), 0.0);
        p.v.emplace_back(t.size(), 0.0);
    }
    return p;
}

NetParams Network::init_params(Rng& rng) const {
    NetParams p = zero_params();
    for (const auto& l : layers_) {
        if (!l.has_params()) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_ch * kKernel * kKernel));
        for (double& w : p.tensors[l.weight].data) w = rng.uniform(-bound, bound);
        for (double& b : p.tensors[l.bias].data) b = rng.uniform(-bound, bound);
    }
    return p;
}

Shape Network::output_shape(std::span<const Shape> inputs) const {
    std::vector<Shape> s(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        switch (l.kind) {
        case LayerKind::Input:
            if (l.slot >= inputs.size()) layer_error(l, i, "missing input slot " + std::to_string(l.slot));
            s[i] = inputs[l.slot];
            if (s[i].bands != l.in_ch)
                layer_error(l, i, "expected " + std::to_string(l.in_ch) + " channels, got " + std::to_string(s[i].bands));
            break;
        case LayerKind::Conv:
        case LayerKind::DownConv: {
            const Shape& a = s[l.inputs[0]];
            s[i] = {l.out_ch, conv_out(a.rows, l.stride), conv_out(a.cols, l.stride)};
            break;
        }
        case LayerKind::UpConv: {
            const Shape& a = s[l.inputs[0]];
            s[i] = {l.out_ch, a.rows * l.stride, a.cols * l.stride};
            break;
        }
        case LayerKind::Concat: {
            const Shape &a = s[l.inputs[0]], &b = s[l.inputs[1]];
            if (a.rows != b.rows || a.cols != b.cols)
                layer_error(l, i, "spatial mismatch " + to_string(a) + " vs " + to_string(b));
            s[i] = {a.bands + b.bands, a.rows, a.cols};
            break;
        }
        case LayerKind::SkipAdd:
            if (s[l.inputs[0]] != s[l.inputs[1]])
                layer_error(l, i, "shape mismatch " + to_string(s[l.inputs[0]]) + " vs " + to_string(s[l.inputs[1]]));
            s[i] = s[l.inputs[0]];
            break;
        default: s[i] = s[l.inputs[0]]; break;
        }
    }
    return s.at(output_);
}

ForwardResult forward(const Network& net, const NetParams& params, std::span<const HyperImage> inputs) {
    const auto& layers = net.layers();
    if (params.tensors.size() != net.num_param_tensors())
        throw ShapeError("forward: parameter store does not match the network");
    ForwardResult res;
    res.tape.net = &net;
    res.tape.params_version = params.version;
    auto& val = res.tape.values;
    val.resize(layers.size());
    std::vector<double> cols;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        switch (l.kind) {
        case LayerKind::Input: {
            if (l.slot >= inputs.size()) layer_error(l, i, "missing input slot " + std::to_string(l.slot));
            const HyperImage& in = inputs[l.slot];
            if (in.bands() != l.in_ch)
                layer_error(l, i, "expected " + std::to_string(l.in_ch) + " channels, got " + std::to_string(in.bands()));
            val[i] = in;
            break;
        }
        case LayerKind::Conv:
        case LayerKind::DownConv: {
            const HyperImage& x = val[l.inputs[0]];
            if (x.bands() != l.in_ch)
                layer_error(l, i, "expected " + std::to_string(l.in_ch) + " channels, got " + std::to_string(x.bands()));
            const std::size_t ho = conv_out(x.rows(), l.stride), wo = conv_out(x.cols(), l.stride);
            im2col(x, l.stride, ho, wo, cols);
            HyperImage y(l.out_ch, ho, wo);
            const auto& W = params.tensors[l.weight].data;
            MapM(y.data().data(), ix(l.out_ch), ix(ho * wo)).noalias() =
                CMapM(W.data(), ix(l.out_ch), ix(l.in_ch * 9)) * CMapM(cols.data(), ix(l.in_ch * 9), ix(ho * wo));
            add_bias(y, params.tensors[l.bias].data);
            val[i] = std::move(y);
            break;
        }
        case LayerKind::UpConv: {
            const HyperImage& x = val[l.inputs[0]];
            if (x.bands() != l.in_ch)
                layer_error(l, i, "expected " + std::to_string(l.in_ch) + " channels, got " + std::to_string(x.bands()));
            const std::size_t hi = x.rows(), wi = x.cols();
            HyperImage y(l.out_ch, hi * l.stride, wi * l.stride);
            cols.assign(l.out_ch * 9 * hi * wi, 0.0);
            const auto& W = params.tensors[l.weight].data;
            MapM(cols.data(), ix(l.out_ch * 9), ix(hi * wi)).noalias() =
                CMapM(W.data(), ix(l.in_ch), ix(l.out_ch * 9)).transpose() *
                CMapM(x.data().data(), ix(l.in_ch), ix(hi * wi));
            col2im(cols, l.stride, hi, wi, y);
            add_bias(y, params.tensors[l.bias].data);
            val[i] = std::move(y);
            break;
        }
        case LayerKind::LeakyRelu: {
            HyperImage y = val[l.inputs[0]];
            for (double& v : y.data())
                if (v < 0.0) v *= l.slope;
            val[i] = std::move(y);
            break;
        }
        case LayerKind::Relu: {
            HyperImage y = val[l.inputs[0]];
            for (double& v : y.data())
                if (v < 0.0) v = 0.0;
            val[i] = std::move(y);
            break;
        }
        case LayerKind::Sigmoid: {
            HyperImage y = val[l.inputs[0]];
            for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
            val[i] = std::move(y);
            break;
        }
        case LayerKind::Concat: {
            const HyperImage &a = val[l.inputs[0]], &b = val[l.inputs[1]];
            if (a.rows() != b.rows() || a.cols() != b.cols())
                layer_error(l, i, "spatial mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
            HyperImage y(a.bands() + b.bands(), a.rows(), a.cols());
            std::copy(a.data().begin(), a.data().end(), y.data().begin());
            std::copy(b.data().begin(), b.data().end(), y.data().begin() + static_cast<long>(a.size()));
            val[i] = std::move(y);
            break;
        }
        case LayerKind::SkipAdd: {
            const HyperImage &a = val[l.inputs[0]], &b = val[l.inputs[1]];
            if (a.shape() != b.shape())
                layer_error(l, i, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
            val[i] = a + b;
            break;
        }
        }
    }
    res.output = val[net.output()];
    return res;
}

HyperImage infer(const Network& net, const NetParams& params, std::span<const HyperImage> inputs) {
    return forward(net, params, inputs).output;
}

std::vector<HyperImage> backward(const Network& net, const NetParams& params, const Tape& tape,
                                 const HyperImage& grad_out, Gradients* accum) {
    if (tape.net != &net) throw Error("backward: tape was recorded by a different network");
    if (tape.params_version != params.version)
        throw Error("backward: stale tape (parameters were updated after the forward pass)");
    const auto& layers = net.layers();
    const auto& val = tape.values;
    if (val.size() != layers.size()) throw Error("backward: incomplete tape");
    if (grad_out.shape() != val[net.output()].shape()) throw ShapeError("backward: grad_out shape mismatch");
    if (accum && accum->g.size() != params.tensors.size()) *accum = Gradients::zeros_like(params);

    std::vector<HyperImage> grad(layers.size());
    std::vector<bool> has(layers.size(), false);
    auto accumulate = [&](std::size_t node, HyperImage g) {
        if (!has[node]) {
            grad[node] = std::move(g);
            has[node] = true;
        } else {
            grad[node] += g;
        }
    };
    accumulate(net.output(), grad_out);

    std::vector<HyperImage> input_grads(net.num_inputs());
    std::vector<double> cols, dcols;
    for (std::size_t ii = layers.size(); ii-- > 0;) {
        if (!has[ii]) continue;
        const auto& l = layers[ii];
        const HyperImage& g = grad[ii];
        switch (l.kind) {
        case LayerKind::Input:
            if (input_grads[l.slot].size() == 0)
                input_grads[l.slot] = g;
            else
                input_grads[l.slot] += g;
            break;
        case LayerKind::Conv:
        case LayerKind::DownConv: {
            const HyperImage& x = val[l.inputs[0]];
            const std::size_t ho = g.rows(), wo = g.cols(), P = ho * wo, K = l.in_ch * 9;
            const auto& W = params.tensors[l.weight].data;
            CMapM G(g.data().data(), ix(l.out_ch), ix(P));
            if (accum) {
                im2col(x, l.stride, ho, wo, cols);
                MapM(accum->g[l.weight].data(), ix(l.out_ch), ix(K)).noalias() +=
                    G * CMapM(cols.data(), ix(K), ix(P)).transpose();
                auto& gb = accum->g[l.bias];
                for (std::size_t c = 0; c < l.out_ch; ++c)
                    for (double v : g.band(c)) gb[c] += v;
            }
            dcols.assign(K * P, 0.0);
            MapM(dcols.data(), ix(K), ix(P)).noalias() = CMapM(W.data(), ix(l.out_ch), ix(K)).transpose() * G;
            HyperImage dx(x.shape());
            col2im(dcols, l.stride, ho, wo, dx);
            accumulate(l.inputs[0], std::move(dx));
            break;
        }
        case LayerKind::UpConv: {
            const HyperImage& x = val[l.inputs[0]];
            const std::size_t hi = x.rows(), wi = x.cols(), P = hi * wi, K = l.out_ch * 9;
            const auto& W = params.tensors[l.weight].data;
            im2col(g, l.stride, hi, wi, dcols);
            CMapM DC(dcols.data(), ix(K), ix(P));
            if (accum) {
                MapM(accum->g[l.weight].data(), ix(l.in_ch), ix(K)).noalias() +=
                    CMapM(x.data().data(), ix(l.in_ch), ix(P)) * DC.transpose();
                auto& gb = accum->g[l.bias];
                for (std::size_t c = 0; c < l.out_ch; ++c)
                    for (double v : g.band(c)) gb[c] += v;
            }
            HyperImage dx(x.shape());
            MapM(dx.data().data(), ix(l.in_ch), ix(P)).noalias() = CMapM(W.data(), ix(l.in_ch), ix(K)) * DC;
            accumulate(l.inputs[0], std::move(dx));
            break;
        }
        case LayerKind::LeakyRelu: {
            const HyperImage& x = val[l.inputs[0]];
            HyperImage dx = g;
            for (std::size_t k = 0; k < dx.size(); ++k)
                if (x.data()[k] < 0.0) dx.data()[k] *= l.slope;
            accumulate(l.inputs[0], std::move(dx));
            break;
        }
        case LayerKind::Relu: {
            const HyperImage& x = val[l.inputs[0]];
            HyperImage dx = g;
            for (std::size_t k = 0; k < dx.size(); ++k)
                if (x.data()[k] <= 0.0) dx.data()[k] = 0.0;
            accumulate(l.inputs[0], std::move(dx));
            break;
        }
        case LayerKind::Sigmoid: {
            const HyperImage& y = val[ii];
            HyperImage dx = g;
            for (std::size_t k = 0; k < dx.size(); ++k) dx.data()[k] *= y.data()[k] * (1.0 - y.data()[k]);
            accumulate(l.inputs[0], std::move(dx));
            break;
        }
        case LayerKind::Concat: {
            const HyperImage& a = val[l.inputs[0]];
            const HyperImage& b = val[l.inputs[1]];
            HyperImage da(a.shape()), db(b.shape());
            std::copy(g.data().begin(), g.data().begin() + static_cast<long>(a.size()), da.data().begin());
            std::copy(g.data().begin() + static_cast<long>(a.size()), g.data().end(), db.data().begin());
            accumulate(l.inputs[0], std::move(da));
            accumulate(l.inputs[1], std::move(db));
            break;
        }
        case LayerKind::SkipAdd:
            accumulate(l.inputs[0], g);
            accumulate(l.inputs[1], g);
            break;
        }
    }
    // Inputs that do not reach the output get zero gradients.
    for (const auto& l : layers)
        if (l.kind == LayerKind::Input && input_grads[l.slot].size() == 0)
            input_grads[l.slot] = HyperImage(val[&l - layers.data()].shape());
    return input_grads;
}

void adam_step(NetParams& params, const Gradients& grads, const AdamConfig& cfg) {
    if (grads.g.size() != params.tensors.size()) throw ShapeError("adam_step: gradient/parameter count mismatch");
    params.step += 1;
    const double t = static_cast<double>(params.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        auto& w = params.tensors[i].data;
        const auto& g = grads.g[i];
        if (g.size() != w.size()) throw ShapeError("adam_step: gradient tensor shape mismatch");
        auto& m = params.m[i];
        auto& v = params.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            w[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
        }
    }
    params.version += 1;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("NNW1: truncated checkpoint");
    return v;
}

double get_f64(std::istream& is) {
    double v;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw IoError("NNW1: truncated checkpoint");
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net, const NetParams& params) {
    static_assert(std::endian::native == std::endian::little);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write("NNW1", 4);
    put_u32(os, 1);
    put_u32(os, 8);
    put_u32(os, static_cast<std::uint32_t>(net.layers().size()));
    for (const auto& l : net.layers()) {
        os.put(static_cast<char>(l.kind));
        put_u32(os, static_cast<std::uint32_t>(l.slot));
        put_u32(os, static_cast<std::uint32_t>(l.in_ch));
        put_u32(os, static_cast<std::uint32_t>(l.out_ch));
        put_u32(os, static_cast<std::uint32_t>(l.stride));
        put_f64(os, l.slope);
        put_u32(os, static_cast<std::uint32_t>(l.weight));
        put_u32(os, static_cast<std::uint32_t>(l.bias));
        put_u32(os, static_cast<std::uint32_t>(l.inputs.size()));
        for (auto in : l.inputs) put_u32(os, static_cast<std::uint32_t>(in));
        put_u32(os, static_cast<std::uint32_t>(l.name.size()));
        os.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
    }
    put_u32(os, static_cast<std::uint32_t>(net.output()));
    put_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& t : params.tensors) {
        put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
    }
    if (!os) throw IoError("write failed: " + path.string());
}

std::pair<Network, NetParams> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "NNW1", 4) != 0) throw IoError(path.string() + ": bad NNW1 magic");
    if (get_u32(is) != 1) throw IoError(path.string() + ": unsupported NNW1 version");
    if (get_u32(is) != 8) throw IoError(path.string() + ": only float64 checkpoints are supported");
    const std::uint32_t nl = get_u32(is);
    std::vector<LayerSpec> layers(nl);
    for (auto& l : layers) {
        char kind;
        if (!is.get(kind)) throw IoError("NNW1: truncated checkpoint");
        if (static_cast<std::uint8_t>(kind) > static_cast<std::uint8_t>(LayerKind::SkipAdd))
            throw IoError("NNW1: unknown layer kind");
        l.kind = static_cast<LayerKind>(kind);
        l.slot = get_u32(is);
        l.in_ch = get_u32(is);
        l.out_ch = get_u32(is);
        l.stride = get_u32(is);
        l.slope = get_f64(is);
        l.weight = get_u32(is);
        l.bias = get_u32(is);
        l.inputs.resize(get_u32(is));
        for (auto& in : l.inputs) in = get_u32(is);
        std::string name(get_u32(is), '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("NNW1: truncated checkpoint");
        l.name = std::move(name);
    }
    const std::uint32_t out = get_u32(is);
    Network net;
    try {
        net = Network::from_layers(std::move(layers), out);
    } catch (const Error& e) {
        throw IoError(path.string() + ": invalid layer block: " + e.what());
    }
    NetParams params = net.zero_params();
    if (get_u32(is) != params.tensors.size()) throw IoError(path.string() + ": parameter count mismatch");
    for (auto& t : params.tensors) {
        const std::uint32_t nd = get_u32(is);
        if (nd != t.dims.size()) throw IoError(path.string() + ": tensor rank mismatch");
        for (auto& d : t.dims)
            if (get_u32(is) != d) throw IoError(path.string() + ": tensor shape mismatch");
        if (!is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8)))
            throw IoError("NNW1: truncated checkpoint");
    }
    return {std::move(net), std::move(params)};
}

Network build_dual_branch_net(const DualBranchArch& a) {
    if (a.factor < 1 || !std::has_single_bit(a.factor))
        throw ConfigError("dual-branch net: spatial factor must be a power of two, got " + std::to_string(a.factor));
    if (a.lrhs_bands == 0 || a.hrls_bands == 0 || a.out_bands == 0) throw ConfigError("dual-branch net: zero bands");
    Network n;
    const std::size_t c1 = a.branch_channels, c2 = a.trunk_channels;

    const auto lr_in = n.input(0, a.lrhs_bands, "lrhs");
    auto lr = n.leaky_relu(n.conv(lr_in, c1, "lr_conv1"));
    lr = n.leaky_relu(n.conv(lr, c1, "lr_conv2"));
    for (std::size_t f = a.factor, i = 0; f > 1; f /= 2, ++i) lr = n.up_conv(lr, c1, 2, "lr_up" + std::to_string(i));

    const auto hr_in = n.input(1, a.hrls_bands, "hrls");
    auto hr = n.leaky_relu(n.conv(hr_in, c1, "hr_conv1"));
    hr = n.leaky_relu(n.conv(hr, c1, "hr_conv2"));
    hr = n.down_conv(hr, c1, 2, "hr_down");
    hr = n.up_conv(hr, c1, 2, "hr_up");

    const auto cat = n.concat(lr, hr, "concat");
    const auto h0 = n.leaky_relu(n.conv(cat, c2, "trunk1"));
    const auto h1 = n.leaky_relu(n.conv(h0, c2, "trunk2"));
    const auto s1 = n.skip_add(h1, h0, "skip1");
    const auto h2 = n.leaky_relu(n.conv(s1, c2, "trunk3"));
    const auto h3 = n.leaky_relu(n.conv(h2, c2, "trunk4"));
    const auto s2 = n.skip_add(h3, s1, "skip2");
    auto out = n.conv(s2, a.out_bands, "head");
    if (a.final_relu) out = n.relu(out, "nonneg");
    n.set_output(out);
    return n;
}

Network build_discriminator(const DiscriminatorArch& a) {
    if (a.bands == 0 || a.channels == 0) throw ConfigError("discriminator: zero bands or channels");
    Network n;
    const std::size_t c = a.channels;
    auto x = n.input(0, a.bands, "image");
    x = n.leaky_relu(n.down_conv(x, c, 2, "down1"));
    x = n.leaky_relu(n.down_conv(x, 2 * c, 2, "down2"));
    x = n.leaky_relu(n.down_conv(x, 4 * c, 2, "down3"));
    x = n.leaky_relu(n.conv(x, 4 * c, "flat1"));
    x = n.conv(x, 1, "flat2");
    n.set_output(n.sigmoid(x, "prob"));
    return n;
}

} // namespace cdgan::nn
