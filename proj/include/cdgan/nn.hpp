#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cdgan/core.hpp"

namespace cdgan::nn {

enum class LayerKind : std::uint8_t {
    Input = 0,
    Conv = 1,     // 3x3, stride 1, zero padding 1
    DownConv = 2, // 3x3, stride s
    UpConv = 3,   // transposed DownConv: adjoint of a stride-s conv with the same kernel
    LeakyRelu = 4,
    Relu = 5,
    Sigmoid = 6,
    Concat = 7,   // channel concatenation
    SkipAdd = 8,
};

std::string to_string(LayerKind k);

inline constexpr std::size_t kKernel = 3;

struct LayerSpec {
    LayerKind kind = LayerKind::Input;
    std::vector<std::size_t> inputs; // producer node indices
    std::size_t slot = 0;            // Input: index into the input list
    std::size_t in_ch = 0, out_ch = 0;
    std::size_t stride = 1;
    double slope = 0.2;
    std::size_t weight = 0, bias = 0; // parameter tensor indices for conv kinds
    std::string name;

    bool has_params() const {
        return kind == LayerKind::Conv || kind == LayerKind::DownConv || kind == LayerKind::UpConv;
    }
};

struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> data;

    std::size_t size() const { return data.size(); }
};

/// Parameter store with per-tensor Adam moments.
struct NetParams {
    std::vector<Tensor> tensors;
    std::vector<std::vector<double>> m, v;
    std::uint64_t step = 0;
    std::uint64_t version = 0; // bumped on every update; tapes record it

    std::size_t count() const;
    /// FNV-1a over the raw parameter bytes.
    std::uint64_t checksum() const;
};

/// Accumulated parameter gradients, shaped like NetParams::tensors.
struct Gradients {
    std::vector<std::vector<double>> g;

    static Gradients zeros_like(const NetParams& p);
    void add(const Gradients& o, double scale = 1.0);
    void scale(double s);
    double squared_norm() const;
};

/// Directed acyclic layer graph built in topological order.
class Network {
public:
    std::size_t input(std::size_t slot, std::size_t channels, std::string name = {});
    std::size_t conv(std::size_t from, std::size_t out_ch, std::string name = {});
    std::size_t down_conv(std::size_t from, std::size_t out_ch, std::size_t stride = 2, std::string name = {});
    std::size_t up_conv(std::size_t from, std::size_t out_ch, std::size_t stride = 2, std::string name = {});
    std::size_t leaky_relu(std::size_t from, double slope = 0.2, std::string name = {});
    std::size_t relu(std::size_t from, std::string name = {});
    std::size_t sigmoid(std::size_t from, std::string name = {});
    std::size_t concat(std::size_t a, std::size_t b, std::string name = {});
    std::size_t skip_add(std::size_t a, std::size_t b, std::string name = {});
    void set_output(std::size_t node);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::size_t output() const { return output_; }
    std::size_t num_inputs() const { return num_inputs_; }
    std::size_t num_param_tensors() const { return num_params_; }
    std::size_t channels(std::size_t node) const { return channels_.at(node); }

    /// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
    /// weights and biases.
    NetParams init_params(Rng& rng) const;
    /// All-zero weights and biases.
    NetParams zero_params() const;

    Shape output_shape(std::span<const Shape> inputs) const;

    /// Rebuilds a network from serialized layer specs.
    static Network from_layers(std::vector<LayerSpec> layers, std::size_t output);

private:
    std::size_t push(LayerSpec spec, std::size_t channels);
    std::size_t conv_like(LayerKind kind, std::size_t from, std::size_t out_ch, std::size_t stride, std::string name);

    std::vector<LayerSpec> layers_;
    std::vector<std::size_t> channels_;
    std::size_t output_ = 0;
    std::size_t num_inputs_ = 0;
    std::size_t num_params_ = 0;
    bool has_output_ = false;
};

/// Activation record of one forward pass.
struct Tape {
    const Network* net = nullptr;
    std::uint64_t params_version = 0;
    std::vector<HyperImage> values;
};

struct ForwardResult {
    HyperImage output;
    Tape tape;
};

ForwardResult forward(const Network& net, const NetParams& params, std::span<const HyperImage> inputs);
HyperImage infer(const Network& net, const NetParams& params, std::span<const HyperImage> inputs);

/// Reverse-mode pass. Parameter gradients are accumulated into `accum` when
/// non-null; gradients w.r.t. every network input are returned.
std::vector<HyperImage> backward(const Network& net, const NetParams& params, const Tape& tape,
                                 const HyperImage& grad_out, Gradients* accum);

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

void adam_step(NetParams& params, const Gradients& grads, const AdamConfig& cfg);

// NNW1 checkpoint: "NNW1", u32 version, u32 scalar width (8), layer block,
// output node, then parameter tensors in declaration order (LE float64).
void save_checkpoint(const std::filesystem::path& path, const Network& net, const NetParams& params);
std::pair<Network, NetParams> load_checkpoint(const std::filesystem::path& path);

struct DualBranchArch {
    std::size_t lrhs_bands = 0;  // m1
    std::size_t hrls_bands = 0;  // m2
    std::size_t out_bands = 0;   // m
    std::size_t factor = 4;      // spatial ratio, power of two
    std::size_t branch_channels = 32;
    std::size_t trunk_channels = 64;
    bool final_relu = true;
};

/// Two feature-extraction branches (LRHS upsampled by stacked up-convs,
/// HRLS through a down/up pair) concatenated into a residual conv trunk.
/// Input slot 0 is the LRHS image, slot 1 the HRLS image.
Network build_dual_branch_net(const DualBranchArch& arch);

struct DiscriminatorArch {
    std::size_t bands = 0;
    std::size_t channels = 16;
};

/// Three stride-2 down-convs and two flat convs ending in a sigmoid map.
Network build_discriminator(const DiscriminatorArch& arch);

} // namespace cdgan::nn
