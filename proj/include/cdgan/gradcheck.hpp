#pragma once

#include <span>
#include <string>
#include <vector>

#include "cdgan/gan.hpp"
#include "cdgan/nn.hpp"

namespace cdgan {

// Each tensor is compared at steps eps and eps/10 and the smaller relative
// error is reported.
struct TensorCheck {
    std::string name;  // "param[3]" or "input[0]"
    double rel_error;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    double max_rel_error = 0.0;
};

/// Central differences of the scalar <w, net(inputs)> for a seeded random w,
/// against reverse-mode gradients of every parameter tensor and input.
GradCheckReport check_network_gradients(const nn::Network& net, const nn::NetParams& params,
                                        std::span<const HyperImage> inputs, std::uint64_t seed, double eps = 1e-5);

/// Central differences of total_C over a single-pair batch against
/// generator_gradient, for every CI parameter tensor.
GradCheckReport check_generator_gradients(const GeneratorState& state, const Discriminator& d, const DatasetPair& pair,
                                          const TrainConfig& cfg, double eps = 1e-5);

/// Same for -L_adv w.r.t. the discriminator parameters.
GradCheckReport check_discriminator_gradients(const GeneratorState& state, const Discriminator& d,
                                              const DatasetPair& pair, const TrainConfig& cfg, double eps = 1e-5);

} // namespace cdgan
