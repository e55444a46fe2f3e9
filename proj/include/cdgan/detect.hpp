#pragma once

#include <vector>

#include "cdgan/core.hpp"

namespace cdgan {

struct EnergyMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> e; // row-major, length rows*cols

    std::size_t size() const { return e.size(); }
};

/// Per-pixel l2 norm of the change image's spectral columns.
EnergyMap cva_energy(const HyperImage& ci);

/// Median filter over a (2r+1)^2 window with symmetric boundary; r = 0 is the identity.
EnergyMap smooth(const EnergyMap& e, std::size_t radius);

/// Otsu threshold from a 256-bin histogram over [min, max] of e. The
/// returned value is the upper edge of the last bin of the lower class;
/// ties go to the smaller threshold. Throws on a constant map.
double otsu_threshold(const EnergyMap& e);

/// d_i = 1 iff e_i > tau.
BinaryMap threshold_map(const EnergyMap& e, double tau);

HyperImage energy_to_image(const EnergyMap& e);
EnergyMap energy_from_image(const HyperImage& img);

} // namespace cdgan
