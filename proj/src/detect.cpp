#include "cdgan/detect.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cdgan/operators.hpp"

namespace cdgan {

EnergyMap cva_energy(const HyperImage& ci) {
    EnergyMap out{ci.rows(), ci.cols(), std::vector<double>(ci.pixels(), 0.0)};
    for (std::size_t b = 0; b < ci.bands(); ++b) {
        auto plane = ci.band(b);
        for (std::size_t p = 0; p < ci.pixels(); ++p) out.e[p] += plane[p] * plane[p];
    }
    for (double& v : out.e) v = std::sqrt(v);
    return out;
}

EnergyMap smooth(const EnergyMap& e, std::size_t radius) {
    if (radius == 0) return e;
    EnergyMap out{e.rows, e.cols, std::vector<double>(e.size())};
    const long r = static_cast<long>(radius);
    std::vector<double> win;
    win.reserve((2 * radius + 1) * (2 * radius + 1));
    for (std::size_t i = 0; i < e.rows; ++i)
        for (std::size_t j = 0; j < e.cols; ++j) {
            win.clear();
            for (long di = -r; di <= r; ++di)
                for (long dj = -r; dj <= r; ++dj)
                    win.push_back(e.e[reflect_index(static_cast<long>(i) + di, e.rows) * e.cols +
                                      reflect_index(static_cast<long>(j) + dj, e.cols)]);
            auto mid = win.begin() + static_cast<long>(win.size() / 2);
            std::nth_element(win.begin(), mid, win.end());
            out.e[i * e.cols + j] = *mid;
        }
    return out;
}

double otsu_threshold(const EnergyMap& e) {
    if (e.e.empty()) throw NumericError("otsu_threshold: empty energy map");
    const auto [lo_it, hi_it] = std::minmax_element(e.e.begin(), e.e.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) throw NumericError("otsu_threshold: degenerate histogram (constant energy map)");
    constexpr std::size_t kBins = 256;
    const double width = (hi - lo) / kBins;
    std::array<double, kBins> hist{};
    for (double v : e.e) {
        auto b = static_cast<std::size_t>((v - lo) / width);
        hist[std::min(b, kBins - 1)] += 1.0;
    }
    const double total = static_cast<double>(e.e.size());
    double sum_all = 0.0;
    for (std::size_t b = 0; b < kBins; ++b) sum_all += static_cast<double>(b) * hist[b];

    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    std::size_t best_bin = 0;
    for (std::size_t t = 0; t + 1 < kBins; ++t) {
        w0 += hist[t];
        sum0 += static_cast<double>(t) * hist[t];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_bin = t;
        }
    }
    return lo + width * static_cast<double>(best_bin + 1);
}

BinaryMap threshold_map(const EnergyMap& e, double tau) {
    BinaryMap d(e.rows, e.cols);
    for (std::size_t i = 0; i < e.size(); ++i) d.set(i, e.e[i] > tau);
    return d;
}

HyperImage energy_to_image(const EnergyMap& e) { return HyperImage(Shape{1, e.rows, e.cols}, e.e); }

EnergyMap energy_from_image(const HyperImage& img) {
    if (img.bands() != 1) return cva_energy(img);
    return {img.rows(), img.cols(), img.data()};
}

} // namespace cdgan
