#include "cdgan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace cdgan {

RocCurve roc(const EnergyMap& e, const BinaryMap& dref) {
    if (e.rows != dref.rows() || e.cols != dref.cols()) throw ShapeError("roc: energy map and reference differ in shape");
    const std::size_t n = e.size();
    const std::size_t positives = dref.count();
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0)
        throw NumericError("roc: degenerate reference map (needs both changed and unchanged pixels)");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return e.e[a] > e.e[b]; });

    RocCurve c;
    c.points.push_back({n ? e.e[order[0]] : 0.0, 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < n;) {
        const double v = e.e[order[i]];
        while (i < n && e.e[order[i]] == v) {
            (dref[order[i]] ? tp : fp) += 1;
            ++i;
        }
        const double tau = i < n ? e.e[order[i]] : -std::numeric_limits<double>::infinity();
        c.points.push_back({tau, static_cast<double>(fp) / static_cast<double>(negatives),
                            static_cast<double>(tp) / static_cast<double>(positives)});
    }
    c.auc = auc(c);
    c.dist = dist(c);
    return c;
}

double auc(const RocCurve& curve) {
    double a = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto &p = curve.points[i - 1], &q = curve.points[i];
        a += (q.pfa - p.pfa) * (q.pd + p.pd) * 0.5;
    }
    return a;
}

double dist(const RocCurve& curve) {
    // f = PD + PFA - 1 goes from -1 at (0,0) to +1 at (1,1); find its first zero.
    const auto& pts = curve.points;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const double f0 = pts[i - 1].pd + pts[i - 1].pfa - 1.0;
        const double f1 = pts[i].pd + pts[i].pfa - 1.0;
        if (f1 >= 0.0) {
            const double t = f1 == f0 ? 0.0 : -f0 / (f1 - f0);
            const double pfa = pts[i - 1].pfa + t * (pts[i].pfa - pts[i - 1].pfa);
            return 1.0 - pfa;
        }
    }
    return 0.0;
}

std::string roc_csv(const RocCurve& curve) {
    std::string out = "tau,pfa,pd\n";
    char buf[128];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.tau, p.pfa, p.pd);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "# auc=%.17g,dist=%.17g\n", curve.auc, curve.dist);
    out += buf;
    return out;
}

} // namespace cdgan
