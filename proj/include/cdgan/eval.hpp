#pragma once

#include <string>
#include <vector>

#include "cdgan/core.hpp"
#include "cdgan/detect.hpp"

namespace cdgan {

struct RocPoint {
    double tau; // strict-threshold value producing this point (e > tau); -inf for (1,1)
    double pfa;
    double pd;
};

struct RocCurve {
    std::vector<RocPoint> points; // from (0,0) to (1,1), nondecreasing in both coordinates
    double auc = 0.0;
    double dist = 0.0;
};

/// Sweeps tau over the distinct energy values (ties collapse to one point).
/// Requires at least one changed and one unchanged reference pixel.
RocCurve roc(const EnergyMap& e, const BinaryMap& dref);

/// Trapezoidal area under the curve.
double auc(const RocCurve& curve);

/// Intersection of the curve with the anti-diagonal PD = 1 - PFA, reported
/// as its distance from the no-detection corner (PFA, PD) = (1, 0) divided
/// by sqrt(2): 1 for a perfect detector, 0.5 for chance.
double dist(const RocCurve& curve);

/// CSV with header "tau,pfa,pd" and a trailing "# auc=...,dist=..." line.
std::string roc_csv(const RocCurve& curve);

} // namespace cdgan
