#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "cdgan/eval.hpp"
#include "doctest.h"

using namespace cdgan;

namespace {

struct Case {
    EnergyMap e;
    BinaryMap d;
};

Case random_case(std::size_t n, Rng& rng, std::size_t levels) {
    Case c{EnergyMap{1, n, {}}, BinaryMap(1, n)};
    for (std::size_t i = 0; i < n; ++i) {
        const bool changed = i == 0 || (i != 1 && rng.uniform() < 0.4);
        c.d.set(i, changed);
        // Few levels force ties.
        c.e.e.push_back(static_cast<double>(rng.index(levels)) + (changed ? 1.0 : 0.0));
    }
    return c;
}

// All (PFA, PD) pairs of strict thresholds at every distinct value, plus (1,1).
std::set<std::pair<double, double>> brute_force_points(const Case& c) {
    std::set<std::pair<double, double>> pts;
    std::vector<double> taus(c.e.e.begin(), c.e.e.end());
    taus.push_back(-std::numeric_limits<double>::infinity());
    const double np = static_cast<double>(c.d.count()), nn = static_cast<double>(c.e.size()) - np;
    for (double tau : taus) {
        double tp = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < c.e.size(); ++i)
            if (c.e.e[i] > tau) (c.d[i] ? tp : fp) += 1.0;
        pts.insert({fp / nn, tp / np});
    }
    return pts;
}

double mann_whitney(const Case& c) {
    double s = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < c.e.size(); ++i)
        for (std::size_t j = 0; j < c.e.size(); ++j) {
            if (!c.d[i] || c.d[j]) continue;
            pairs += 1.0;
            s += c.e.e[i] > c.e.e[j] ? 1.0 : c.e.e[i] == c.e.e[j] ? 0.5 : 0.0;
        }
    return s / pairs;
}

// Intersection of each segment with the line PFA + PD = 1, by solving the
// 2x2 system for the segment parameter; distance to (1,0) over sqrt(2).
double geometric_dist(const std::vector<std::pair<double, double>>& poly) {
    for (std::size_t i = 1; i < poly.size(); ++i) {
        const auto [x0, y0] = poly[i - 1];
        const auto [x1, y1] = poly[i];
        const double dx = x1 - x0, dy = y1 - y0;
        const double denom = dx + dy;
        if (denom == 0.0) continue;
        const double t = (1.0 - x0 - y0) / denom;
        if (t < 0.0 || t > 1.0) continue;
        const double px = x0 + t * dx, py = y0 + t * dy;
        return std::hypot(px - 1.0, py) / std::sqrt(2.0);
    }
    return 0.0;
}

} // namespace

TEST_CASE("perfect separator") {
    const EnergyMap e{1, 4, {0.1, 0.2, 0.8, 0.9}};
    const BinaryMap d(1, 4, {0, 0, 1, 1});
    const RocCurve c = roc(e, d);
    bool through_corner = false;
    for (const auto& p : c.points) through_corner |= p.pfa == 0.0 && p.pd == 1.0;
    CHECK(through_corner);
    CHECK(c.auc == 1.0);
    CHECK(c.dist == 1.0);
}

TEST_CASE("constant energy is the chance diagonal") {
    const EnergyMap e{1, 4, {0.5, 0.5, 0.5, 0.5}};
    const BinaryMap d(1, 4, {0, 1, 0, 1});
    const RocCurve c = roc(e, d);
    REQUIRE(c.points.size() == 2);
    CHECK(c.points[0].pfa == 0.0);
    CHECK(c.points[0].pd == 0.0);
    CHECK(c.points[1].pfa == 1.0);
    CHECK(c.points[1].pd == 1.0);
    CHECK(c.auc == 0.5);
    CHECK(c.dist == 0.5);
}

TEST_CASE("degenerate references and shape mismatch") {
    const EnergyMap e{1, 3, {0.1, 0.2, 0.3}};
    CHECK_THROWS_AS(roc(e, BinaryMap(1, 3)), NumericError);
    CHECK_THROWS_AS(roc(e, BinaryMap(1, 3, {1, 1, 1})), NumericError);
    CHECK_THROWS_AS(roc(e, BinaryMap(3, 1, {1, 0, 0})), ShapeError);
}

TEST_CASE("ROC points match brute-force threshold enumeration") {
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        const Case c = random_case(2 + rng.index(29), rng, 1 + rng.index(6));
        const RocCurve curve = roc(c.e, c.d);
        std::set<std::pair<double, double>> got;
        for (const auto& p : curve.points) got.insert({p.pfa, p.pd});
        CHECK(got == brute_force_points(c));
        for (std::size_t i = 1; i < curve.points.size(); ++i) {
            CHECK(curve.points[i].pfa >= curve.points[i - 1].pfa);
            CHECK(curve.points[i].pd >= curve.points[i - 1].pd);
        }
        CHECK(std::abs(curve.auc - mann_whitney(c)) <= 1e-12);
        CHECK(curve.auc == auc(curve));
        std::vector<std::pair<double, double>> poly;
        for (const auto& p : curve.points) poly.push_back({p.pfa, p.pd});
        CHECK(std::abs(curve.dist - geometric_dist(poly)) <= 1e-12);
    }
}

TEST_CASE("twenty-pixel Mann-Whitney case") {
    Rng rng(2);
    Case c{EnergyMap{4, 5, {}}, BinaryMap(4, 5)};
    for (std::size_t i = 0; i < 20; ++i) {
        c.d.set(i, i % 3 == 0);
        c.e.e.push_back(rng.uniform() + (i % 3 == 0 ? 0.3 : 0.0));
    }
    CHECK(std::abs(roc(c.e, c.d).auc - mann_whitney(c)) <= 1e-12);
}

TEST_CASE("dist on a hand-built piecewise-linear curve") {
    RocCurve c;
    c.points = {{0, 0.0, 0.0}, {0, 0.1, 0.6}, {0, 0.4, 0.8}, {0, 1.0, 1.0}};
    // Segment (0.1,0.6)-(0.4,0.8) meets PFA + PD = 1 at t = 0.6, i.e. (0.28, 0.72).
    CHECK(dist(c) == doctest::Approx(0.72).epsilon(1e-14));
    CHECK(dist(c) == doctest::Approx(geometric_dist({{0, 0}, {0.1, 0.6}, {0.4, 0.8}, {1, 1}})).epsilon(1e-14));
}

TEST_CASE("AUC invariances") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const Case c = random_case(25, rng, 8);
        const double a = roc(c.e, c.d).auc;
        Case m = c;
        for (double& v : m.e.e) v = std::exp(2.0 * v) + 3.0;
        CHECK(std::abs(roc(m.e, m.d).auc - a) <= 1e-12);
        Case n = c;
        for (std::size_t i = 0; i < n.e.size(); ++i)
            if (n.d[i]) n.e.e[i] += 0.7;
        CHECK(roc(n.e, n.d).auc >= a - 1e-12);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
}

TEST_CASE("ROC CSV layout") {
    const RocCurve c = roc(EnergyMap{1, 2, {0.0, 1.0}}, BinaryMap(1, 2, {0, 1}));
    const std::string csv = roc_csv(c);
    CHECK(csv.rfind("tau,pfa,pd\n", 0) == 0);
    CHECK(csv.find("# auc=1,dist=1") != std::string::npos);
}
