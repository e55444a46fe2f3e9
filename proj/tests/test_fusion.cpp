#include <cmath>

#include "cdgan/fusion.hpp"
#include "doctest.h"

using namespace cdgan;

namespace {

HyperImage random_image(std::size_t b, std::size_t r, std::size_t c, Rng& rng, double lo = 0.0, double hi = 1.0) {
    HyperImage x(b, r, c);
    for (double& v : x.data()) v = rng.uniform(lo, hi);
    return x;
}

// Dense matrix of a linear image map, one column per basis image.
template <class F>
Eigen::MatrixXd dense(F&& op, Shape in) {
    HyperImage e(in);
    const HyperImage probe = op(e);
    Eigen::MatrixXd m(static_cast<long>(probe.size()), static_cast<long>(in.size()));
    for (std::size_t j = 0; j < in.size(); ++j) {
        e.data()[j] = 1.0;
        const HyperImage col = op(e);
        e.data()[j] = 0.0;
        m.col(static_cast<long>(j)) = Eigen::Map<const Eigen::VectorXd>(col.data().data(), static_cast<long>(col.size()));
    }
    return m;
}

Eigen::VectorXd vec(const HyperImage& x) {
    return Eigen::Map<const Eigen::VectorXd>(x.data().data(), static_cast<long>(x.size()));
}

std::vector<DatasetPair> desk_no_change(std::size_t count, const DegradationPair& ops) {
    std::vector<DatasetPair> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        Rng rng(Rng::derive_seed(7, i));
        out.push_back(no_change_pair(unmix(procedural_reference(32, 64, 64, 4, rng), 4), ops, i));
    }
    return out;
}

} // namespace

TEST_CASE("CG matches a dense direct solve on 8x8x4") {
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
    const double lambda = 1e-3;
    const Shape xs{4, 8, 8};
    const Eigen::MatrixXd a = dense([&](const HyperImage& x) { return normal_operator(ops, lambda, x); }, xs);
    const Eigen::MatrixXd h1 = dense([&](const HyperImage& x) { return ops.spatial.apply(x); }, xs);
    const Eigen::MatrixXd h2 = dense([&](const HyperImage& x) { return ops.spectral.apply(x); }, xs);
    const Eigen::MatrixXd oracle_a =
        h1.transpose() * h1 + h2.transpose() * h2 + lambda * Eigen::MatrixXd::Identity(a.rows(), a.cols());
    CHECK((a - oracle_a).norm() <= 1e-12 * oracle_a.norm());

    Rng rng(1);
    const HyperImage y1 = random_image(4, 4, 4, rng), y2 = random_image(2, 8, 8, rng);
    const FusionBackend backend(ModelBasedFusion{lambda, 2000, 1e-14});
    const FusionTrace tr = backend.fuse_traced(y1, y2, ops);
    const Eigen::VectorXd rhs = h1.transpose() * vec(y1) + h2.transpose() * vec(y2);
    const Eigen::VectorXd direct = oracle_a.ldlt().solve(rhs);
    CHECK((vec(tr.unclamped) - direct).norm() <= 1e-8 * direct.norm());
    CHECK(tr.stats.converged);
    CHECK(tr.fused.all_nonnegative());
    for (std::size_t i = 0; i < tr.fused.size(); ++i) CHECK(tr.fused.data()[i] == std::max(0.0, tr.unclamped.data()[i]));
}

TEST_CASE("zero inputs fuse to zero") {
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
    const HyperImage x = fuse(FusionBackend(ModelBasedFusion{}), HyperImage(4, 4, 4), HyperImage(2, 8, 8), ops);
    CHECK(x.shape() == Shape{4, 8, 8});
    CHECK(frobenius_norm(x) == 0.0);
}

TEST_CASE("CG objective is monotone") {
    const DegradationPair ops{SpatialOp(1.3, 2), SpectralOp::band_average(6, 3)};
    Rng rng(2);
    const HyperImage y1 = random_image(6, 6, 6, rng), y2 = random_image(2, 12, 12, rng);
    const double lambda = 1e-3;
    const HyperImage b = ops.spatial.adjoint(y1) + ops.spectral.adjoint(y2);
    const std::function<double(const HyperImage&)> objective = [&](const HyperImage& x) {
        const double d1 = frobenius_norm(ops.spatial.apply(x) - y1), d2 = frobenius_norm(ops.spectral.apply(x) - y2);
        return d1 * d1 + d2 * d2 + lambda * dot(x, x);
    };
    CgStats st;
    (void)cg_normal_solve(ops, lambda, b, 200, 1e-12, &st, nullptr, &objective);
    REQUIRE(st.objective_history.size() >= 3);
    for (std::size_t i = 1; i < st.objective_history.size(); ++i)
        CHECK(st.objective_history[i] <= st.objective_history[i - 1] * (1.0 + 1e-12));
}

TEST_CASE("non-convergence is flagged, not thrown") {
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
    Rng rng(3);
    const FusionBackend backend(ModelBasedFusion{1e-6, 2, 1e-14});
    const FusionTrace tr = backend.fuse_traced(random_image(4, 4, 4, rng), random_image(2, 8, 8, rng), ops);
    CHECK(!tr.stats.converged);
    CHECK(tr.stats.iterations == 2);
}

TEST_CASE("shape checks") {
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
    const FusionBackend backend(ModelBasedFusion{});
    CHECK_THROWS_AS(backend.fuse(HyperImage(4, 4, 4), HyperImage(3, 8, 8), ops), ShapeError);
    CHECK_THROWS_AS(backend.fuse(HyperImage(4, 3, 4), HyperImage(2, 8, 8), ops), ShapeError);
}

TEST_CASE("model-based fusion on desk-scale no-change pairs") {
    const DegradationPair ops{SpatialOp(2.35, 4), SpectralOp::band_average(32, 4)};
    const auto pairs = desk_no_change(2, ops);
    const FusionBackend backend(ModelBasedFusion{1e-6, 500, 1e-8});
    for (const auto& p : pairs) {
        const HyperImage x = backend.fuse(p.y1, p.y2, ops);
        const double rec = frobenius_norm(x - p.x1) / frobenius_norm(p.x1);
        const Consistency c = consistency(x, p.y1, ops);
        MESSAGE("reconstruction " << rec << ", consistency " << c.value);
        CHECK(rec <= 0.1);
        CHECK(c.value <= 0.05);
        CHECK(!c.absolute);
    }
}

TEST_CASE("consistency metric") {
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
    Rng rng(4);
    const HyperImage x = random_image(4, 8, 8, rng);
    const HyperImage y1 = ops.spatial.apply(x);
    CHECK(consistency(x, y1, ops).value == 0.0);
    CHECK(consistency(HyperImage(4, 8, 8), y1, ops).value == doctest::Approx(1.0).epsilon(1e-15));
    const HyperImage e = random_image(4, 8, 8, rng, -0.1, 0.1);
    const double oracle = frobenius_norm(ops.spatial.apply(x + e) - y1) / frobenius_norm(y1);
    CHECK(consistency(x + e, y1, ops).value == doctest::Approx(oracle).epsilon(1e-14));
    const Consistency z = consistency(x, HyperImage(4, 4, 4), ops);
    CHECK(z.absolute);
    CHECK(z.value == doctest::Approx(frobenius_norm(y1)).epsilon(1e-14));
}

TEST_CASE("model-based backward matches finite differences") {
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
    Rng rng(5);
    const HyperImage y1 = random_image(4, 4, 4, rng, 0.5, 1.0), y2 = random_image(2, 8, 8, rng, 0.5, 1.0);
    const HyperImage w = random_image(4, 8, 8, rng, -1.0, 1.0);
    const FusionBackend backend(ModelBasedFusion{1e-2, 2000, 1e-14});
    const FusionTrace tr = backend.fuse_traced(y1, y2, ops);
    REQUIRE(tr.clamp_magnitude == 0.0);
    const HyperImage g = backend.backward_y2t(tr, w, ops);
    const double eps = 1e-5;
    for (std::size_t i = 0; i < y2.size(); i += 7) {
        HyperImage p = y2, m = y2;
        p.data()[i] += eps;
        m.data()[i] -= eps;
        const double fd = (dot(w, backend.fuse(y1, p, ops)) - dot(w, backend.fuse(y1, m, ops))) / (2 * eps);
        CHECK(std::abs(fd - g.data()[i]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("neural fusion") {
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(8, 2)};
    const nn::Network net = nn::build_dual_branch_net({8, 4, 8, 2, 4, 8, true});
    std::vector<DatasetPair> pairs;
    for (std::uint64_t i = 0; i < 4; ++i) {
        Rng rng(100 + i);
        pairs.push_back(no_change_pair(unmix(procedural_reference(8, 16, 16, 3, rng), 3), ops, i));
    }
    Rng init(6);
    const nn::NetParams p0 = net.init_params(init);

    SUBCASE("zero epochs return the initialization") {
        nn::NetParams p = p0;
        Rng rng(7);
        const PretrainLog log = pretrain_fusion(net, p, pairs, {0, 2, {}}, rng);
        CHECK(log.epoch_loss.empty());
        CHECK(p.checksum() == p0.checksum());
    }
    SUBCASE("loss decreases over the first epochs and output is nonnegative") {
        nn::NetParams p = p0;
        Rng rng(7);
        const PretrainLog log = pretrain_fusion(net, p, pairs, {4, 2, {1e-3, 0.9, 0.999, 1e-8}}, rng);
        REQUIRE(log.epoch_loss.size() == 4);
        for (std::size_t e = 1; e < 4; ++e) CHECK(log.epoch_loss[e] < log.epoch_loss[e - 1]);
        const FusionBackend backend(NeuralFusion{net, p});
        CHECK(backend.is_neural());
        const HyperImage x = backend.fuse(pairs[0].y1, pairs[0].y2, ops);
        CHECK(x.shape() == pairs[0].x1.shape());
        CHECK(x.all_nonnegative());
    }
    SUBCASE("swapping backends changes only the estimate") {
        const FusionBackend a(ModelBasedFusion{}), b(NeuralFusion{net, p0});
        CHECK(a.fuse(pairs[0].y1, pairs[0].y2, ops).shape() == b.fuse(pairs[0].y1, pairs[0].y2, ops).shape());
        CHECK(a.checksum() == 0);
        CHECK(b.checksum() == p0.checksum());
    }
}
