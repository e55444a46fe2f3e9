#include "cdgan/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdgan/io.hpp"
#include "json.hpp"

namespace cdgan {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> as_matrix(const HyperImage& img) {
    return {img.data().data(), static_cast<Eigen::Index>(img.bands()), static_cast<Eigen::Index>(img.pixels())};
}

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

std::vector<std::size_t> region_pixels(const Rect& r, std::size_t cols) {
    std::vector<std::size_t> px;
    px.reserve(r.area());
    for (std::size_t i = r.row; i < r.row + r.height; ++i)
        for (std::size_t j = r.col; j < r.col + r.width; ++j) px.push_back(i * cols + j);
    return px;
}

void check_region(const Rect& r, std::size_t rows, std::size_t cols, const char* what) {
    if (r.area() == 0) throw ConfigError(std::string(what) + ": empty region");
    if (r.row + r.height > rows || r.col + r.width > cols)
        throw ConfigError(std::string(what) + ": region exceeds image bounds");
    if (r.area() >= rows * cols) throw ConfigError(std::string(what) + ": region must be smaller than the image");
}

// Minimizes 0.5 a'Ga - h'a over a >= 0 by accelerated projected gradient.
Eigen::VectorXd nnls_pg(const Eigen::MatrixXd& G, const Eigen::VectorXd& h, double step, int iters) {
    const Eigen::Index k = h.size();
    Eigen::VectorXd a = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    Eigen::VectorXd z = a, prev = a;
    double t = 1.0;
    for (int it = 0; it < iters; ++it) {
        a = (z - step * (G * z - h)).cwiseMax(0.0);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        z = a + ((t - 1.0) / tn) * (a - prev);
        prev = a;
        t = tn;
    }
    return a;
}

} // namespace

UnmixModel unmix(const HyperImage& x_ref, std::size_t k) {
    const std::size_t m = x_ref.bands(), n = x_ref.pixels();
    if (k < 1 || k > std::min(m, n))
        throw ConfigError("unmix: k=" + std::to_string(k) + " must lie in [1, min(bands, pixels)]");
    const auto X = as_matrix(x_ref);

    std::vector<double> resid(n);
    double max_norm2 = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        resid[p] = X.col(ix(p)).squaredNorm();
        max_norm2 = std::max(max_norm2, resid[p]);
    }
    if (max_norm2 <= 0.0) throw NumericError("unmix: reference image is identically zero");

    Eigen::MatrixXd Q(ix(m), ix(k));
    std::vector<std::size_t> picked;
    for (std::size_t s = 0; s < k; ++s) {
        const auto best = static_cast<std::size_t>(std::max_element(resid.begin(), resid.end()) - resid.begin());
        if (resid[best] <= 1e-10 * max_norm2)
            throw NumericError("unmix: rank-deficient endmember selection at k=" + std::to_string(s + 1) +
                               "; try a smaller k");
        picked.push_back(best);
        Eigen::VectorXd q = X.col(ix(best));
        for (std::size_t t = 0; t < s; ++t) q -= Q.col(ix(t)).dot(q) * Q.col(ix(t));
        q.normalize();
        Q.col(ix(s)) = q;
        for (std::size_t p = 0; p < n; ++p) {
            const double c = q.dot(X.col(ix(p)));
            resid[p] = std::max(0.0, resid[p] - c * c);
        }
        resid[best] = 0.0;
    }

    UnmixModel model;
    model.rows = x_ref.rows();
    model.cols = x_ref.cols();
    model.endmembers.resize(ix(m), ix(k));
    for (std::size_t s = 0; s < k; ++s) model.endmembers.col(ix(s)) = X.col(ix(picked[s])).cwiseMax(0.0);

    const Eigen::MatrixXd G = model.endmembers.transpose() * model.endmembers;
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G).eigenvalues().maxCoeff();
    const double step = 1.0 / lmax;
    model.abundances.resize(ix(k), ix(n));
    const Eigen::MatrixXd H = model.endmembers.transpose() * X;
    for (std::size_t p = 0; p < n; ++p) {
        Eigen::VectorXd a = nnls_pg(G, H.col(ix(p)), step, 400);
        const double s = a.sum();
        if (s > 1e-12)
            a /= s;
        else
            a.setConstant(1.0 / static_cast<double>(k));
        model.abundances.col(ix(p)) = a;
    }
    return model;
}

double unmix_residual(const HyperImage& x_ref, const UnmixModel& model) {
    const auto X = as_matrix(x_ref);
    const double denom = X.norm();
    return (X - model.endmembers * model.abundances).norm() / (denom > 0 ? denom : 1.0);
}

HyperImage procedural_reference(std::size_t bands, std::size_t rows, std::size_t cols, std::size_t k, Rng& rng) {
    if (k == 0 || bands == 0 || rows == 0 || cols == 0) throw ConfigError("procedural_reference: empty dimensions");
    // Spectra: baseline plus a few broad bumps along the band axis.
    Eigen::MatrixXd M(ix(bands), ix(k));
    for (std::size_t j = 0; j < k; ++j) {
        const double base = rng.uniform(0.05, 0.25);
        struct Bump {
            double centre, width, amp;
        };
        std::vector<Bump> bumps(3);
        for (auto& b : bumps)
            b = {rng.uniform(0.0, static_cast<double>(bands)), rng.uniform(bands / 8.0, bands / 3.0),
                 rng.uniform(0.1, 0.6)};
        for (std::size_t b = 0; b < bands; ++b) {
            double v = base;
            for (const auto& bump : bumps) {
                const double d = (static_cast<double>(b) - bump.centre) / bump.width;
                v += bump.amp * std::exp(-0.5 * d * d);
            }
            M(ix(b), ix(j)) = v;
        }
    }
    // Abundance fields: softmax over smooth random blob fields, sharp enough
    // that near-pure pixels exist for every material.
    const std::size_t n = rows * cols;
    Eigen::MatrixXd F(ix(k), ix(n));
    const double extent = static_cast<double>(std::max(rows, cols));
    for (std::size_t j = 0; j < k; ++j) {
        struct Blob {
            double r, c, s, a;
        };
        std::vector<Blob> blobs(4);
        for (auto& b : blobs)
            b = {rng.uniform(0.0, static_cast<double>(rows)), rng.uniform(0.0, static_cast<double>(cols)),
                 rng.uniform(extent / 10.0, extent / 4.0), rng.uniform(0.5, 1.0)};
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                double v = 0.0;
                for (const auto& b : blobs) {
                    const double dr = static_cast<double>(r) - b.r, dc = static_cast<double>(c) - b.c;
                    v += b.a * std::exp(-(dr * dr + dc * dc) / (2.0 * b.s * b.s));
                }
                F(ix(j), ix(r * cols + c)) = v;
            }
        const double lo = F.row(ix(j)).minCoeff(), hi = F.row(ix(j)).maxCoeff();
        F.row(ix(j)) = (F.row(ix(j)).array() - lo) / std::max(hi - lo, 1e-12);
    }
    const double temperature = 10.0;
    Eigen::MatrixXd A(ix(k), ix(n));
    for (std::size_t p = 0; p < n; ++p) {
        Eigen::VectorXd e = (temperature * F.col(ix(p))).array().exp();
        A.col(ix(p)) = e / e.sum();
    }
    HyperImage out(bands, rows, cols);
    Eigen::Map<RowMajor>(out.data().data(), ix(bands), ix(n)) = M * A;
    return out;
}

std::string to_string(ChangeRule r) {
    switch (r) {
    case ChangeRule::Zero: return "Rz";
    case ChangeRule::Same: return "Rs";
    case ChangeRule::Block: return "Rb";
    }
    return "?";
}

ChangeRule parse_change_rule(const std::string& s) {
    if (s == "Rz" || s == "zero") return ChangeRule::Zero;
    if (s == "Rs" || s == "same") return ChangeRule::Same;
    if (s == "Rb" || s == "block") return ChangeRule::Block;
    throw ConfigError("unknown change rule '" + s + "' (expected Rz, Rs or Rb)");
}

std::string to_string(UpmixDirection d) { return d == UpmixDirection::Forward ? "forward" : "reverse"; }

UpmixDirection parse_direction(const std::string& s) {
    if (s == "forward") return UpmixDirection::Forward;
    if (s == "reverse") return UpmixDirection::Reverse;
    throw ConfigError("unknown upmix direction '" + s + "' (expected forward or reverse)");
}

Rect random_region(std::size_t rows, std::size_t cols, double min_frac, double max_frac, Rng& rng) {
    if (!(min_frac > 0.0 && min_frac <= max_frac && max_frac < 1.0))
        throw ConfigError("random_region: need 0 < min_frac <= max_frac < 1");
    const double n = static_cast<double>(rows * cols);
    std::size_t h = 0, w = 0;
    for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw ConfigError("random_region: no rectangle fits the requested area fraction");
        const double area = rng.uniform(min_frac, max_frac) * n;
        const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
        h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area * aspect))), 1, rows - 1);
        w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(area / static_cast<double>(h))), 1, cols - 1);
        const double got = static_cast<double>(h * w) / n;
        if (got >= min_frac && got <= max_frac) break;
    }
    Rect r;
    r.height = h;
    r.width = w;
    r.row = rng.index(rows - h + 1);
    r.col = rng.index(cols - w + 1);
    return r;
}

ChangeResult apply_change_rule(const UnmixModel& model, const ChangeSpec& spec, Rng& rng) {
    const std::size_t rows = model.rows, cols = model.cols, n = rows * cols, k = model.k();
    check_region(spec.region, rows, cols, "apply_change_rule");
    const auto px = region_pixels(spec.region, cols);
    const Eigen::MatrixXd& A = model.abundances;

    ChangeResult res;
    res.abundances = A;
    res.resolved = spec;
    res.dref = BinaryMap(rows, cols);
    for (std::size_t p : px) res.dref.set(p, true);

    Eigen::VectorXd region_mean = Eigen::VectorXd::Zero(ix(k));
    for (std::size_t p : px) region_mean += A.col(ix(p));
    region_mean /= static_cast<double>(px.size());

    switch (spec.rule) {
    case ChangeRule::Zero: {
        std::size_t j = 0;
        if (spec.endmember) {
            j = *spec.endmember;
            if (j >= k) throw ConfigError("R_z: endmember index out of range");
        } else {
            Eigen::Index best = 0;
            region_mean.maxCoeff(&best);
            j = static_cast<std::size_t>(best);
        }
        if (region_mean(ix(j)) < 1e-6)
            throw ConfigError("R_z: endmember " + std::to_string(j) + " is absent from the change region");
        res.resolved.endmember = j;
        for (std::size_t p : px) {
            auto a = res.abundances.col(ix(p));
            a(ix(j)) = 0.0;
            const double s = a.sum();
            if (s > 1e-12) {
                a /= s;
            } else {
                a.setConstant(1.0 / static_cast<double>(k - 1 > 0 ? k - 1 : 1));
                a(ix(j)) = k > 1 ? 0.0 : 1.0;
            }
        }
        break;
    }
    case ChangeRule::Same: {
        std::size_t src = 0;
        if (spec.source_pixel) {
            src = *spec.source_pixel;
            if (src >= n || spec.region.contains(src / cols, src % cols))
                throw ConfigError("R_s: source pixel must lie inside the image and outside the region");
        } else {
            // Among random outside candidates keep the most dissimilar abundance vector.
            double best = -1.0;
            for (int c = 0; c < 64; ++c) {
                const std::size_t p = rng.index(n);
                if (spec.region.contains(p / cols, p % cols)) continue;
                const double d = (A.col(ix(p)) - region_mean).norm();
                if (d > best) {
                    best = d;
                    src = p;
                }
            }
            if (best < 0.0) throw ConfigError("R_s: no source pixel found outside the region");
        }
        res.resolved.source_pixel = src;
        const Eigen::VectorXd a_src = A.col(ix(src));
        for (std::size_t p : px) res.abundances.col(ix(p)) = a_src;
        break;
    }
    case ChangeRule::Block: {
        const Rect& target = spec.region;
        Rect donor;
        if (spec.donor) {
            donor = *spec.donor;
            if (donor.height != target.height || donor.width != target.width)
                throw ConfigError("R_b: donor block must have the same shape as the region");
            check_region(donor, rows, cols, "R_b donor");
            if (donor.overlaps(target)) throw ConfigError("R_b: donor block overlaps the change region");
        } else {
            if (target.height * 2 > rows && target.width * 2 > cols)
                throw ConfigError("R_b: region too large to place a non-overlapping donor");
            double best = -1.0;
            for (int c = 0; c < 64; ++c) {
                Rect d{rng.index(rows - target.height + 1), rng.index(cols - target.width + 1), target.height,
                       target.width};
                if (d.overlaps(target)) continue;
                double diff = 0.0;
                for (std::size_t i = 0; i < target.height; ++i)
                    for (std::size_t jj = 0; jj < target.width; ++jj)
                        diff += (A.col(ix((d.row + i) * cols + d.col + jj)) -
                                 A.col(ix((target.row + i) * cols + target.col + jj)))
                                    .squaredNorm();
                if (diff > best) {
                    best = diff;
                    donor = d;
                }
            }
            if (best < 0.0) throw ConfigError("R_b: could not place a non-overlapping donor block");
        }
        res.resolved.donor = donor;
        for (std::size_t i = 0; i < target.height; ++i)
            for (std::size_t jj = 0; jj < target.width; ++jj)
                res.abundances.col(ix((target.row + i) * cols + target.col + jj)) =
                    A.col(ix((donor.row + i) * cols + donor.col + jj));
        break;
    }
    }
    return res;
}

HyperImage mix(const UnmixModel& model, const Eigen::MatrixXd& abundances) {
    if (abundances.rows() != model.endmembers.cols() || static_cast<std::size_t>(abundances.cols()) != model.rows * model.cols)
        throw ShapeError("mix: abundance matrix shape does not match the model");
    HyperImage out(model.bands(), model.rows, model.cols);
    Eigen::Map<RowMajor>(out.data().data(), ix(model.bands()), abundances.cols()).noalias() =
        model.endmembers * abundances;
    return out;
}

std::pair<HyperImage, HyperImage> upmix(const UnmixModel& model, const Eigen::MatrixXd& a_chg, UpmixDirection dir) {
    HyperImage ref = mix(model, model.abundances);
    HyperImage chg = mix(model, a_chg);
    if (dir == UpmixDirection::Forward) return {std::move(ref), std::move(chg)};
    return {std::move(chg), std::move(ref)};
}

std::pair<HyperImage, HyperImage> observe(const HyperImage& x1, const HyperImage& x2, const DegradationPair& ops) {
    return {apply_spatial(ops.spatial, x1), apply_spectral(ops.spectral, x2)};
}

void add_observation_noise(HyperImage& img, double sd, Rng& rng) {
    if (sd <= 0.0) return;
    for (double& v : img.data()) v += sd * rng.normal();
}

DatasetPair no_change_pair(const UnmixModel& model, const DegradationPair& ops, std::size_t ref_index) {
    DatasetPair pair;
    pair.x1 = mix(model, model.abundances);
    pair.x2 = pair.x1;
    std::tie(pair.y1, pair.y2) = observe(pair.x1, pair.x2, ops);
    pair.dref = BinaryMap(model.rows, model.cols);
    pair.ref_index = ref_index;
    pair.no_change = true;
    return pair;
}

Dataset build_dataset(const std::vector<HyperImage>& refs, const GenerationConfig& cfg, const DegradationPair& ops,
                      std::uint64_t seed) {
    if (refs.empty()) throw ConfigError("build_dataset: at least one reference image is required");
    if (cfg.rules.empty() || cfg.directions.empty()) throw ConfigError("build_dataset: rules and directions must be nonempty");
    for (const auto& ref : refs) {
        if (ref.bands() != ops.spectral.in_bands())
            throw ConfigError("build_dataset: reference has " + std::to_string(ref.bands()) +
                              " bands but the spectral operator expects " + std::to_string(ops.spectral.in_bands()));
        (void)ops.spatial.output_shape(ref.shape());
    }

    std::vector<DatasetPair> all;
    std::uint64_t idx = 0;
    for (std::size_t r = 0; r < refs.size(); ++r) {
        const UnmixModel model = unmix(refs[r], cfg.k);
        for (ChangeRule rule : cfg.rules) {
            for (UpmixDirection dir : cfg.directions) {
                Rng rng(Rng::derive_seed(seed, idx));
                ChangeSpec spec;
                spec.rule = rule;
                spec.region = random_region(model.rows, model.cols, cfg.min_region_frac, cfg.max_region_frac, rng);
                ChangeResult chg = apply_change_rule(model, spec, rng);
                DatasetPair pair;
                std::tie(pair.x1, pair.x2) = upmix(model, chg.abundances, dir);
                std::tie(pair.y1, pair.y2) = observe(pair.x1, pair.x2, ops);
                add_observation_noise(pair.y1, cfg.obs_noise_sd, rng);
                add_observation_noise(pair.y2, cfg.obs_noise_sd, rng);
                pair.dref = std::move(chg.dref);
                pair.rule = rule;
                pair.direction = dir;
                pair.ref_index = r;
                pair.seed = rng.seed();
                all.push_back(std::move(pair));
                ++idx;
            }
        }
    }
    if (cfg.test_pairs >= all.size())
        throw ConfigError("build_dataset: test_pairs (" + std::to_string(cfg.test_pairs) +
                          ") must be smaller than the number of generated pairs (" + std::to_string(all.size()) + ")");

    // Stratified split: shuffle each rule's pairs, then draw round-robin.
    Rng split_rng = Rng(seed).fork(0x5117);
    std::vector<std::vector<std::size_t>> by_rule(cfg.rules.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto pos = std::find(cfg.rules.begin(), cfg.rules.end(), all[i].rule) - cfg.rules.begin();
        by_rule[static_cast<std::size_t>(pos)].push_back(i);
    }
    for (auto& g : by_rule) split_rng.shuffle(g);
    std::vector<bool> is_test(all.size(), false);
    std::size_t taken = 0;
    for (std::size_t round = 0; taken < cfg.test_pairs; ++round)
        for (auto& g : by_rule)
            if (round < g.size() && taken < cfg.test_pairs) {
                is_test[g[round]] = true;
                ++taken;
            }

    Dataset ds;
    for (std::size_t i = 0; i < all.size(); ++i) (is_test[i] ? ds.test : ds.train).push_back(std::move(all[i]));
    return ds;
}

namespace {

nlohmann::json pair_meta(const DatasetPair& p, std::size_t idx, const std::string& split) {
    return {{"index", idx},          {"split", split},
            {"rule", to_string(p.rule)}, {"direction", to_string(p.direction)},
            {"ref_index", p.ref_index},  {"seed", p.seed},
            {"no_change", p.no_change},  {"changed_pixels", p.dref.count()}};
}

} // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const std::string& provenance_json) {
    nlohmann::json manifest;
    manifest["format"] = "cdgan-dataset-1";
    manifest["provenance"] = nlohmann::json::parse(provenance_json.empty() ? "{}" : provenance_json);
    manifest["pairs"] = nlohmann::json::array();
    std::size_t idx = 0;
    auto emit = [&](const DatasetPair& p, const std::string& split) {
        const auto pd = dir / ("pair_" + std::to_string(idx));
        io::write_hsc(pd / "Y1.hsc", p.y1);
        io::write_hsc(pd / "Y2.hsc", p.y2);
        io::write_hsc(pd / "X1.hsc", p.x1);
        io::write_hsc(pd / "X2.hsc", p.x2);
        io::write_cm(pd / "dref.cm", p.dref);
        manifest["pairs"].push_back(pair_meta(p, idx, split));
        ++idx;
    };
    for (const auto& p : ds.train) emit(p, "train");
    for (const auto& p : ds.test) emit(p, "test");
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("dataset manifest: " + std::string(e.what()));
    }
    Dataset ds;
    for (const auto& m : manifest.at("pairs")) {
        const auto pd = dir / ("pair_" + std::to_string(m.at("index").get<std::size_t>()));
        DatasetPair p;
        p.y1 = io::read_hsc(pd / "Y1.hsc");
        p.y2 = io::read_hsc(pd / "Y2.hsc");
        p.x1 = io::read_hsc(pd / "X1.hsc");
        p.x2 = io::read_hsc(pd / "X2.hsc");
        p.dref = io::read_cm(pd / "dref.cm");
        p.rule = parse_change_rule(m.at("rule").get<std::string>());
        p.direction = parse_direction(m.at("direction").get<std::string>());
        p.ref_index = m.at("ref_index").get<std::size_t>();
        p.seed = m.at("seed").get<std::uint64_t>();
        p.no_change = m.at("no_change").get<bool>();
        (m.at("split").get<std::string>() == "test" ? ds.test : ds.train).push_back(std::move(p));
    }
    return ds;
}

} // namespace cdgan
