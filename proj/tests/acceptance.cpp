// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdgan/config.hpp"
#include "cdgan/eval.hpp"
#include "cdgan/gradcheck.hpp"
#include "cdgan/pipeline.hpp"

using namespace cdgan;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Verdict {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(int id, const Verdict& v) {
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
    if (!v.pass) ++failures;
}

HyperImage random_image(std::size_t b, std::size_t r, std::size_t c, Rng& rng) {
    HyperImage x(b, r, c);
    for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
    return x;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

// --- 1: operators --------------------------------------------------------

Verdict operators_check() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = 1 + rng.index(4), bands = 4 + rng.index(13);
        const std::size_t rows = d * (2 + rng.index(8)), cols = d * (2 + rng.index(8));
        const SpatialOp h1(rng.uniform(0.3, 3.0), d);
        const SpectralOp h2 = SpectralOp::band_average(bands, 1 + rng.index(4));
        const HyperImage a = random_image(bands, rows, cols, rng), b = random_image(bands, rows, cols, rng);
        const double s = rng.uniform(-3.0, 3.0);

        const HyperImage l1 = h1.apply(a + b * s), r1 = h1.apply(a) + h1.apply(b) * s;
        worst = std::max(worst, frobenius_norm(l1 - r1) / frobenius_norm(r1));
        const HyperImage l2 = h2.apply(a + b * s), r2 = h2.apply(a) + h2.apply(b) * s;
        worst = std::max(worst, frobenius_norm(l2 - r2) / frobenius_norm(r2));

        const HyperImage y1 = random_image(bands, rows / d, cols / d, rng);
        worst = std::max(worst, rel(dot(h1.apply(a), y1), dot(a, h1.adjoint(y1))));
        const HyperImage y2 = random_image(h2.out_bands(), rows, cols, rng);
        worst = std::max(worst, rel(dot(h2.apply(a), y2), dot(a, h2.adjoint(y2))));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-9 && secs < 10.0,
            "200 instances, max rel error " + fmt("%.2e", worst) + " (<= 1e-9), " + fmt("%.2f", secs) + " s (< 10 s)"};
}

// --- 2: gradients --------------------------------------------------------

Verdict gradient_check() {
    const auto t0 = Clock::now();
    double layer_worst = 0.0, graph_worst = 0.0;
    Rng rng(7);
    auto net_check = [&](const nn::Network& net, const std::vector<HyperImage>& in, double& worst) {
        Rng ir(rng.next_u64());
        worst = std::max(worst, check_network_gradients(net, net.init_params(ir), in, rng.next_u64()).max_rel_error);
    };
    // Every layer kind in isolation.
    for (int kind = 0; kind < 8; ++kind) {
        nn::Network n;
        const auto x = n.input(0, 2);
        std::vector<HyperImage> in{random_image(2, 6, 6, rng)};
        switch (kind) {
        case 0: n.set_output(n.conv(x, 3)); break;
        case 1: n.set_output(n.down_conv(x, 3, 2)); break;
        case 2: n.set_output(n.up_conv(x, 3, 2)); break;
        case 3: n.set_output(n.leaky_relu(n.conv(x, 2), 0.2)); break;
        case 4: n.set_output(n.relu(n.conv(x, 2))); break;
        case 5: n.set_output(n.sigmoid(n.conv(x, 2))); break;
        case 6: {
            const auto y = n.input(1, 1);
            n.set_output(n.conv(n.concat(x, y), 2));
            in.push_back(random_image(1, 6, 6, rng));
            break;
        }
        default: n.set_output(n.skip_add(n.conv(x, 2), x)); break;
        }
        net_check(n, in, layer_worst);
    }
    // Full F, C and D graphs at toy size.
    const nn::DualBranchArch f_arch{4, 2, 4, 2, 3, 4, true};
    nn::DualBranchArch c_arch = f_arch;
    c_arch.final_relu = false;
    net_check(nn::build_dual_branch_net(f_arch), {random_image(4, 4, 4, rng), random_image(2, 8, 8, rng)}, graph_worst);
    net_check(nn::build_dual_branch_net(c_arch), {random_image(4, 4, 4, rng), random_image(2, 8, 8, rng)}, graph_worst);
    net_check(nn::build_discriminator({4, 3}), {random_image(4, 8, 8, rng)}, graph_worst);

    // total_C through correction, neural fusion and prediction on 8x8x4.
    const DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
    const nn::Network cnet = nn::build_dual_branch_net(c_arch), fnet = nn::build_dual_branch_net(f_arch);
    const nn::Network dnet = nn::build_discriminator({4, 3});
    Rng ir(11);
    nn::NetParams cp = cnet.init_params(ir), fp = fnet.init_params(ir);
    for (double& b : fp.tensors.back().data) b += 2.0;
    const GeneratorState state{cnet, cp, FusionBackend(NeuralFusion{fnet, fp}), ops};
    const Discriminator d{dnet, dnet.init_params(ir)};
    Rng pr(12);
    const HyperImage ref = procedural_reference(4, 8, 8, 2, pr);
    const UnmixModel model = unmix(ref, 2);
    const ChangeResult chg = apply_change_rule(model, ChangeSpec{ChangeRule::Same, Rect{2, 2, 3, 3}, {}, {}, {}}, pr);
    DatasetPair pair;
    std::tie(pair.x1, pair.x2) = upmix(model, chg.abundances, UpmixDirection::Forward);
    std::tie(pair.y1, pair.y2) = observe(pair.x1, pair.x2, ops);
    pair.dref = chg.dref;
    TrainConfig tc;
    const double e2e = check_generator_gradients(state, d, pair, tc).max_rel_error;
    graph_worst = std::max(graph_worst, check_discriminator_gradients(state, d, pair, tc).max_rel_error);

    const double secs = seconds_since(t0);
    const bool pass = layer_worst <= 1e-4 && graph_worst <= 1e-4 && e2e <= 1e-3 && secs < 120.0;
    return {pass, "layer kinds " + fmt("%.2e", layer_worst) + ", F/C/D graphs " + fmt("%.2e", graph_worst) +
                      " (<= 1e-4), end-to-end total_C " + fmt("%.2e", e2e) + " (<= 1e-3), " + fmt("%.1f", secs) +
                      " s (< 120 s)"};
}

// --- 3: fusion consistency -----------------------------------------------

struct FusionMetrics {
    std::vector<double> model_based; // per no-change pair
    double neural = 0.0;             // mean over held-out pairs
    std::size_t epochs = 0;
    double seconds = 0.0;
};

FusionMetrics fusion_metrics(const ExperimentConfig& desk, const ExperimentConfig& neural) {
    const auto t0 = Clock::now();
    FusionMetrics m;
    const DegradationPair ops = data_operators(desk);
    const FusionBackend mb(desk.fusion.model_based);
    const auto refs = load_references(desk.data);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const DatasetPair p = no_change_pair(unmix(refs[i], desk.data.generation.k), ops, i);
        m.model_based.push_back(consistency(mb.fuse(p.y1, p.y2, ops), p.y1, ops).value);
    }
    const PretrainOutcome out = pretrain_fusion_stage(neural, 1);
    m.neural = out.held_out_consistency;
    m.epochs = out.log.epoch_loss.size();
    m.seconds = seconds_since(t0);
    return m;
}

Verdict fusion_verdict(const FusionMetrics& m) {
    double worst = 0.0;
    for (double v : m.model_based) worst = std::max(worst, v);
    const bool pass = worst <= 0.05 && m.neural <= 0.1 && m.epochs <= 15 && m.seconds < 600.0;
    return {pass, "model-based max " + fmt("%.2e", worst) + " (<= 0.05) on " + std::to_string(m.model_based.size()) +
                      " pairs, neural held-out mean " + fmt("%.4f", m.neural) + " (<= 0.1) after " +
                      std::to_string(m.epochs) + " epochs, " + fmt("%.0f", m.seconds) + " s (< 600 s)"};
}

// --- 4: detection oracles ---------------------------------------------

// Exhaustive Otsu over bin splits in exact integer arithmetic.
std::size_t otsu_oracle(const std::vector<long long>& hist) {
    long long w = 0, s = 0;
    for (std::size_t b = 0; b < hist.size(); ++b) {
        w += hist[b];
        s += static_cast<long long>(b) * hist[b];
    }
    __int128 best_num = -1, best_den = 1;
    std::size_t best = 0;
    long long w0 = 0, s0 = 0;
    for (std::size_t t = 0; t + 1 < hist.size(); ++t) {
        w0 += hist[t];
        s0 += static_cast<long long>(t) * hist[t];
        const long long w1 = w - w0, s1 = s - s0;
        if (w0 == 0 || w1 == 0) continue;
        const __int128 d = static_cast<__int128>(w1) * s0 - static_cast<__int128>(w0) * s1;
        const __int128 num = d * d, den = static_cast<__int128>(w0) * w1;
        if (best_num < 0 || num * best_den > best_num * den) {
            best_num = num;
            best_den = den;
            best = t;
        }
    }
    return best;
}

Verdict detection_check() {
    Rng rng(4);
    int otsu_bad = 0;
    for (int t = 0; t < 50; ++t) {
        std::vector<long long> hist(256, 0);
        EnergyMap e{1, 0, {0.0, 256.0}};
        hist[0] = hist[255] = 1;
        const std::size_t n = 50 + rng.index(500);
        const double split = rng.uniform(), cut = static_cast<double>(20 + rng.index(200));
        for (std::size_t i = 0; i < n; ++i) {
            const double u = rng.uniform();
            const auto b = static_cast<std::size_t>(rng.uniform() < split ? u * cut : cut + u * (256.0 - cut));
            e.e.push_back(static_cast<double>(b) + 0.5);
            ++hist[b];
        }
        e.cols = e.e.size();
        otsu_bad += otsu_threshold(e) != static_cast<double>(otsu_oracle(hist) + 1);
    }

    int roc_bad = 0;
    double auc_err = 0.0, dist_err = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + rng.index(29), levels = 1 + rng.index(6);
        EnergyMap e{1, n, {}};
        BinaryMap d(1, n);
        for (std::size_t i = 0; i < n; ++i) {
            const bool changed = i == 0 || (i != 1 && rng.uniform() < 0.4);
            d.set(i, changed);
            e.e.push_back(static_cast<double>(rng.index(levels)) + (changed ? 1.0 : 0.0));
        }
        const RocCurve c = roc(e, d);

        const double np = static_cast<double>(d.count()), nn = static_cast<double>(n) - np;
        std::set<std::pair<double, double>> want, got;
        std::vector<double> taus = e.e;
        taus.push_back(-std::numeric_limits<double>::infinity());
        for (double tau : taus) {
            double tp = 0.0, fp = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (e.e[i] > tau) (d[i] ? tp : fp) += 1.0;
            want.insert({fp / nn, tp / np});
        }
        for (const auto& p : c.points) got.insert({p.pfa, p.pd});
        roc_bad += got != want;

        double mw = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (d[i] && !d[j]) mw += e.e[i] > e.e[j] ? 1.0 : e.e[i] == e.e[j] ? 0.5 : 0.0;
        auc_err = std::max(auc_err, std::abs(c.auc - mw / (np * nn)));

        double geo = 0.0;
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            const double x0 = c.points[i - 1].pfa, y0 = c.points[i - 1].pd;
            const double dx = c.points[i].pfa - x0, dy = c.points[i].pd - y0;
            if (dx + dy == 0.0) continue;
            const double s = (1.0 - x0 - y0) / (dx + dy);
            if (s < 0.0 || s > 1.0) continue;
            geo = std::hypot(x0 + s * dx - 1.0, y0 + s * dy) / std::sqrt(2.0);
            break;
        }
        dist_err = std::max(dist_err, std::abs(c.dist - geo));
    }
    const bool pass = otsu_bad == 0 && roc_bad == 0 && auc_err <= 1e-12 && dist_err <= 1e-12;
    return {pass, "Otsu mismatches " + std::to_string(otsu_bad) + "/50, ROC point-set mismatches " +
                      std::to_string(roc_bad) + "/200, AUC vs Mann-Whitney " + fmt("%.1e", auc_err) +
                      ", dist vs geometry " + fmt("%.1e", dist_err) + " (<= 1e-12)"};
}

// --- 5/6/7: end-to-end runs ----------------------------------------------

std::map<ChangeRule, double> rule_auc(const ExperimentReport& r) {
    std::map<ChangeRule, double> out;
    for (const auto& m : r.rules) out[m.rule] = m.auc;
    return out;
}

std::string rule_summary(const ExperimentReport& r) {
    std::string s;
    for (const auto& m : r.rules) s += to_string(m.rule) + " " + fmt("%.4f", m.auc) + " ";
    return s + "mean " + fmt("%.4f", r.mean_auc);
}

bool same_metrics(const ExperimentReport& a, const ExperimentReport& b) {
    if (a.pairs.size() != b.pairs.size()) return false;
    for (std::size_t i = 0; i < a.pairs.size(); ++i)
        if (a.pairs[i].auc != b.pairs[i].auc || a.pairs[i].dist != b.pairs[i].dist || a.pairs[i].tau != b.pairs[i].tau ||
            a.pairs[i].detected != b.pairs[i].detected)
            return false;
    return a.mean_auc == b.mean_auc && a.mean_dist == b.mean_dist;
}

ExperimentReport run(const ExperimentConfig& cfg, const fs::path& wd, double& secs) {
    const auto t0 = Clock::now();
    std::ostringstream sink;
    ExperimentReport r = run_pipeline(cfg, RunOptions{wd, true, false, 1, &sink});
    secs = seconds_since(t0);
    return r;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string config, workdir = "acceptance_work", robust, neural;
    app.add_option("--config", config, "desk-scale config")->required()->check(CLI::ExistingFile);
    app.add_option("--workdir", workdir, "scratch directory for the end-to-end runs");
    app.add_option("--robust-config", robust, "operator-mismatch config (default: robust.cfg next to --config)");
    app.add_option("--neural-config", neural, "neural-fusion config (default: neural.cfg next to --config)");
    CLI11_PARSE(app, argc, argv);
    const fs::path cfg_dir = fs::path(config).parent_path();
    if (robust.empty()) robust = (cfg_dir / "robust.cfg").string();
    if (neural.empty()) neural = (cfg_dir / "neural.cfg").string();
    const fs::path wd(workdir);

    try {
        const ExperimentConfig desk = load_config(config);
        const ExperimentConfig neural_cfg = load_config(neural);
        const ExperimentConfig robust_cfg = load_config(robust);

        report(1, operators_check());
        report(2, gradient_check());

        const FusionMetrics fm = fusion_metrics(desk, neural_cfg);
        report(3, fusion_verdict(fm));

        report(4, detection_check());

        double t_main = 0.0, t_zero = 0.0, t_robust = 0.0, t_rerun = 0.0;
        const ExperimentReport main_run = run(desk, wd / "desk", t_main);
        const ExperimentReport zero_run = run(with_beta(desk, 0.0), wd / "desk_beta0", t_zero);
        Verdict v5;
        const auto aucs = rule_auc(main_run);
        for (const auto& [rule, a] : aucs) v5.pass = v5.pass && a >= 0.90;
        v5.pass = v5.pass && aucs.size() == 3 && main_run.mean_auc >= zero_run.mean_auc && t_main + t_zero <= 1800.0;
        v5.detail = "beta=1e-3: " + rule_summary(main_run) + " (each >= 0.90); beta=0: mean " +
                    fmt("%.4f", zero_run.mean_auc) + " (<= beta=1e-3 mean); " + fmt("%.0f", t_main + t_zero) +
                    " s for both runs (<= 1800 s)";
        report(5, v5);

        const ExperimentReport robust_run = run(robust_cfg, wd / "robust", t_robust);
        Verdict v6;
        const auto raucs = rule_auc(robust_run);
        v6.detail = "trained and evaluated in " + fmt("%.0f", t_robust) + " s; AUC change vs criterion 5:";
        for (const auto& [rule, a] : raucs) v6.detail += " " + to_string(rule) + " " + fmt("%+.4f", a - aucs.at(rule));
        v6.detail += " mean " + fmt("%+.4f", robust_run.mean_auc - main_run.mean_auc);
        report(6, v6);

        const ExperimentReport rerun = run(desk, wd / "desk_rerun", t_rerun);
        const FusionMetrics fm2 = fusion_metrics(desk, neural_cfg);
        Verdict v7;
        const bool fusion_same = fm2.model_based == fm.model_based && fm2.neural == fm.neural;
        const bool train_same = same_metrics(main_run, rerun);
        v7.pass = fusion_same && train_same;
        v7.detail = std::string("criterion 3 metrics ") + (fusion_same ? "bit-identical" : "DIFFER") +
                    ", criterion 5 metrics " + (train_same ? "bit-identical" : "DIFFER") + " (threads=1)";
        report(7, v7);
    } catch (const std::exception& e) {
        std::cout << "acceptance aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
