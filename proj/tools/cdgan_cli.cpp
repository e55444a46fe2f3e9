#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cdgan/config.hpp"
#include "cdgan/detect.hpp"
#include "cdgan/eval.hpp"
#include "cdgan/gradcheck.hpp"
#include "cdgan/io.hpp"
#include "cdgan/pipeline.hpp"
#include "json.hpp"

using namespace cdgan;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

std::size_t default_threads() {
    if (const char* env = std::getenv("CDGAN_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("CDGAN_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

std::optional<fs::path> fusion_arg(const std::string& s) {
    if (s.empty() || s == "model_based") return std::nullopt;
    return fs::path(s);
}

void print_gradcheck(const std::string& label, const GradCheckReport& r, double tol, bool& ok) {
    const bool pass = r.max_rel_error <= tol;
    ok &= pass;
    std::printf("%-28s max_rel_err=%.3e (tol %.0e) %s\n", label.c_str(), r.max_rel_error, tol, pass ? "PASS" : "FAIL");
}

int gradcheck_main(std::uint64_t seed) {
    bool ok = true;
    Rng rng(seed);
    auto rand_image = [&](std::size_t b, std::size_t r, std::size_t c) {
        HyperImage x(b, r, c);
        for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
        return x;
    };
    {
        nn::Network n;
        auto x = n.input(0, 2);
        auto a = n.leaky_relu(n.conv(x, 3));
        auto d = n.relu(n.down_conv(a, 3));
        auto u = n.up_conv(d, 3);
        auto s = n.skip_add(u, a);
        auto c = n.concat(s, x);
        n.set_output(n.sigmoid(n.conv(c, 2)));
        Rng ir(seed + 1);
        const std::vector<HyperImage> in{rand_image(2, 6, 6)};
        print_gradcheck("layer kinds (toy graph)", check_network_gradients(n, n.init_params(ir), in, seed), 1e-4, ok);
    }
    nn::DualBranchArch arch{4, 2, 4, 2, 3, 4, true};
    {
        const nn::Network f = nn::build_dual_branch_net(arch);
        Rng ir(seed + 2);
        const std::vector<HyperImage> in{rand_image(4, 4, 4), rand_image(2, 8, 8)};
        print_gradcheck("fusion network F", check_network_gradients(f, f.init_params(ir), in, seed), 1e-4, ok);
    }
    {
        const nn::Network d = nn::build_discriminator({4, 2});
        Rng ir(seed + 3);
        const std::vector<HyperImage> in{rand_image(4, 8, 8)};
        print_gradcheck("discriminator D", check_network_gradients(d, d.init_params(ir), in, seed), 1e-4, ok);
    }
    {
        // End to end through correction, neural fusion and prediction.
        DegradationPair ops{SpatialOp(1.0, 2), SpectralOp::band_average(4, 2)};
        nn::DualBranchArch ca = arch;
        ca.final_relu = false;
        const nn::Network cnet = nn::build_dual_branch_net(ca), fnet = nn::build_dual_branch_net(arch);
        Rng ir(seed + 4);
        auto cp = cnet.init_params(ir);
        auto fp = fnet.init_params(ir);
        // Shift the fusion head bias so the final relu is active almost everywhere.
        for (double& b : fp.tensors.back().data) b += 2.0;
        const nn::Network dnet = nn::build_discriminator({4, 2});
        GeneratorState st{cnet, cp, FusionBackend(NeuralFusion{fnet, fp}), ops};
        Discriminator d{dnet, dnet.init_params(ir)};
        DatasetPair p;
        p.x1 = rand_image(4, 8, 8);
        for (double& v : p.x1.data()) v = std::abs(v);
        p.x2 = p.x1;
        std::tie(p.y1, p.y2) = observe(p.x1, p.x2, ops);
        TrainConfig tc;
        print_gradcheck("generator total_C", check_generator_gradients(st, d, p, tc), 1e-3, ok);
        print_gradcheck("discriminator L_adv", check_discriminator_gradients(st, d, p, tc), 1e-4, ok);
    }
    return ok ? kOk : kNumeric;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CD-GAN change detection toolkit"};
    app.require_subcommand(1);
    std::string config;
    std::size_t threads = 0;
    auto add_config = [&](CLI::App* sc, bool required = true) {
        auto* o = sc->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
        if (required) o->required();
        sc->add_option("--threads", threads, "worker threads (1 = reference mode)");
    };

    auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    std::string out;
    add_config(gen);
    gen->add_option("--out", out, "dataset directory")->required();

    auto* pre = app.add_subcommand("pretrain-fusion", "pretrain the neural fusion network");
    add_config(pre);
    pre->add_option("--out", out, "checkpoint path")->required();

    auto* tr = app.add_subcommand("train", "train the CI network adversarially");
    std::string fusion = "model_based", data_dir, log_csv, disc_out;
    add_config(tr);
    tr->add_option("--fusion", fusion, "fusion checkpoint or 'model_based'");
    tr->add_option("--data", data_dir, "dataset directory from 'gen'")->required();
    tr->add_option("--out", out, "CI checkpoint path")->required();
    tr->add_option("--disc-out", disc_out, "discriminator checkpoint path");
    tr->add_option("--log", log_csv, "training log CSV");

    auto* fu = app.add_subcommand("fuse", "fuse an LRHS and a (corrected) HRLS image");
    std::string y1_path, y2_path;
    add_config(fu);
    fu->add_option("--fusion", fusion, "fusion checkpoint or 'model_based'");
    fu->add_option("--y1", y1_path, "LRHS image (HSC1)")->required()->check(CLI::ExistingFile);
    fu->add_option("--y2", y2_path, "HRLS image (HSC1)")->required()->check(CLI::ExistingFile);
    fu->add_option("--out", out, "fused image (HSC1)")->required();

    auto* de = app.add_subcommand("detect", "threshold the energy of a change image");
    std::string ci_path, energy_out;
    double tau = 0.0;
    std::size_t smooth_r = 1;
    de->add_option("--ci", ci_path, "change image (HSC1)")->required()->check(CLI::ExistingFile);
    auto* tau_opt = de->add_option("--tau", tau, "manual threshold");
    auto* otsu_flag = de->add_flag("--otsu", "Otsu threshold (default)");
    tau_opt->excludes(otsu_flag);
    de->add_option("--smooth", smooth_r, "median smoothing radius");
    de->add_option("--out", out, "binary change map (CM01)")->required();
    de->add_option("--energy-out", energy_out, "also write the smoothed energy (1-band HSC1)");

    auto* ev = app.add_subcommand("eval", "ROC, AUC and dist of an energy map");
    std::string energy_path, ref_path;
    ev->add_option("--energy", energy_path, "energy map or change image (HSC1)")->required()->check(CLI::ExistingFile);
    ev->add_option("--ref", ref_path, "reference change map (CM01)")->required()->check(CLI::ExistingFile);
    ev->add_option("--out", out, "ROC CSV")->required();

    auto* rep = app.add_subcommand("report", "per-rule summary of a finished run");
    std::string workdir;
    rep->add_option("--workdir", workdir, "run directory")->required()->check(CLI::ExistingDirectory);

    auto* run = app.add_subcommand("run", "full pipeline");
    bool force = false, dry = false, ablation = false;
    add_config(run);
    run->add_option("--workdir", workdir, "run directory (default: runs/<config name>)");
    run->add_flag("--force", force, "recompute completed stages");
    run->add_flag("--dry-run", dry, "validate the config and print the stage plan");
    run->add_flag("--ablation", ablation, "sweep eval.ablation_betas and write ablation.csv");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient diagnostics");
    std::uint64_t seed = 1;
    gc->add_option("--seed", seed, "seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads == 0) threads = default_threads();
        if (gc->parsed()) return gradcheck_main(seed);

        if (de->parsed()) {
            DetectConfig dc;
            dc.smooth_radius = smooth_r;
            if (tau_opt->count()) dc.tau = tau;
            const Detection d = detect_changes(io::read_hsc(ci_path), dc);
            io::write_cm(out, d.map);
            if (!energy_out.empty()) io::write_hsc(energy_out, energy_to_image(d.energy));
            std::printf("tau=%.10g changed=%zu of %zu\n", d.tau, d.map.count(), d.map.size());
            return kOk;
        }
        if (ev->parsed()) {
            const RocCurve c = roc(cva_energy(io::read_hsc(energy_path)), io::read_cm(ref_path));
            io::write_text(out, roc_csv(c));
            std::printf("auc=%.6f,dist=%.6f\n", c.auc, c.dist);
            return kOk;
        }
        if (rep->parsed()) {
            const auto m = nlohmann::json::parse(io::read_text(fs::path(workdir) / "manifest.json"));
            if (!m.contains("metrics")) throw IoError("report: " + workdir + " has no evaluated metrics yet");
            std::printf("%-6s %6s %8s %8s\n", "rule", "pairs", "AUC", "dist");
            for (const auto& [rule, v] : m["metrics"]["rules"].items())
                std::printf("%-6s %6zu %8.4f %8.4f\n", rule.c_str(), v["pairs"].get<std::size_t>(),
                            v["auc"].get<double>(), v["dist"].get<double>());
            std::printf("%-6s %6zu %8.4f %8.4f\n", "mean", m["metrics"]["pairs"].size(),
                        m["metrics"]["mean_auc"].get<double>(), m["metrics"]["mean_dist"].get<double>());
            return kOk;
        }

        const ExperimentConfig cfg = load_config(config);
        if (gen->parsed()) {
            const Dataset ds = build_dataset(load_references(cfg.data), cfg.data.generation, data_operators(cfg),
                                             cfg.data.seed);
            write_dataset(out, ds, nlohmann::json{{"config_hash", cfg.hash}, {"seed", cfg.data.seed}}.dump());
            std::printf("%zu train / %zu test pairs -> %s\n", ds.train.size(), ds.test.size(), out.c_str());
        } else if (pre->parsed()) {
            if (!cfg.fusion.neural) std::fprintf(stderr, "note: config selects model-based fusion; pretraining anyway\n");
            const auto res = pretrain_fusion_stage(cfg, threads);
            nn::save_checkpoint(out, res.fusion.net, res.fusion.params);
            for (std::size_t e = 0; e < res.log.epoch_loss.size(); ++e)
                std::printf("epoch %zu loss %.6g\n", e + 1, res.log.epoch_loss[e]);
            std::printf("held-out consistency %.6f\n", res.held_out_consistency);
        } else if (tr->parsed()) {
            const Dataset ds = read_dataset(data_dir);
            GeneratorState st = make_generator(cfg, make_fusion_backend(cfg, fusion_arg(fusion)));
            Discriminator d = make_discriminator(cfg);
            const TrainResult res =
                train(st, d, ds.train, ds.test, effective_train_config(cfg, threads), [](const EpochLog& e) {
                    std::printf("epoch %zu L_adv %.6g L_pre %.6g L_spa %.6g val_AUC %.4f\n", e.epoch, e.adv, e.pre,
                                e.spa, e.val_auc);
                    std::fflush(stdout);
                });
            if (res.d_collapse_warning) std::fprintf(stderr, "warning: discriminator saturated for a full epoch\n");
            nn::save_checkpoint(out, st.ci_net, st.ci_params);
            if (!disc_out.empty()) nn::save_checkpoint(disc_out, d.net, d.params);
            if (!log_csv.empty()) io::write_text(log_csv, training_log_csv(res));
        } else if (fu->parsed()) {
            const FusionBackend fb = make_fusion_backend(cfg, fusion_arg(fusion));
            const FusionTrace t = fb.fuse_traced(io::read_hsc(y1_path), io::read_hsc(y2_path), model_operators(cfg));
            io::write_hsc(out, t.fused);
            if (fb.model_based())
                std::printf("cg iterations %zu, relative residual %.3e%s, clamp magnitude %.3e\n", t.stats.iterations,
                            t.stats.relative_residual, t.stats.converged ? "" : " (NOT converged)",
                            t.clamp_magnitude);
        } else if (run->parsed()) {
            RunOptions opts;
            opts.workdir = workdir.empty() ? fs::path("runs") / cfg.name : fs::path(workdir);
            opts.force = force;
            opts.dry_run = dry;
            opts.threads = threads;
            opts.log = &std::cout;
            if (ablation) {
                const AblationResult r = run_beta_ablation(cfg, opts);
                if (!dry) {
                    io::write_text(opts.workdir / "ablation.csv", ablation_csv(r));
                    std::cout << ablation_csv(r);
                }
            } else {
                run_pipeline(cfg, opts);
            }
        }
        return kOk;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "shape error: %s\n", e.what());
        return kConfig;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kNumeric;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
}
