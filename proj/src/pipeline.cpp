#include "cdgan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "cdgan/detect.hpp"
#include "cdgan/io.hpp"
#include "json.hpp"

namespace cdgan {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kStages[] = {"gen", "pretrain-fusion", "train", "detect", "eval", "report"};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

class Manifest {
public:
    Manifest(fs::path workdir, const ExperimentConfig& cfg, bool force) : path_(workdir / "manifest.json") {
        if (!force && fs::exists(path_)) {
            try {
                doc_ = json::parse(io::read_text(path_));
            } catch (const json::exception& e) {
                throw IoError("manifest " + path_.string() + " is unreadable: " + e.what());
            }
            if (doc_.value("config_hash", std::string()) != cfg.hash)
                throw ConfigError("workdir " + workdir.string() + " holds a run of a different config (hash " +
                                  doc_.value("config_hash", std::string("?")) + "); use --force or another workdir");
        } else {
            doc_ = json::object();
        }
        doc_["config_hash"] = cfg.hash;
        doc_["config"] = json::parse(cfg.canonical_json);
        doc_["numeric_precision"] = "float64";
        if (!doc_.contains("stages")) doc_["stages"] = json::object();
    }

    bool done(const std::string& stage) const {
        if (!doc_["stages"].contains(stage)) return false;
        for (const auto& f : doc_["stages"][stage]["outputs"])
            if (!fs::exists(path_.parent_path() / f.get<std::string>())) return false;
        return true;
    }

    void complete(const std::string& stage, const std::vector<std::string>& outputs, json info = json::object()) {
        info["outputs"] = outputs;
        doc_["stages"][stage] = std::move(info);
        std::vector<std::string> all;
        for (const char* s : kStages)
            if (doc_["stages"].contains(s))
                for (const auto& f : doc_["stages"][s]["outputs"]) all.push_back(f.get<std::string>());
        doc_["outputs"] = all;
        save();
    }

    // Drops every stage after `stage` so later runs recompute them.
    void invalidate_after(const std::string& stage) {
        bool after = false;
        for (const char* s : kStages) {
            if (after) doc_["stages"].erase(s);
            if (stage == s) after = true;
        }
    }

    json& doc() { return doc_; }
    void save() const { io::write_text(path_, doc_.dump(2) + "\n"); }

private:
    fs::path path_;
    json doc_;
};

std::string pair_name(std::size_t i) { return "pair_" + std::to_string(i); }

json metrics_json(const ExperimentReport& r) {
    json m;
    m["mean_auc"] = r.mean_auc;
    m["mean_dist"] = r.mean_dist;
    json rules = json::object();
    for (const auto& rm : r.rules)
        rules[to_string(rm.rule)] = {{"pairs", rm.pairs}, {"auc", rm.auc}, {"dist", rm.dist}};
    m["rules"] = rules;
    json pairs = json::array();
    for (const auto& p : r.pairs)
        pairs.push_back({{"index", p.index},
                         {"rule", to_string(p.rule)},
                         {"auc", p.auc},
                         {"dist", p.dist},
                         {"tau", p.tau},
                         {"detected", p.detected},
                         {"changed", p.changed}});
    m["pairs"] = pairs;
    return m;
}

std::vector<PairMetrics> pairs_from_json(const json& m) {
    std::vector<PairMetrics> out;
    for (const auto& p : m.at("pairs")) {
        PairMetrics pm;
        pm.index = p.at("index").get<std::size_t>();
        pm.rule = parse_change_rule(p.at("rule").get<std::string>());
        pm.auc = p.at("auc").get<double>();
        pm.dist = p.at("dist").get<double>();
        pm.tau = p.at("tau").get<double>();
        pm.detected = p.at("detected").get<std::size_t>();
        pm.changed = p.at("changed").get<std::size_t>();
        out.push_back(pm);
    }
    return out;
}

std::vector<EpochLog> parse_train_log(const std::string& csv) {
    std::vector<EpochLog> out;
    std::size_t pos = csv.find('\n');
    while (pos != std::string::npos && pos + 1 < csv.size()) {
        const std::size_t end = csv.find('\n', pos + 1);
        const std::string line = csv.substr(pos + 1, end == std::string::npos ? std::string::npos : end - pos - 1);
        EpochLog e;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &e.epoch, &e.adv, &e.pre, &e.spa, &e.val_auc) == 5)
            out.push_back(e);
        pos = end;
    }
    return out;
}

template <class F>
auto run_stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ConfigError("stage " + name + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError("stage " + name + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError("stage " + name + ": " + e.what());
    } catch (const ShapeError& e) {
        throw ShapeError("stage " + name + ": " + e.what());
    } catch (const Error& e) {
        throw Error("stage " + name + ": " + e.what());
    }
}

} // namespace

std::vector<std::string> stage_plan(const ExperimentConfig& cfg) {
    std::vector<std::string> plan;
    for (const char* s : kStages)
        if (std::string(s) != "pretrain-fusion" || cfg.fusion.neural) plan.emplace_back(s);
    return plan;
}

std::vector<RuleMetrics> aggregate_by_rule(const std::vector<PairMetrics>& pairs) {
    std::vector<RuleMetrics> out;
    for (ChangeRule rule : {ChangeRule::Block, ChangeRule::Same, ChangeRule::Zero}) {
        RuleMetrics rm;
        rm.rule = rule;
        for (const auto& p : pairs)
            if (p.rule == rule) {
                rm.auc += p.auc;
                rm.dist += p.dist;
                ++rm.pairs;
            }
        if (rm.pairs == 0) continue;
        rm.auc /= static_cast<double>(rm.pairs);
        rm.dist /= static_cast<double>(rm.pairs);
        out.push_back(rm);
    }
    return out;
}

std::string report_csv(const ExperimentReport& r) {
    std::string out = "rule,pairs,auc,dist\n";
    for (const auto& rm : r.rules)
        out += to_string(rm.rule) + "," + std::to_string(rm.pairs) + "," + fmt(rm.auc) + "," + fmt(rm.dist) + "\n";
    out += "mean," + std::to_string(r.pairs.size()) + "," + fmt(r.mean_auc) + "," + fmt(r.mean_dist) + "\n";
    return out;
}

PretrainPairs fusion_pretrain_pairs(const ExperimentConfig& cfg) {
    const auto& pc = cfg.fusion.pretrain;
    const DegradationPair ops = data_operators(cfg);
    const auto refs = make_references(pc.refs);
    if (refs.front().bands() != ops.spectral.in_bands())
        throw ConfigError("fusion.pretrain.refs: band count differs from the data references");
    PretrainPairs out;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const UnmixModel model = unmix(refs[i], cfg.data.generation.k);
        DatasetPair p = no_change_pair(model, ops, i);
        (i + pc.held_out >= refs.size() ? out.held_out : out.train).push_back(std::move(p));
    }
    return out;
}

PretrainOutcome pretrain_fusion_stage(const ExperimentConfig& cfg, std::size_t threads) {
    const auto pairs = fusion_pretrain_pairs(cfg);
    const nn::Network net = nn::build_dual_branch_net(fusion_arch(cfg));
    Rng init_rng(Rng::derive_seed(cfg.fusion.pretrain.seed, 1));
    nn::NetParams params = net.init_params(init_rng);
    Rng rng(Rng::derive_seed(cfg.fusion.pretrain.seed, 2));
    PretrainOutcome out;
    out.log = pretrain_fusion(net, params, pairs.train, cfg.fusion.pretrain.train, rng, threads);
    const DegradationPair ops = data_operators(cfg);
    for (const auto& p : pairs.held_out) {
        const std::vector<HyperImage> in{p.y1, p.y2};
        out.held_out_consistency += consistency(nn::infer(net, params, in), p.y1, ops).value;
    }
    if (!pairs.held_out.empty()) out.held_out_consistency /= static_cast<double>(pairs.held_out.size());
    out.fusion = NeuralFusion{net, std::move(params)};
    return out;
}

FusionBackend make_fusion_backend(const ExperimentConfig& cfg, const std::optional<fs::path>& ckpt) {
    if (!ckpt) {
        if (cfg.fusion.neural) throw ConfigError("neural fusion backend requires a pretrained checkpoint");
        return FusionBackend(cfg.fusion.model_based);
    }
    auto [net, params] = nn::load_checkpoint(*ckpt);
    return FusionBackend(NeuralFusion{std::move(net), std::move(params)});
}

GeneratorState make_generator(const ExperimentConfig& cfg, FusionBackend fusion) {
    nn::Network net = nn::build_dual_branch_net(ci_arch(cfg));
    Rng rng(Rng::derive_seed(cfg.train.init_seed, 1));
    nn::NetParams params = net.init_params(rng);
    if (cfg.train.kaiming_init)
        for (const auto& l : net.layers())
            if (l.has_params())
                for (double& w : params.tensors[l.weight].data) w *= std::sqrt(6.0);
    if (cfg.train.zero_init_head) {
        // The head conv is the last parameterized layer: weight then bias.
        for (auto it = net.layers().rbegin(); it != net.layers().rend(); ++it)
            if (it->has_params()) {
                std::fill(params.tensors[it->weight].data.begin(), params.tensors[it->weight].data.end(), 0.0);
                std::fill(params.tensors[it->bias].data.begin(), params.tensors[it->bias].data.end(), 0.0);
                break;
            }
    }
    return GeneratorState{std::move(net), std::move(params), std::move(fusion), model_operators(cfg)};
}

Discriminator make_discriminator(const ExperimentConfig& cfg) {
    nn::Network net = nn::build_discriminator(disc_arch(cfg));
    Rng rng(Rng::derive_seed(cfg.train.init_seed, 2));
    nn::NetParams params = net.init_params(rng);
    return Discriminator{std::move(net), std::move(params)};
}

TrainConfig effective_train_config(const ExperimentConfig& cfg, std::size_t threads) {
    TrainConfig tc = cfg.train.train;
    tc.threads = std::max<std::size_t>(1, threads);
    tc.val_smooth_radius = cfg.detect.smooth_radius;
    return tc;
}

Detection detect_changes(const HyperImage& ci, const DetectConfig& cfg) {
    Detection d;
    d.energy = smooth(cva_energy(ci), cfg.smooth_radius);
    d.tau = cfg.tau ? *cfg.tau : otsu_threshold(d.energy);
    d.map = threshold_map(d.energy, d.tau);
    return d;
}

ExperimentReport run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
    ExperimentReport report;
    report.config_hash = cfg.hash;
    const auto plan = stage_plan(cfg);
    auto say = [&](const std::string& msg) {
        if (opts.log) *opts.log << msg << std::endl;
    };
    if (opts.dry_run) {
        say("config " + cfg.name + " (hash " + cfg.hash + ") is valid; workdir " + opts.workdir.string());
        for (const auto& s : plan) say("  stage " + s);
        report.stages_skipped = plan;
        return report;
    }
    if (opts.workdir.empty()) throw ConfigError("run: a workdir is required");
    fs::create_directories(opts.workdir);
    Manifest manifest(opts.workdir, cfg, opts.force);
    manifest.doc()["seeds"] = {{"data", cfg.data.seed},
                               {"train", cfg.train.train.seed},
                               {"init", cfg.train.init_seed},
                               {"pretrain", cfg.fusion.pretrain.seed}};
    const fs::path& wd = opts.workdir;
    bool upstream_changed = false;
    auto should_run = [&](const std::string& stage) {
        const bool run = upstream_changed || !manifest.done(stage);
        if (run) {
            manifest.invalidate_after(stage);
            upstream_changed = true;
            report.stages_run.push_back(stage);
            say("[" + stage + "] running");
        } else {
            report.stages_skipped.push_back(stage);
            say("[" + stage + "] up to date, skipped");
        }
        return run;
    };

    // gen
    if (should_run("gen")) {
        run_stage("gen", [&] {
            const auto refs = load_references(cfg.data);
            const Dataset ds = build_dataset(refs, cfg.data.generation, data_operators(cfg), cfg.data.seed);
            json prov = {{"config_hash", cfg.hash}, {"seed", cfg.data.seed}};
            write_dataset(wd / "data", ds, prov.dump());
            std::vector<std::string> outs{"data/manifest.json"};
            for (std::size_t i = 0; i < ds.train.size() + ds.test.size(); ++i)
                for (const char* f : {"Y1.hsc", "Y2.hsc", "X1.hsc", "X2.hsc", "dref.cm"})
                    outs.push_back("data/" + pair_name(i) + "/" + f);
            manifest.complete("gen", outs, {{"train_pairs", ds.train.size()}, {"test_pairs", ds.test.size()}});
        });
    }
    // Every downstream stage sees the dataset exactly as stored on disk.
    const Dataset ds = run_stage("gen", [&] { return read_dataset(wd / "data"); });
    const std::size_t n_train = ds.train.size();

    std::optional<fs::path> fusion_ckpt;
    if (cfg.fusion.neural) {
        fusion_ckpt = wd / "fusion" / "fusion.nnw";
        if (should_run("pretrain-fusion")) {
            run_stage("pretrain-fusion", [&] {
                const auto out = pretrain_fusion_stage(cfg, opts.threads);
                nn::save_checkpoint(*fusion_ckpt, out.fusion.net, out.fusion.params);
                std::string csv = "epoch,loss\n";
                for (std::size_t e = 0; e < out.log.epoch_loss.size(); ++e)
                    csv += std::to_string(e + 1) + "," + fmt(out.log.epoch_loss[e]) + "\n";
                io::write_text(wd / "fusion" / "pretrain_log.csv", csv);
                say("  held-out consistency " + fmt(out.held_out_consistency));
                manifest.complete("pretrain-fusion", {"fusion/fusion.nnw", "fusion/pretrain_log.csv"},
                                  {{"held_out_consistency", out.held_out_consistency},
                                   {"checksum", hex64(out.fusion.params.checksum())}});
            });
        }
    }

    // train
    const fs::path ci_ckpt = wd / "train" / "ci.nnw", d_ckpt = wd / "train" / "disc.nnw";
    if (should_run("train")) {
        run_stage("train", [&] {
            GeneratorState state = make_generator(cfg, make_fusion_backend(cfg, fusion_ckpt));
            Discriminator d = make_discriminator(cfg);
            const TrainConfig tc = effective_train_config(cfg, opts.threads);
            const TrainResult tr = train(state, d, ds.train, ds.test, tc, [&](const EpochLog& e) {
                say("  epoch " + std::to_string(e.epoch) + " L_adv " + fmt(e.adv) + " L_pre " + fmt(e.pre) + " L_spa " +
                    fmt(e.spa) + " val_AUC " + fixed4(e.val_auc));
            });
            if (tr.d_collapse_warning) say("  warning: discriminator scores saturated for a full epoch");
            nn::save_checkpoint(ci_ckpt, state.ci_net, state.ci_params);
            nn::save_checkpoint(d_ckpt, d.net, d.params);
            io::write_text(wd / "train" / "train_log.csv", training_log_csv(tr));
            manifest.complete("train", {"train/ci.nnw", "train/disc.nnw", "train/train_log.csv"},
                              {{"ci_checksum", hex64(state.ci_params.checksum())},
                               {"d_checksum", hex64(d.params.checksum())},
                               {"fusion", state.fusion.describe()},
                               {"d_collapse_warning", tr.d_collapse_warning}});
        });
    }
    report.train_log = parse_train_log(io::read_text(wd / "train" / "train_log.csv"));
    report.d_collapse_warning = manifest.doc()["stages"]["train"].value("d_collapse_warning", false);

    // detect
    if (should_run("detect")) {
        run_stage("detect", [&] {
            auto [net, params] = nn::load_checkpoint(ci_ckpt);
            GeneratorState state{std::move(net), std::move(params), make_fusion_backend(cfg, fusion_ckpt),
                                 model_operators(cfg)};
            std::vector<std::string> outs;
            json taus = json::array();
            for (std::size_t t = 0; t < ds.test.size(); ++t) {
                const std::string base = "detect/" + pair_name(n_train + t);
                const HyperImage ci = infer_ci(state, ds.test[t].y1, ds.test[t].y2);
                const Detection det = detect_changes(ci, cfg.detect);
                io::write_hsc(wd / (base + "_ci.hsc"), ci);
                io::write_hsc(wd / (base + "_energy.hsc"), energy_to_image(det.energy));
                io::write_cm(wd / (base + "_cm.cm"), det.map);
                outs.insert(outs.end(), {base + "_ci.hsc", base + "_energy.hsc", base + "_cm.cm"});
                taus.push_back(det.tau);
            }
            manifest.complete("detect", outs, {{"tau", taus}});
        });
    }

    // eval
    if (should_run("eval")) {
        run_stage("eval", [&] {
            std::vector<PairMetrics> pairs;
            std::vector<std::string> outs;
            const json& taus = manifest.doc()["stages"]["detect"]["tau"];
            for (std::size_t t = 0; t < ds.test.size(); ++t) {
                const std::string base = pair_name(n_train + t);
                const EnergyMap e = energy_from_image(io::read_hsc(wd / "detect" / (base + "_energy.hsc")));
                const BinaryMap cm = io::read_cm(wd / "detect" / (base + "_cm.cm"));
                const RocCurve c = roc(e, ds.test[t].dref);
                io::write_text(wd / "eval" / (base + "_roc.csv"), roc_csv(c));
                outs.push_back("eval/" + base + "_roc.csv");
                PairMetrics pm;
                pm.index = n_train + t;
                pm.rule = ds.test[t].rule;
                pm.auc = c.auc;
                pm.dist = c.dist;
                pm.tau = taus.at(t).get<double>();
                pm.detected = cm.count();
                pm.changed = ds.test[t].dref.count();
                pairs.push_back(pm);
            }
            ExperimentReport tmp;
            tmp.pairs = pairs;
            tmp.rules = aggregate_by_rule(pairs);
            for (const auto& p : pairs) {
                tmp.mean_auc += p.auc;
                tmp.mean_dist += p.dist;
            }
            if (!pairs.empty()) {
                tmp.mean_auc /= static_cast<double>(pairs.size());
                tmp.mean_dist /= static_cast<double>(pairs.size());
            }
            std::string csv = "pair,rule,auc,dist,tau,detected,changed\n";
            for (const auto& p : pairs)
                csv += std::to_string(p.index) + "," + to_string(p.rule) + "," + fmt(p.auc) + "," + fmt(p.dist) + "," +
                       fmt(p.tau) + "," + std::to_string(p.detected) + "," + std::to_string(p.changed) + "\n";
            io::write_text(wd / "eval" / "metrics.csv", csv);
            outs.push_back("eval/metrics.csv");
            manifest.doc()["metrics"] = metrics_json(tmp);
            manifest.complete("eval", outs);
        });
    }
    const json& m = manifest.doc()["metrics"];
    report.pairs = pairs_from_json(m);
    report.rules = aggregate_by_rule(report.pairs);
    report.mean_auc = m.at("mean_auc").get<double>();
    report.mean_dist = m.at("mean_dist").get<double>();

    if (should_run("report")) {
        run_stage("report", [&] {
            io::write_text(wd / "report.csv", report_csv(report));
            manifest.complete("report", {"report.csv"});
        });
    }
    for (const auto& rm : report.rules)
        say("  " + to_string(rm.rule) + ": auc " + fixed4(rm.auc) + " dist " + fixed4(rm.dist) + " (" +
            std::to_string(rm.pairs) + " pairs)");
    return report;
}

ExperimentConfig with_beta(const ExperimentConfig& cfg, double beta) {
    ExperimentConfig out = cfg;
    out.train.train.beta = beta;
    json j = json::parse(cfg.canonical_json);
    j["train"]["beta"] = beta;
    out.canonical_json = j.dump();
    out.hash = hex64(fnv1a(out.canonical_json));
    return out;
}

AblationResult run_beta_ablation(const ExperimentConfig& cfg, const RunOptions& opts) {
    AblationResult r;
    for (double beta : cfg.eval.ablation_betas) {
        RunOptions sub = opts;
        sub.workdir = opts.workdir / ("beta_" + fmt(beta));
        if (opts.log) *opts.log << "== beta " << fmt(beta) << std::endl;
        r.betas.push_back(beta);
        r.reports.push_back(run_pipeline(with_beta(cfg, beta), sub));
    }
    return r;
}

std::string ablation_csv(const AblationResult& r) {
    std::string out = "rule,metric";
    for (double b : r.betas) out += ",beta=" + fmt(b);
    out += "\n";
    for (ChangeRule rule : {ChangeRule::Block, ChangeRule::Same, ChangeRule::Zero}) {
        for (int metric = 0; metric < 2; ++metric) {
            std::string line = to_string(rule) + (metric == 0 ? ",AUC" : ",dist");
            bool any = false;
            for (const auto& rep : r.reports) {
                auto it = std::find_if(rep.rules.begin(), rep.rules.end(),
                                       [&](const RuleMetrics& m) { return m.rule == rule; });
                if (it == rep.rules.end()) {
                    line += ",";
                } else {
                    line += "," + fixed4(metric == 0 ? it->auc : it->dist);
                    any = true;
                }
            }
            if (any) out += line + "\n";
        }
    }
    return out;
}

} // namespace cdgan
