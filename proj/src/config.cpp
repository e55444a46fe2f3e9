#include "cdgan/config.hpp"

#include <cstdio>
#include <initializer_list>
#include <set>

#include "cdgan/io.hpp"
#include "json.hpp"

namespace cdgan {
namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
        if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

std::uint64_t require_seed(const json& j, const std::string& where) {
    if (!j.contains("seed")) throw ConfigError(where + ": 'seed' is mandatory");
    try {
        return j.at("seed").get<std::uint64_t>();
    } catch (const json::exception&) {
        throw ConfigError(where + ".seed: expected a nonnegative integer");
    }
}

ProceduralRefs parse_procedural(const json& j, const std::string& where) {
    check_keys(j, {"count", "bands", "rows", "cols", "materials", "seed"}, where);
    ProceduralRefs p;
    p.count = get_or<std::size_t>(j, "count", p.count, where);
    p.bands = get_or<std::size_t>(j, "bands", p.bands, where);
    p.rows = get_or<std::size_t>(j, "rows", p.rows, where);
    p.cols = get_or<std::size_t>(j, "cols", p.cols, where);
    p.materials = get_or<std::size_t>(j, "materials", p.materials, where);
    p.seed = require_seed(j, where);
    if (p.count == 0) throw ConfigError(where + ".count must be >= 1");
    return p;
}

} // namespace

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(root, {"name", "data", "operators", "fusion", "train", "detect", "eval"}, "config");
    for (const char* block : {"data", "operators", "fusion", "train"})
        if (!root.contains(block)) throw ConfigError(std::string("config: missing '") + block + "' block");

    ExperimentConfig cfg;
    cfg.name = get_or<std::string>(root, "name", cfg.name, "config");

    // data
    {
        const json& d = root.at("data");
        check_keys(d, {"references", "k", "rules", "directions", "region_frac", "test_pairs", "obs_noise_sd", "seed"},
                   "data");
        if (!d.contains("references")) throw ConfigError("data: 'references' is mandatory");
        const json& r = d.at("references");
        check_keys(r, {"procedural", "files"}, "data.references");
        if (r.contains("procedural") == r.contains("files"))
            throw ConfigError("data.references: give exactly one of 'procedural' or 'files'");
        if (r.contains("procedural")) {
            cfg.data.references = parse_procedural(r.at("procedural"), "data.references.procedural");
        } else {
            std::vector<std::filesystem::path> files;
            for (const auto& f : r.at("files")) {
                std::filesystem::path p = f.get<std::string>();
                if (p.is_relative()) p = base_dir / p;
                if (!std::filesystem::exists(p)) throw ConfigError("data.references: file not found: " + p.string());
                files.push_back(p);
            }
            if (files.empty()) throw ConfigError("data.references.files: empty list");
            cfg.data.references = files;
        }
        auto& g = cfg.data.generation;
        g.k = get_or<std::size_t>(d, "k", g.k, "data");
        if (d.contains("rules")) {
            g.rules.clear();
            for (const auto& s : d.at("rules")) g.rules.push_back(parse_change_rule(s.get<std::string>()));
        }
        if (d.contains("directions")) {
            g.directions.clear();
            for (const auto& s : d.at("directions")) g.directions.push_back(parse_direction(s.get<std::string>()));
        }
        if (d.contains("region_frac")) {
            const auto v = d.at("region_frac").get<std::vector<double>>();
            if (v.size() != 2) throw ConfigError("data.region_frac: expected [min, max]");
            g.min_region_frac = v[0];
            g.max_region_frac = v[1];
        }
        g.test_pairs = get_or<std::size_t>(d, "test_pairs", g.test_pairs, "data");
        g.obs_noise_sd = get_or<double>(d, "obs_noise_sd", g.obs_noise_sd, "data");
        cfg.data.seed = require_seed(d, "data");
    }

    // operators
    {
        const json& o = root.at("operators");
        check_keys(o, {"blur_sigma", "subsample_factor", "kernel_radius", "spectral_width", "corruption"}, "operators");
        auto& op = cfg.operators;
        op.blur_sigma = get_or<double>(o, "blur_sigma", op.blur_sigma, "operators");
        op.subsample_factor = get_or<std::size_t>(o, "subsample_factor", op.subsample_factor, "operators");
        op.kernel_radius = get_or<int>(o, "kernel_radius", op.kernel_radius, "operators");
        op.spectral_width = get_or<std::size_t>(o, "spectral_width", op.spectral_width, "operators");
        if (o.contains("corruption")) {
            const json& c = o.at("corruption");
            check_keys(c, {"blur_sigma", "snr_db", "seed"}, "operators.corruption");
            CorruptionConfig cc;
            cc.blur_sigma = get_or<double>(c, "blur_sigma", cc.blur_sigma, "operators.corruption");
            if (c.contains("snr_db") && c.at("snr_db").is_string()) {
                if (c.at("snr_db").get<std::string>() != "inf")
                    throw ConfigError("operators.corruption.snr_db: expected a number or \"inf\"");
                cc.snr_db = kNoCorruption;
            } else {
                cc.snr_db = get_or<double>(c, "snr_db", cc.snr_db, "operators.corruption");
            }
            cc.seed = require_seed(c, "operators.corruption");
            op.corruption = cc;
        }
    }

    // fusion
    {
        const json& f = root.at("fusion");
        check_keys(f, {"backend", "lambda", "cg_iters", "cg_tol", "branch_channels", "trunk_channels", "pretrain"},
                   "fusion");
        const auto backend = get_or<std::string>(f, "backend", "model_based", "fusion");
        if (backend != "model_based" && backend != "neural")
            throw ConfigError("fusion.backend: expected 'model_based' or 'neural', got '" + backend + "'");
        auto& fc = cfg.fusion;
        fc.neural = backend == "neural";
        fc.model_based.lambda = get_or<double>(f, "lambda", fc.model_based.lambda, "fusion");
        fc.model_based.cg_iters = get_or<std::size_t>(f, "cg_iters", fc.model_based.cg_iters, "fusion");
        fc.model_based.cg_tol = get_or<double>(f, "cg_tol", fc.model_based.cg_tol, "fusion");
        if (!(fc.model_based.lambda > 0.0)) throw ConfigError("fusion.lambda must be > 0");
        fc.branch_channels = get_or<std::size_t>(f, "branch_channels", fc.branch_channels, "fusion");
        fc.trunk_channels = get_or<std::size_t>(f, "trunk_channels", fc.trunk_channels, "fusion");
        if (f.contains("pretrain")) {
            const json& p = f.at("pretrain");
            check_keys(p, {"refs", "held_out", "epochs", "batch", "lr", "seed"}, "fusion.pretrain");
            auto& pc = fc.pretrain;
            if (p.contains("refs")) pc.refs = parse_procedural(p.at("refs"), "fusion.pretrain.refs");
            pc.held_out = get_or<std::size_t>(p, "held_out", pc.held_out, "fusion.pretrain");
            pc.train.epochs = get_or<std::size_t>(p, "epochs", pc.train.epochs, "fusion.pretrain");
            pc.train.batch = get_or<std::size_t>(p, "batch", pc.train.batch, "fusion.pretrain");
            pc.train.adam.lr = get_or<double>(p, "lr", pc.train.adam.lr, "fusion.pretrain");
            pc.seed = require_seed(p, "fusion.pretrain");
            if (pc.held_out >= pc.refs.count)
                throw ConfigError("fusion.pretrain.held_out must be smaller than refs.count");
        } else if (fc.neural) {
            throw ConfigError("fusion: the neural backend needs a 'pretrain' block");
        }
    }

    // train
    {
        const json& t = root.at("train");
        check_keys(t,
                   {"alpha", "beta", "lr", "beta1", "beta2", "eps", "epochs", "batch", "seed", "init_seed",
                    "branch_channels", "trunk_channels", "disc_channels", "saturating", "d_clamp", "zero_init_head", "init"},
                   "train");
        auto& tb = cfg.train;
        auto& tc = tb.train;
        tc.alpha = get_or<double>(t, "alpha", tc.alpha, "train");
        tc.beta = get_or<double>(t, "beta", tc.beta, "train");
        tc.adam.lr = get_or<double>(t, "lr", tc.adam.lr, "train");
        tc.adam.beta1 = get_or<double>(t, "beta1", tc.adam.beta1, "train");
        tc.adam.beta2 = get_or<double>(t, "beta2", tc.adam.beta2, "train");
        tc.adam.eps = get_or<double>(t, "eps", tc.adam.eps, "train");
        tc.epochs = get_or<std::size_t>(t, "epochs", tc.epochs, "train");
        tc.batch = get_or<std::size_t>(t, "batch", tc.batch, "train");
        tc.saturating = get_or<bool>(t, "saturating", tc.saturating, "train");
        tc.d_clamp = get_or<double>(t, "d_clamp", tc.d_clamp, "train");
        tc.seed = require_seed(t, "train");
        tb.init_seed = get_or<std::uint64_t>(t, "init_seed", tc.seed, "train");
        tb.branch_channels = get_or<std::size_t>(t, "branch_channels", tb.branch_channels, "train");
        tb.trunk_channels = get_or<std::size_t>(t, "trunk_channels", tb.trunk_channels, "train");
        tb.disc_channels = get_or<std::size_t>(t, "disc_channels", tb.disc_channels, "train");
        tb.zero_init_head = get_or<bool>(t, "zero_init_head", tb.zero_init_head, "train");
        const std::string init = get_or<std::string>(t, "init", "default", "train");
        if (init != "default" && init != "kaiming")
            throw ConfigError("train.init: expected \"default\" or \"kaiming\", got \"" + init + "\"");
        tb.kaiming_init = init == "kaiming";
        if (tc.alpha < 0.0 || tc.beta < 0.0) throw ConfigError("train: alpha and beta must be >= 0");
        if (tc.batch == 0) throw ConfigError("train.batch must be >= 1");
    }

    if (root.contains("detect")) {
        const json& d = root.at("detect");
        check_keys(d, {"threshold", "smooth_radius"}, "detect");
        if (d.contains("threshold")) {
            const json& th = d.at("threshold");
            if (th.is_string()) {
                if (th.get<std::string>() != "otsu") throw ConfigError("detect.threshold: expected \"otsu\" or a number");
            } else if (th.is_number()) {
                cfg.detect.tau = th.get<double>();
            } else {
                throw ConfigError("detect.threshold: expected \"otsu\" or a number");
            }
        }
        cfg.detect.smooth_radius = get_or<std::size_t>(d, "smooth_radius", cfg.detect.smooth_radius, "detect");
    }
    cfg.train.train.val_smooth_radius = cfg.detect.smooth_radius;

    if (root.contains("eval")) {
        const json& e = root.at("eval");
        check_keys(e, {"ablation_betas"}, "eval");
        if (e.contains("ablation_betas")) cfg.eval.ablation_betas = e.at("ablation_betas").get<std::vector<double>>();
    }

    // Cross-block shape checks.
    std::size_t bands = 0, rows = 0, cols = 0;
    if (const auto* p = std::get_if<ProceduralRefs>(&cfg.data.references)) {
        bands = p->bands;
        rows = p->rows;
        cols = p->cols;
        if (cfg.data.generation.k > std::min(bands, rows * cols))
            throw ConfigError("data.k exceeds min(bands, pixels) of the references");
    }
    if (bands) {
        if (bands < cfg.operators.spectral_width)
            throw ConfigError("operators.spectral_width exceeds the number of reference bands");
        if (rows % cfg.operators.subsample_factor || cols % cfg.operators.subsample_factor)
            throw ConfigError("reference rows/cols must be divisible by operators.subsample_factor");
    }

    cfg.canonical_json = root.dump();
    cfg.hash = hex64(fnv1a(cfg.canonical_json));
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_text(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    return parse_config(text, path.parent_path());
}

DegradationPair data_operators(const ExperimentConfig& cfg) {
    const auto& o = cfg.operators;
    std::size_t bands = 0;
    if (const auto* p = std::get_if<ProceduralRefs>(&cfg.data.references))
        bands = p->bands;
    else
        bands = io::read_hsc(std::get<std::vector<std::filesystem::path>>(cfg.data.references).front()).bands();
    return {SpatialOp(o.blur_sigma, o.subsample_factor, o.kernel_radius),
            SpectralOp::band_average(bands, o.spectral_width)};
}

DegradationPair model_operators(const ExperimentConfig& cfg) {
    DegradationPair ops = data_operators(cfg);
    if (!cfg.operators.corruption) return ops;
    Rng rng(cfg.operators.corruption->seed);
    return corrupt_operators(ops, cfg.operators.corruption->blur_sigma, cfg.operators.corruption->snr_db, rng);
}

std::vector<HyperImage> make_references(const ProceduralRefs& p) {
    std::vector<HyperImage> refs;
    for (std::size_t i = 0; i < p.count; ++i) {
        Rng rng(Rng::derive_seed(p.seed, i));
        refs.push_back(procedural_reference(p.bands, p.rows, p.cols, p.materials, rng));
    }
    return refs;
}

std::vector<HyperImage> load_references(const DataConfig& d) {
    if (const auto* p = std::get_if<ProceduralRefs>(&d.references)) return make_references(*p);
    std::vector<HyperImage> refs;
    for (const auto& f : std::get<std::vector<std::filesystem::path>>(d.references)) refs.push_back(io::read_hsc(f));
    for (const auto& r : refs)
        if (r.shape() != refs.front().shape()) throw ConfigError("reference images must share one shape");
    return refs;
}

namespace {

nn::DualBranchArch base_arch(const ExperimentConfig& cfg) {
    const DegradationPair ops = data_operators(cfg);
    nn::DualBranchArch a;
    a.lrhs_bands = ops.spectral.in_bands();
    a.hrls_bands = ops.spectral.out_bands();
    a.out_bands = ops.spectral.in_bands();
    a.factor = cfg.operators.subsample_factor;
    return a;
}

} // namespace

nn::DualBranchArch fusion_arch(const ExperimentConfig& cfg) {
    auto a = base_arch(cfg);
    a.branch_channels = cfg.fusion.branch_channels;
    a.trunk_channels = cfg.fusion.trunk_channels;
    a.final_relu = true;
    return a;
}

nn::DualBranchArch ci_arch(const ExperimentConfig& cfg) {
    auto a = base_arch(cfg);
    a.branch_channels = cfg.train.branch_channels;
    a.trunk_channels = cfg.train.trunk_channels;
    a.final_relu = false;
    return a;
}

nn::DiscriminatorArch disc_arch(const ExperimentConfig& cfg) {
    return {base_arch(cfg).lrhs_bands, cfg.train.disc_channels};
}

} // namespace cdgan
