#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cdgan/io.hpp"
#include "cdgan/pipeline.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cdgan;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_json() {
    return nlohmann::json::parse(R"({
      "name": "tiny",
      "data": {
        "references": {"procedural": {"count": 2, "bands": 8, "rows": 16, "cols": 16, "materials": 3, "seed": 1}},
        "k": 3, "rules": ["Rz", "Rs", "Rb"], "directions": ["forward", "reverse"],
        "region_frac": [0.05, 0.2], "test_pairs": 3, "seed": 2
      },
      "operators": {"blur_sigma": 1.0, "subsample_factor": 2, "spectral_width": 2},
      "fusion": {"backend": "model_based", "lambda": 1e-4, "cg_iters": 200, "cg_tol": 1e-6},
      "train": {"alpha": 1.0, "beta": 1e-3, "lr": 2e-4, "epochs": 1, "batch": 4,
                "branch_channels": 4, "trunk_channels": 4, "disc_channels": 4, "seed": 3},
      "detect": {"threshold": "otsu", "smooth_radius": 1},
      "eval": {"ablation_betas": [0, 1e-3]}
    })");
}

ExperimentConfig tiny(const nlohmann::json& j = tiny_json()) { return parse_config(j.dump()); }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cdgan_test_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(tiny());
    SUBCASE("unknown keys are rejected") {
        auto j = tiny_json();
        j["train"]["learning_rate"] = 1e-3;
        CHECK_THROWS_AS(tiny(j), ConfigError);
        auto k = tiny_json();
        k["extra"] = 1;
        CHECK_THROWS_AS(tiny(k), ConfigError);
    }
    SUBCASE("seeds are mandatory") {
        for (const char* block : {"data", "train"}) {
            auto j = tiny_json();
            j[block].erase("seed");
            CHECK_THROWS_AS(tiny(j), ConfigError);
        }
        auto j = tiny_json();
        j["data"]["references"]["procedural"].erase("seed");
        CHECK_THROWS_AS(tiny(j), ConfigError);
    }
    SUBCASE("neural backend needs a pretraining block") {
        auto j = tiny_json();
        j["fusion"]["backend"] = "neural";
        CHECK_THROWS_AS(tiny(j), ConfigError);
    }
    SUBCASE("missing reference files") {
        auto j = tiny_json();
        j["data"]["references"] = {{"files", {"/nonexistent/ref.hsc"}}};
        CHECK_THROWS_AS(tiny(j), ConfigError);
    }
    SUBCASE("malformed text") { CHECK_THROWS_AS(parse_config("{"), ConfigError); }
    SUBCASE("hash tracks content") {
        auto j = tiny_json();
        j["train"]["beta"] = 0.0;
        CHECK(tiny(j).hash != tiny().hash);
        CHECK(tiny().hash == tiny().hash);
        CHECK(with_beta(tiny(), 0.0).hash == tiny(j).hash);
    }
}

TEST_CASE("generator initialization options") {
    auto j = tiny_json();
    j["train"]["init"] = "xavier";
    CHECK_THROWS_AS(tiny(j), ConfigError);

    const GeneratorState base = make_generator(tiny(), FusionBackend(ModelBasedFusion{}));
    j["train"]["init"] = "kaiming";
    const GeneratorState he = make_generator(tiny(j), FusionBackend(ModelBasedFusion{}));
    j["train"]["zero_init_head"] = true;
    const GeneratorState he0 = make_generator(tiny(j), FusionBackend(ModelBasedFusion{}));

    const auto& layers = base.ci_net.layers();
    std::size_t head = 0;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].has_params()) head = i;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].has_params()) continue;
        const auto& w0 = base.ci_params.tensors[layers[i].weight].data;
        const auto& w1 = he.ci_params.tensors[layers[i].weight].data;
        for (std::size_t k = 0; k < w0.size(); ++k) REQUIRE(w1[k] == doctest::Approx(w0[k] * std::sqrt(6.0)));
        CHECK(he.ci_params.tensors[layers[i].bias].data == base.ci_params.tensors[layers[i].bias].data);
        const bool zeroed = i == head;
        for (double v : he0.ci_params.tensors[layers[i].weight].data) REQUIRE((v == 0.0) == zeroed);
    }
}

TEST_CASE("dry run prints the plan without side effects") {
    const fs::path wd = scratch("dry");
    std::ostringstream log;
    const ExperimentReport r = run_pipeline(tiny(), RunOptions{wd, false, true, 1, &log});
    CHECK(!fs::exists(wd));
    CHECK(r.stages_run.empty());
    CHECK(stage_plan(tiny()) == std::vector<std::string>{"gen", "train", "detect", "eval", "report"});
    CHECK(log.str().find("train") != std::string::npos);
}

TEST_CASE("end-to-end run, manifest and idempotence") {
    const fs::path wd = scratch("run");
    const ExperimentConfig cfg = tiny();
    const ExperimentReport a = run_pipeline(cfg, RunOptions{wd, false, false, 1, nullptr});
    CHECK(a.stages_run.size() == 5);
    REQUIRE(a.pairs.size() == 3);
    CHECK(a.rules.size() == 3);
    for (const auto& p : a.pairs) {
        CHECK(p.auc >= 0.0);
        CHECK(p.auc <= 1.0);
        CHECK(fs::exists(wd / "eval" / ("pair_" + std::to_string(p.index) + "_roc.csv")));
    }
    CHECK(fs::exists(wd / "report.csv"));
    CHECK(io::read_text(wd / "report.csv").find("Rz") != std::string::npos);

    const auto manifest = nlohmann::json::parse(io::read_text(wd / "manifest.json"));
    CHECK(manifest.at("config_hash") == cfg.hash);
    for (const auto& out : manifest.at("outputs")) CHECK(fs::exists(wd / out.get<std::string>()));
    for (const auto& entry : fs::recursive_directory_iterator(wd)) {
        if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
        const std::string rel = fs::relative(entry.path(), wd).generic_string();
        bool declared = false;
        for (const auto& out : manifest.at("outputs")) declared |= out.get<std::string>() == rel;
        CHECK_MESSAGE(declared, rel);
    }

    const ExperimentReport b = run_pipeline(cfg, RunOptions{wd, false, false, 1, nullptr});
    CHECK(b.stages_run.empty());
    CHECK(b.stages_skipped.size() == 5);
    CHECK(b.mean_auc == a.mean_auc);

    auto j = tiny_json();
    j["train"]["beta"] = 0.0;
    CHECK_THROWS_AS(run_pipeline(tiny(j), RunOptions{wd, false, false, 1, nullptr}), ConfigError);

    const fs::path wd2 = scratch("run2");
    const ExperimentReport c = run_pipeline(cfg, RunOptions{wd2, false, false, 1, nullptr});
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(c.pairs[i].auc == a.pairs[i].auc);
        CHECK(c.pairs[i].dist == a.pairs[i].dist);
    }
    const ExperimentReport d = run_pipeline(cfg, RunOptions{wd2, true, false, 1, nullptr});
    CHECK(d.stages_run.size() == 5);
    CHECK(d.mean_auc == a.mean_auc);
    fs::remove_all(wd);
    fs::remove_all(wd2);
}

TEST_CASE("stage failures name the stage and keep partial outputs") {
    const fs::path wd = scratch("fail");
    run_pipeline(tiny(), RunOptions{wd, false, false, 1, nullptr});
    fs::remove(wd / "train" / "ci.nnw");
    std::string first;
    for (const auto& entry : fs::directory_iterator(wd / "data"))
        if (entry.is_directory() && (first.empty() || entry.path().string() < first)) first = entry.path().string();
    io::write_text(fs::path(first) / "Y1.hsc", "HSC1");
    try {
        run_pipeline(tiny(), RunOptions{wd, false, false, 1, nullptr});
        FAIL("expected failure");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).rfind("stage gen: ", 0) == 0);
    }
    CHECK(fs::exists(wd / "data" / "manifest.json"));
    fs::remove_all(wd);
}

TEST_CASE("beta ablation emits one column per beta") {
    const fs::path wd = scratch("ablation");
    const AblationResult r = run_beta_ablation(tiny(), RunOptions{wd, false, false, 1, nullptr});
    REQUIRE(r.betas == std::vector<double>{0.0, 1e-3});
    const std::string csv = ablation_csv(r);
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header.find("beta=0") != std::string::npos);
    CHECK(header.find("beta=0.001") != std::string::npos);
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 2 * r.reports.front().rules.size());
    CHECK(fs::exists(wd / "beta_0"));
    fs::remove_all(wd);
}

TEST_CASE("bundled configs parse") {
    const char* src = std::getenv("CDGAN_SOURCE_DIR");
    REQUIRE(src != nullptr);
    for (const auto& entry : fs::directory_iterator(fs::path(src) / "configs")) {
        if (entry.path().extension() != ".cfg") continue;
        CHECK_NOTHROW(load_config(entry.path()));
    }
    const ExperimentConfig desk = load_config(fs::path(src) / "configs" / "desk.cfg");
    CHECK(desk.train.train.beta == 1e-3);
    CHECK(desk.train.train.epochs == 15);
    CHECK(desk.train.train.batch == 4);
}
