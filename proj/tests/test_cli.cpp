#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "ccam/commands.hpp"
#include "ccam/error.hpp"
#include "ccam/rng.hpp"

using namespace ccam;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::uint64_t hash_file(const std::string& path) {
    const std::string bytes = slurp(path);
    return fnv1a(bytes.data(), bytes.size());
}

RunConfig base_config() {
    RunConfig cfg;
    cfg.seed = 404;
    cfg.jobs = 2;
    cfg.output_dir = "cli_world/out";
    cfg.dataset.dir = "cli_world/data";
    cfg.dataset.count = 120;
    cfg.dataset.class_rule = "shape_kind";
    cfg.model.stages = {6, 12};
    cfg.model.checkpoint = "cli_world/out/classifier.json";
    cfg.translator.checkpoint = "cli_world/out/translator.json";
    cfg.model.train_epochs = 3;
    cfg.model.train_lr = 0.05;
    cfg.model.train_batch_size = 16;
    cfg.model.target_accuracy = 0.995;
    cfg.vlm.dim = 32;
    cfg.translator.hidden = {20};
    cfg.translator.train.max_epochs = 5;
    cfg.translator.train.base_lr = 0.05;
    cfg.translator.train.warmup_peak_lr = 0.08;
    cfg.translator.train.warmup_epochs = 2;
    cfg.translator.train.batch_size = 32;
    cfg.explain.k_channels = 8;
    cfg.evaluate.plot_samples = 2;
    return cfg;
}

// one synth+train for the whole suite
struct CliWorld {
    RunConfig cfg;
    CliWorld() : cfg(base_config()) {
        fs::remove_all("cli_world");
        fs::create_directory("cli_world");
        REQUIRE(cmd_synth(cfg) == 0);
        REQUIRE(cmd_train(cfg) == 0);
    }
};

CliWorld& world() {
    static CliWorld w;
    return w;
}

}  // namespace

TEST_CASE("synth writes a complete dataset tree; reruns hash identically") {
    CliWorld& w = world();
    CHECK(fs::exists("cli_world/data/manifest.json"));
    CHECK(fs::exists("cli_world/data/labels.json"));
    CHECK(fs::exists("cli_world/data/concepts.json"));
    CHECK(fs::exists("cli_world/data/images/scene_00000.png"));
    const std::uint64_t h1 = hash_file("cli_world/data/manifest.json");

    RunConfig rerun = w.cfg;
    rerun.dataset.dir = "cli_world/data_rerun";
    REQUIRE(cmd_synth(rerun) == 0);
    CHECK(hash_file("cli_world/data_rerun/manifest.json") == h1);
    CHECK(hash_file("cli_world/data_rerun/images/scene_00007.png") ==
          hash_file("cli_world/data/images/scene_00007.png"));
    fs::remove_all("cli_world/data_rerun");
}

TEST_CASE("synth refuses to write under a missing parent, leaving nothing behind") {
    RunConfig cfg = base_config();
    cfg.dataset.dir = "cli_world/missing/data";
    CHECK(cmd_synth(cfg) != 0);
    CHECK_FALSE(fs::exists("cli_world/missing"));
}

TEST_CASE("config: unknown keys are rejected, overrides apply with typed parsing") {
    nlohmann::json j = base_config().to_json();
    j["typo_key"] = 1;
    CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);

    nlohmann::json good = base_config().to_json();
    apply_override(good, "translator.train.base_lr=0.125");
    apply_override(good, "jobs=3");
    apply_override(good, "dataset.class_rule=color_biased");
    apply_override(good, "translator.train.use_similarity_loss=false");
    RunConfig cfg = RunConfig::from_json(good);
    CHECK(cfg.translator.train.base_lr == 0.125);
    CHECK(cfg.jobs == 3);
    CHECK(cfg.dataset.class_rule == "color_biased");
    CHECK_FALSE(cfg.translator.train.use_similarity_loss);

    CHECK_THROWS_AS(apply_override(good, "no_equals_sign"), ConfigError);

    const char* path = "cli_world/bad_config.json";
    {
        std::ofstream out(path);
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_run_config(path, {}), ConfigError);
}

TEST_CASE("train produces a checkpoint and a schema-complete report") {
    CliWorld& w = world();
    CHECK(fs::exists(w.cfg.classifier_checkpoint()));
    CHECK(fs::exists(w.cfg.translator_checkpoint()));
    nlohmann::json report;
    std::ifstream(w.cfg.output_dir + "/train_report.json") >> report;
    CHECK(report.contains("schema_version"));
    REQUIRE(report.contains("epochs"));
    CHECK(report.at("stopped_epoch").get<int>() >= 1);
    CHECK(report.at("epochs").size() ==
          static_cast<std::size_t>(report.at("stopped_epoch").get<int>()));
    for (const char* key : {"train_emb", "train_sim", "train_total", "val_emb", "val_sim",
                            "val_total"})
        CHECK(report.at("epochs")[0].contains(key));
    CHECK(report.contains("final_lr"));
    CHECK(report.at("checkpoint").get<std::string>() == w.cfg.translator_checkpoint());
}

TEST_CASE("training without the similarity loss zeroes the sim column") {
    CliWorld& w = world();
    RunConfig cfg = w.cfg;
    cfg.output_dir = "cli_world/out_nosim";
    cfg.translator.checkpoint = cfg.output_dir + "/translator.json";
    cfg.translator.train.use_similarity_loss = false;
    cfg.translator.train.max_epochs = 2;
    REQUIRE(cmd_train(cfg) == 0);
    nlohmann::json report;
    std::ifstream(cfg.output_dir + "/train_report.json") >> report;
    CHECK_FALSE(report.at("use_similarity_loss").get<bool>());
    for (const auto& e : report.at("epochs")) {
        CHECK(e.at("train_sim").get<double>() == 0.0);
        CHECK(e.at("val_sim").get<double>() == 0.0);
    }
}

TEST_CASE("explain: filtered concepts, artifacts, sorted contributions, round trip") {
    CliWorld& w = world();
    RunConfig cfg = w.cfg;
    cfg.output_dir = "cli_world/out_explain";
    const std::string image = "cli_world/data/images/scene_00003.png";
    REQUIRE(cmd_explain(cfg, image, {"red", "circle", "plaid"}) == 0);

    nlohmann::json record;
    const std::string record_path = cfg.output_dir + "/explanation_scene_00003.json";
    std::ifstream(record_path) >> record;
    CHECK(record.at("warnings").size() == 1);  // 'plaid' is unknown, not fatal
    REQUIRE(record.at("concepts").size() == 2);
    double prev = 1e18;
    for (const auto& entry : record.at("concepts")) {
        CHECK(entry.at("association_scores").size() == 2);  // one per captured layer
        for (const char* key : {"png", "raw", "sidecar"})
            CHECK(fs::exists(entry.at("artifacts").at(key).get<std::string>()));
        const double mag = std::fabs(entry.at("contribution").get<double>());
        CHECK(mag <= prev);  // sorted by absolute contribution
        prev = mag;
    }
    CHECK(fs::exists(cfg.output_dir + "/contributions_scene_00003.svg"));
    CHECK(fs::exists(cfg.output_dir + "/masking_curves_scene_00003.svg"));

    // parse -> serialize -> byte-equal
    const std::string bytes = slurp(record_path);
    nlohmann::json reparsed = nlohmann::json::parse(bytes);
    CHECK(reparsed.dump(1) + "\n" == bytes);

    // filtering to one concept emits exactly one artifact set
    RunConfig one = w.cfg;
    one.output_dir = "cli_world/out_explain_one";
    REQUIRE(cmd_explain(one, image, {"red"}) == 0);
    nlohmann::json single;
    std::ifstream(one.output_dir + "/explanation_scene_00003.json") >> single;
    CHECK(single.at("concepts").size() == 1);
}

TEST_CASE("evaluate: both modes, schema, determinism across reruns") {
    CliWorld& w = world();
    RunConfig cfg = w.cfg;
    cfg.output_dir = "cli_world/out_eval";
    REQUIRE(cmd_evaluate(cfg) == 0);
    const std::string results_path = cfg.output_dir + "/results.json";
    nlohmann::json results;
    std::ifstream(results_path) >> results;
    REQUIRE(results.contains("modes"));
    for (const char* mode : {"best_nra_of_top_k", "top1_by_association"}) {
        const auto& section = results.at("modes").at(mode);
        CHECK(section.contains("samples"));
        CHECK(section.contains("per_category"));
        CHECK(section.contains("average"));
        CHECK(section.contains("skipped"));
        if (!section.at("samples").empty()) {
            const auto& s = section.at("samples")[0];
            for (const char* key :
                 {"image", "concept", "category", "layer", "epg", "auc", "auc_high", "auc_low",
                  "nra", "hit"})
                CHECK(s.contains(key));
        }
    }
    const std::uint64_t h1 = hash_file(results_path);

    RunConfig again = cfg;
    again.output_dir = "cli_world/out_eval2";
    REQUIRE(cmd_evaluate(again) == 0);
    CHECK(hash_file(again.output_dir + "/results.json") == h1);
}

TEST_CASE("evaluate honors a single-mode restriction") {
    CliWorld& w = world();
    RunConfig cfg = w.cfg;
    cfg.output_dir = "cli_world/out_eval_top1";
    cfg.evaluate.mode = "top1_by_association";
    REQUIRE(cmd_evaluate(cfg) == 0);
    nlohmann::json results;
    std::ifstream(cfg.output_dir + "/results.json") >> results;
    CHECK(results.at("modes").size() == 1);
    CHECK(results.at("modes").contains("top1_by_association"));
}

TEST_CASE("evaluate fails cleanly when no sample has a mask") {
    CliWorld& w = world();
    RunConfig cfg = w.cfg;
    cfg.dataset.dir = "cli_world/data_nomasks";
    fs::create_directory(cfg.dataset.dir);
    for (const char* name : {"manifest.json", "labels.json", "concepts.json"})
        fs::copy_file(w.cfg.dataset.dir + "/" + name, cfg.dataset.dir + "/" + name);
    fs::create_directory(cfg.dataset.dir + "/images");
    for (const auto& entry : fs::directory_iterator(w.cfg.dataset.dir + "/images"))
        fs::copy_file(entry.path(), cfg.dataset.dir + "/images/" + entry.path().filename().string());
    cfg.output_dir = "cli_world/out_nomask";
    CHECK(cmd_evaluate(cfg) != 0);
}

TEST_CASE("category means average per type, then across types") {
    std::map<std::string, double> means =
        category_means({{"A", 0.2}, {"A", 0.4}, {"B", 0.6}});
    CHECK(means.at("A") == doctest::Approx(0.3));
    CHECK(means.at("B") == doctest::Approx(0.6));
    CHECK(macro_average(means) == doctest::Approx(0.45));
}

TEST_CASE("run config round trips through JSON") {
    RunConfig cfg = base_config();
    RunConfig back = RunConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.threshold_grid().size() == 100);
    CHECK(back.threshold_grid().front() == 1.0);
    CHECK(back.threshold_grid().back() == 100.0);
}
