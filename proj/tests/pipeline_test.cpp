#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "semid/error.hpp"
#include "semid/pipeline.hpp"

using namespace semid;
namespace fs = std::filesystem;

namespace {

// Small enough to run the whole chain in seconds.
PipelineConfig tiny_config() {
    PipelineConfig cfg;
    cfg.seed = 5;
    cfg.n_items = 60;
    cfg.dim = 4;
    cfg.n_clusters = 6;
    cfg.n_users = 80;
    cfg.min_len = 5;
    cfg.max_len = 8;
    cfg.levels = 2;
    cfg.codebook_size = 8;
    cfg.kmeans_iters = 20;
    cfg.split_ratio = 0.15;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_context_items = 4;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.windows_per_user = 1;
    cfg.top_k = 5;
    cfg.beam_width = 20;
    cfg.partition = "item-pop20";
    return cfg;
}

std::string fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SEMID_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config text round trip preserves every field") {
    PipelineConfig cfg = tiny_config();
    cfg.split_levels = {0, 1};
    cfg.partition = "token-groups";
    const PipelineConfig back = PipelineConfig::from_json_text(cfg.to_json_text());
    CHECK(back.to_json_text() == cfg.to_json_text());
    CHECK(back.seed == 5);
    CHECK(back.split_levels == std::vector<int>{0, 1});
    CHECK(back.partition == "token-groups");

    // partial configs inherit defaults
    const PipelineConfig partial = PipelineConfig::from_json_text(R"({"n_items": 500})");
    CHECK(partial.n_items == 500);
    CHECK(partial.d_model == PipelineConfig{}.d_model);
}

TEST_CASE("malformed configs are rejected with specific complaints") {
    CHECK_THROWS_WITH_AS(PipelineConfig::from_json_text(R"({"n_itemz": 10})"),
                         doctest::Contains("unknown config key: n_itemz"), ConfigInvalid);
    CHECK_THROWS_WITH_AS(PipelineConfig::from_json_text(R"({"n_items": "lots"})"),
                         doctest::Contains("wrong type"), ConfigInvalid);
    CHECK_THROWS_WITH_AS(PipelineConfig::from_json_text("[1,2]"),
                         doctest::Contains("root must be a JSON object"), ConfigInvalid);
    CHECK_THROWS_WITH_AS(PipelineConfig::from_json_text("{nope"),
                         doctest::Contains("not valid JSON"), ConfigInvalid);
    CHECK_THROWS_WITH_AS(PipelineConfig::from_json_file("/tmp/definitely_absent.json"),
                         doctest::Contains("config file not found"), ConfigInvalid);
}

TEST_CASE("semantic validation catches out-of-range settings") {
    auto expect_invalid = [](auto&& tweak, const char* phrase) {
        PipelineConfig cfg = tiny_config();
        tweak(cfg);
        CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains(phrase), ConfigInvalid);
    };
    expect_invalid([](PipelineConfig& c) { c.n_items = 1; }, "n_items");
    expect_invalid([](PipelineConfig& c) { c.codebook_size = 100; }, "codebook_size");
    expect_invalid([](PipelineConfig& c) { c.min_len = 3; }, "min_len");
    expect_invalid([](PipelineConfig& c) { c.n_heads = 3; }, "n_heads must divide");
    expect_invalid([](PipelineConfig& c) { c.beam_width = 2; }, "beam_width");
    expect_invalid([](PipelineConfig& c) { c.split_levels = {7}; }, "split_levels");
    expect_invalid([](PipelineConfig& c) { c.partition = "by-vibes"; }, "partition");
    CHECK_NOTHROW(tiny_config().validate());
}

TEST_CASE("stages produce their artifacts and re-running them is byte-stable") {
    const PipelineConfig cfg = tiny_config();
    const std::string out = fresh_dir("semid_pipe_chain");

    stage_gen_data(cfg, out);
    for (const std::string& p :
         {paths::catalog(out), paths::interactions(out), paths::split(out, "train"),
          paths::split(out, "val"), paths::split(out, "test"), paths::frequencies(out)})
        CHECK(fs::exists(p));

    const std::string catalog_bytes = slurp(paths::catalog(out));
    const std::string train_bytes = slurp(paths::split(out, "train"));
    stage_gen_data(cfg, out);
    CHECK(slurp(paths::catalog(out)) == catalog_bytes);
    CHECK(slurp(paths::split(out, "train")) == train_bytes);

    stage_tokenize(cfg, out);
    CHECK(fs::exists(paths::codebook(out, false)));
    CHECK(fs::exists(paths::sids(out, false)));
    const std::string codebook_bytes = slurp(paths::codebook(out, false));
    stage_tokenize(cfg, out);
    CHECK(slurp(paths::codebook(out, false)) == codebook_bytes);

    stage_analyze(cfg, out);
    const std::string analysis = slurp(paths::analysis(out));
    CHECK(analysis.find("split_targets") != std::string::npos);

    stage_rebalance(cfg, out);
    CHECK(fs::exists(paths::codebook(out, true)));
    CHECK(fs::exists(paths::sids(out, true)));
    CHECK(fs::exists(paths::lineage(out)));

    stage_train(cfg, out, PipelineVariant::Baseline);
    stage_train(cfg, out, PipelineVariant::Rebalanced);
    stage_train(cfg, out, PipelineVariant::Reweight);
    CHECK(fs::exists(paths::model(out, PipelineVariant::Baseline)));
    CHECK(fs::exists(paths::losses(out, PipelineVariant::Rebalanced)));
    CHECK_THROWS_WITH_AS(stage_train(cfg, out, PipelineVariant::Rerank),
                         doctest::Contains("rerank reuses the baseline"), ConfigInvalid);

    for (PipelineVariant v : {PipelineVariant::Baseline, PipelineVariant::Rebalanced,
                              PipelineVariant::Reweight, PipelineVariant::Rerank}) {
        const MetricsReport report = stage_evaluate(cfg, out, v);
        CHECK(fs::exists(paths::metrics(out, v)));
        CHECK(fs::exists(paths::recommendations(out, v)));
        CHECK(report.hr.count(cfg.top_k) == 1);
        CHECK(report.hr.at(cfg.top_k) >= 0.0);
        CHECK(report.hr.at(cfg.top_k) <= 1.0);
        CHECK(report.dgu.count(cfg.top_k) == 1);
    }

    stage_report(cfg, out);
    const std::string csv = slurp(paths::report_csv(out));
    CHECK(csv.rfind("pipeline,HR@5,NDCG@5,DGU@5,MGU@5,time_seconds\n", 0) == 0);
    for (const char* name : {"baseline", "rebalanced", "reweight", "rerank"})
        CHECK(csv.find(std::string("\n") + name + ",") != std::string::npos);

    // every artifact is registered in the manifest with its producing stage
    const std::string manifest = slurp(paths::manifest(out));
    CHECK(manifest.find("\"catalog.jsonl\"") != std::string::npos);
    CHECK(manifest.find("\"report.csv\"") != std::string::npos);
    CHECK(manifest.find("\"config_hash\"") != std::string::npos);

    fs::remove_all(out);
}

TEST_CASE("a missing upstream artifact names the stage that makes it") {
    const PipelineConfig cfg = tiny_config();
    const std::string out = fresh_dir("semid_pipe_missing");

    CHECK_THROWS_WITH_AS(stage_tokenize(cfg, out), doctest::Contains("stage 'gen-data'"),
                         MissingArtifact);
    CHECK_THROWS_WITH_AS(stage_analyze(cfg, out), doctest::Contains("stage 'tokenize'"),
                         MissingArtifact);
    CHECK_THROWS_WITH_AS(stage_evaluate(cfg, out, PipelineVariant::Baseline),
                         doctest::Contains("stage 'train'"), MissingArtifact);

    stage_gen_data(cfg, out);
    stage_tokenize(cfg, out);
    // rebalanced training needs the rebalance outputs
    CHECK_THROWS_WITH_AS(stage_train(cfg, out, PipelineVariant::Rebalanced),
                         doctest::Contains("stage 'rebalance'"), MissingArtifact);

    fs::remove_all(out);
}

TEST_CASE("the CLI maps failures onto its documented exit codes") {
    const std::string out = fresh_dir("semid_pipe_cli");

    // config typo -> 2
    const std::string bad_cfg = out + "/bad.json";
    std::ofstream(bad_cfg) << R"({"n_itemz": 10})";
    CHECK(run_cli("gen-data --config " + bad_cfg + " --out " + out) == 2);

    // missing upstream artifact -> 3
    CHECK(run_cli("tokenize --out " + out) == 3);

    // unknown pipeline name -> 2; unknown subcommand -> 2
    CHECK(run_cli("train --pipeline bogus --out " + out) == 2);
    CHECK(run_cli("frobnicate") == 2);

    // a clean run -> 0
    const std::string good_cfg = out + "/good.json";
    std::ofstream(good_cfg) << tiny_config().to_json_text();
    CHECK(run_cli("gen-data --config " + good_cfg + " --out " + out) == 0);
    CHECK(run_cli("tokenize --config " + good_cfg + " --out " + out) == 0);
    CHECK(fs::exists(paths::codebook(out, false)));

    // --seed overrides the config seed: different catalog bytes
    const std::string before = slurp(paths::catalog(out));
    CHECK(run_cli("gen-data --config " + good_cfg + " --seed 99 --out " + out) == 0);
    CHECK(slurp(paths::catalog(out)) != before);

    fs::remove_all(out);
}
