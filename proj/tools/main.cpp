#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "semid/error.hpp"
#include "semid/log.hpp"
#include "semid/pipeline.hpp"

namespace {

semid::PipelineVariant parse_variant(const std::string& name) {
    if (name == "baseline") return semid::PipelineVariant::Baseline;
    if (name == "rebalanced") return semid::PipelineVariant::Rebalanced;
    if (name == "reweight") return semid::PipelineVariant::Reweight;
    if (name == "rerank") return semid::PipelineVariant::Rerank;
    throw semid::ConfigInvalid("unknown pipeline '" + name +
                               "' (expected baseline|rebalanced|reweight|rerank)");
}

void print_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semid: semantic-id tokenization, codebook rebalancing, and "
                 "popularity-bias benchmarking for generative recommendation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out = "out";
    long long seed = -1;
    std::string pipeline = "baseline";

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (built-in defaults if omitted)");
        sub->add_option("--out", out, "artifact directory")->capture_default_str();
        sub->add_option("--seed", seed, "override the config seed");
    };
    auto add_pipeline = [&](CLI::App* sub) {
        sub->add_option("--pipeline", pipeline, "baseline|rebalanced|reweight|rerank")
            ->capture_default_str();
    };

    CLI::App* c_gen = app.add_subcommand("gen-data", "generate the synthetic catalog and log");
    CLI::App* c_tok = app.add_subcommand("tokenize", "fit RQ codebooks and assign semantic ids");
    CLI::App* c_ana = app.add_subcommand("analyze", "token popularity, groups, and split plan");
    CLI::App* c_reb = app.add_subcommand("rebalance", "split over-popular tokens");
    CLI::App* c_trn = app.add_subcommand("train", "train a next-token recommender");
    CLI::App* c_evl = app.add_subcommand("evaluate", "accuracy and popularity-bias metrics");
    CLI::App* c_rep = app.add_subcommand("report", "comparison table across pipelines");
    CLI::App* c_all = app.add_subcommand("run-all", "full benchmark, all pipelines");
    for (CLI::App* sub : {c_gen, c_tok, c_ana, c_reb, c_trn, c_evl, c_rep, c_all}) add_common(sub);
    add_pipeline(c_trn);
    add_pipeline(c_evl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        semid::PipelineConfig cfg = config_path.empty()
                                        ? semid::PipelineConfig{}
                                        : semid::PipelineConfig::from_json_file(config_path);
        if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
        cfg.validate();

        if (app.got_subcommand(c_gen)) semid::stage_gen_data(cfg, out);
        else if (app.got_subcommand(c_tok)) semid::stage_tokenize(cfg, out);
        else if (app.got_subcommand(c_ana)) semid::stage_analyze(cfg, out);
        else if (app.got_subcommand(c_reb)) semid::stage_rebalance(cfg, out);
        else if (app.got_subcommand(c_trn)) semid::stage_train(cfg, out, parse_variant(pipeline));
        else if (app.got_subcommand(c_evl)) semid::stage_evaluate(cfg, out, parse_variant(pipeline));
        else if (app.got_subcommand(c_rep)) {
            semid::stage_report(cfg, out);
            print_file(semid::paths::report_csv(out));
        } else if (app.got_subcommand(c_all)) {
            semid::run_all(cfg, out);
            print_file(semid::paths::report_csv(out));
        }
        return 0;
    } catch (const semid::ConfigInvalid& e) {
        semid::log_error(e.what());
        return 2;
    } catch (const semid::MissingArtifact& e) {
        semid::log_error(e.what());
        return 3;
    } catch (const semid::NumericDivergence& e) {
        semid::log_error(e.what());
        return 4;
    } catch (const std::exception& e) {
        semid::log_error(e.what());
        return 1;
    }
}
