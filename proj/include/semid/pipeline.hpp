#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semid/evaluation.hpp"
#include "semid/model.hpp"

namespace semid {

// Aggregated stage configuration. Loaded from a single JSON file; unknown
// keys are rejected so typos fail fast (ConfigInvalid).
struct PipelineConfig {
    uint64_t seed = 1;

    // data
    int64_t n_items = 1000;
    int dim = 8;
    int64_t n_clusters = 20;
    double cluster_spread = 0.18;
    double pop_cluster_corr = 0.8;
    int64_t n_users = 2000;
    double zipf_s = 1.2;
    int min_len = 6;
    int max_len = 14;

    // tokenizer
    int levels = 3;
    int codebook_size = 32;
    int kmeans_iters = 50;

    // rebalance
    double split_ratio = 0.10;
    int m_cap = 3;
    double lambda_scaled = 1.0;
    std::vector<int> split_levels;  // empty = all levels

    // model
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int max_context_items = 6;

    // train
    double gamma = 0.2;
    double learning_rate = 0.05;
    int epochs = 10;
    int batch_size = 32;
    double clip_norm = 1.0;
    int windows_per_user = 2;
    double noise_scale_rel = 0.01;
    bool finetune_from_scratch = false;

    // eval
    int top_k = 10;
    int beam_width = 30;
    double rerank_alpha = 0.1;
    double reweight_beta = 0.5;
    double pop_top_frac = 0.2;
    std::string partition = "token-groups";  // or "item-pop20"

    static PipelineConfig from_json_file(const std::string& path);
    static PipelineConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
    void validate() const;
};

enum class PipelineVariant { Baseline, Rebalanced, Reweight, Rerank };
std::string variant_name(PipelineVariant v);

// Stage entry points. Each writes its artifacts under `out` plus a manifest
// entry (config hash, input hashes, wall clock). Inputs are the artifacts of
// upstream stages; a missing one throws MissingArtifact naming the producing
// stage.
void stage_gen_data(const PipelineConfig& cfg, const std::string& out);
void stage_tokenize(const PipelineConfig& cfg, const std::string& out);
void stage_analyze(const PipelineConfig& cfg, const std::string& out);
void stage_rebalance(const PipelineConfig& cfg, const std::string& out);
void stage_train(const PipelineConfig& cfg, const std::string& out, PipelineVariant variant);
MetricsReport stage_evaluate(const PipelineConfig& cfg, const std::string& out,
                             PipelineVariant variant);
void stage_report(const PipelineConfig& cfg, const std::string& out);

// Full comparison: baseline vs rebalanced vs reweight vs rerank, one seed.
void run_all(const PipelineConfig& cfg, const std::string& out);

// Artifact layout under the output directory.
namespace paths {
std::string catalog(const std::string& out);
std::string interactions(const std::string& out);
std::string split(const std::string& out, const std::string& which);  // train|val|test
std::string frequencies(const std::string& out);
std::string codebook(const std::string& out, bool rebalanced);
std::string sids(const std::string& out, bool rebalanced);
std::string lineage(const std::string& out);
std::string model(const std::string& out, PipelineVariant v);
std::string losses(const std::string& out, PipelineVariant v);
std::string metrics(const std::string& out, PipelineVariant v);
std::string recommendations(const std::string& out, PipelineVariant v);
std::string analysis(const std::string& out);
std::string report_csv(const std::string& out);
std::string report_json(const std::string& out);
std::string manifest(const std::string& out);
}  // namespace paths

}  // namespace semid
