#include "semid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "semid/decode.hpp"
#include "semid/error.hpp"
#include "semid/log.hpp"
#include "semid/popularity.hpp"
#include "semid/rebalancer.hpp"
#include "semid/tokenizer.hpp"

namespace semid {

using nlohmann::json;
namespace fs = std::filesystem;

namespace paths {
std::string catalog(const std::string& out) { return out + "/catalog.jsonl"; }
std::string interactions(const std::string& out) { return out + "/interactions.jsonl"; }
std::string split(const std::string& out, const std::string& which) {
    return out + "/" + which + ".jsonl";
}
std::string frequencies(const std::string& out) { return out + "/frequencies.json"; }
std::string codebook(const std::string& out, bool rebalanced) {
    return out + (rebalanced ? "/codebook_rebalanced.json" : "/codebook.json");
}
std::string sids(const std::string& out, bool rebalanced) {
    return out + (rebalanced ? "/sids_rebalanced.jsonl" : "/sids.jsonl");
}
std::string lineage(const std::string& out) { return out + "/lineage.json"; }
std::string model(const std::string& out, PipelineVariant v) {
    if (v == PipelineVariant::Rerank) v = PipelineVariant::Baseline;  // rerank reuses it
    return out + "/model_" + variant_name(v) + ".bin";
}
std::string losses(const std::string& out, PipelineVariant v) {
    if (v == PipelineVariant::Rerank) v = PipelineVariant::Baseline;
    return out + "/losses_" + variant_name(v) + ".json";
}
std::string metrics(const std::string& out, PipelineVariant v) {
    return out + "/metrics_" + variant_name(v) + ".json";
}
std::string recommendations(const std::string& out, PipelineVariant v) {
    return out + "/recommendations_" + variant_name(v) + ".jsonl";
}
std::string analysis(const std::string& out) { return out + "/analysis.json"; }
std::string report_csv(const std::string& out) { return out + "/report.csv"; }
std::string report_json(const std::string& out) { return out + "/report.json"; }
std::string manifest(const std::string& out) { return out + "/manifest.json"; }
}  // namespace paths

std::string variant_name(PipelineVariant v) {
    switch (v) {
        case PipelineVariant::Baseline: return "baseline";
        case PipelineVariant::Rebalanced: return "rebalanced";
        case PipelineVariant::Reweight: return "reweight";
        case PipelineVariant::Rerank: return "rerank";
    }
    throw InvalidArgument("unknown pipeline variant");
}

namespace {

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string hash_hex(const std::string& bytes) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

void require_artifact(const std::string& path, const std::string& producing_stage) {
    if (!fs::exists(path)) throw MissingArtifact(path, producing_stage);
}

struct StageClock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

// Appends manifest entries: every output file gets the stage name, config
// hash, input-file hashes, and wall-clock.
void manifest_record(const std::string& out, const std::string& stage, const PipelineConfig& cfg,
                     const std::vector<std::string>& inputs,
                     const std::vector<std::string>& outputs, double wall) {
    json doc = json::object();
    const std::string mpath = paths::manifest(out);
    if (fs::exists(mpath)) {
        try {
            doc = json::parse(read_file(mpath));
        } catch (const json::parse_error&) {
            doc = json::object();
        }
    }
    json input_hashes = json::object();
    for (const std::string& in : inputs)
        input_hashes[fs::path(in).filename().string()] = hash_hex(read_file(in));
    const std::string config_hash = hash_hex(cfg.to_json_text());
    for (const std::string& o : outputs) {
        json entry;
        entry["stage"] = stage;
        entry["config_hash"] = config_hash;
        entry["inputs"] = input_hashes;
        entry["wall_seconds"] = wall;
        doc[fs::path(o).filename().string()] = std::move(entry);
    }
    std::ofstream f(mpath, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + mpath);
    f << doc.dump(2) << "\n";
}

void save_frequencies(const FrequencyTable& freq, const std::string& path) {
    json doc;
    doc["freq"] = freq.freq;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << doc.dump() << "\n";
}

FrequencyTable load_frequencies(const std::string& path) {
    FrequencyTable t;
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path, 1, e.what());
    }
    t.freq = doc.at("freq").get<std::vector<int64_t>>();
    return t;
}

void save_losses(const std::vector<double>& losses, double wall, const std::string& path) {
    json doc;
    doc["epoch_losses"] = losses;
    doc["wall_seconds"] = wall;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
}

double load_train_wall(const std::string& path) {
    try {
        return json::parse(read_file(path)).at("wall_seconds").get<double>();
    } catch (...) {
        return 0.0;
    }
}

// BOS + the flat tokens of up to max_context_items most recent history items.
std::vector<int> build_context(const std::vector<SemanticId>& history, const Codebook& codebook,
                               int max_context_items) {
    const size_t keep = std::min<size_t>(history.size(), static_cast<size_t>(max_context_items));
    std::vector<SemanticId> tail(history.end() - keep, history.end());
    std::vector<int> ctx{Codebook::kBosId};
    const std::vector<int> flat = flatten(tail, codebook);
    ctx.insert(ctx.end(), flat.begin(), flat.end());
    return ctx;
}

std::vector<TrainExample> build_train_examples(const InteractionLog& train,
                                               const std::vector<SemanticId>& sids,
                                               const Codebook& codebook, int max_context_items,
                                               int windows_per_user) {
    std::vector<TrainExample> examples;
    for (const auto& events : train.by_user()) {
        const int n = static_cast<int>(events.size());
        const int first = std::max(1, n - windows_per_user);
        for (int p = first; p < n; ++p) {
            TrainExample ex;
            std::vector<SemanticId> history;
            for (int q = std::max(0, p - max_context_items); q < p; ++q)
                history.push_back(sids[events[q].item_id]);
            ex.context = build_context(history, codebook, max_context_items);
            ex.targets = flatten({sids[events[p].item_id]}, codebook);
            ex.target_item = events[p].item_id;
            examples.push_back(std::move(ex));
        }
    }
    return examples;
}

int model_max_seq(const PipelineConfig& cfg) {
    return 1 + (cfg.max_context_items + 1) * (cfg.levels + 1);
}

ItemPartition evaluation_partition(const PipelineConfig& cfg, const std::string& out,
                                   const FrequencyTable& freq) {
    if (cfg.partition == "item-pop20")
        return partition_by_item_popularity(freq, cfg.pop_top_frac);
    // Token groups are computed on the pre-rebalance tokenization so every
    // pipeline is measured against the same item partition.
    require_artifact(paths::codebook(out, false), "tokenize");
    require_artifact(paths::sids(out, false), "tokenize");
    const Codebook codebook = load_codebook_json(paths::codebook(out, false));
    const std::vector<SemanticId> sids = load_sids_jsonl(paths::sids(out, false));
    const TokenStats stats = group_tokens(token_popularity(sids, freq, codebook), codebook);
    return partition_by_token_groups(sids, stats);
}

SiblingGroups lineage_groups(const std::vector<LineageEntry>& lineage) {
    SiblingGroups groups;
    for (const LineageEntry& e : lineage) groups.groups.push_back(e.new_flats);
    return groups;
}

}  // namespace

PipelineConfig PipelineConfig::from_json_file(const std::string& path) {
    if (!fs::exists(path)) throw ConfigInvalid("config file not found: " + path);
    return from_json_text(read_file(path));
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigInvalid(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigInvalid("config root must be a JSON object");
    PipelineConfig cfg;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "seed") cfg.seed = value.get<uint64_t>();
            else if (key == "n_items") cfg.n_items = value.get<int64_t>();
            else if (key == "dim") cfg.dim = value.get<int>();
            else if (key == "n_clusters") cfg.n_clusters = value.get<int64_t>();
            else if (key == "cluster_spread") cfg.cluster_spread = value.get<double>();
            else if (key == "pop_cluster_corr") cfg.pop_cluster_corr = value.get<double>();
            else if (key == "n_users") cfg.n_users = value.get<int64_t>();
            else if (key == "zipf_s") cfg.zipf_s = value.get<double>();
            else if (key == "min_len") cfg.min_len = value.get<int>();
            else if (key == "max_len") cfg.max_len = value.get<int>();
            else if (key == "levels") cfg.levels = value.get<int>();
            else if (key == "codebook_size") cfg.codebook_size = value.get<int>();
            else if (key == "kmeans_iters") cfg.kmeans_iters = value.get<int>();
            else if (key == "split_ratio") cfg.split_ratio = value.get<double>();
            else if (key == "m_cap") cfg.m_cap = value.get<int>();
            else if (key == "lambda_scaled") cfg.lambda_scaled = value.get<double>();
            else if (key == "split_levels") cfg.split_levels = value.get<std::vector<int>>();
            else if (key == "d_model") cfg.d_model = value.get<int>();
            else if (key == "n_layers") cfg.n_layers = value.get<int>();
            else if (key == "n_heads") cfg.n_heads = value.get<int>();
            else if (key == "max_context_items") cfg.max_context_items = value.get<int>();
            else if (key == "gamma") cfg.gamma = value.get<double>();
            else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
            else if (key == "epochs") cfg.epochs = value.get<int>();
            else if (key == "batch_size") cfg.batch_size = value.get<int>();
            else if (key == "clip_norm") cfg.clip_norm = value.get<double>();
            else if (key == "windows_per_user") cfg.windows_per_user = value.get<int>();
            else if (key == "noise_scale_rel") cfg.noise_scale_rel = value.get<double>();
            else if (key == "finetune_from_scratch") cfg.finetune_from_scratch = value.get<bool>();
            else if (key == "top_k") cfg.top_k = value.get<int>();
            else if (key == "beam_width") cfg.beam_width = value.get<int>();
            else if (key == "rerank_alpha") cfg.rerank_alpha = value.get<double>();
            else if (key == "reweight_beta") cfg.reweight_beta = value.get<double>();
            else if (key == "pop_top_frac") cfg.pop_top_frac = value.get<double>();
            else if (key == "partition") cfg.partition = value.get<std::string>();
            else throw ConfigInvalid("unknown config key: " + key);
        }
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("config value has the wrong type: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string PipelineConfig::to_json_text() const {
    json doc;
    doc["seed"] = seed;
    doc["n_items"] = n_items;
    doc["dim"] = dim;
    doc["n_clusters"] = n_clusters;
    doc["cluster_spread"] = cluster_spread;
    doc["pop_cluster_corr"] = pop_cluster_corr;
    doc["n_users"] = n_users;
    doc["zipf_s"] = zipf_s;
    doc["min_len"] = min_len;
    doc["max_len"] = max_len;
    doc["levels"] = levels;
    doc["codebook_size"] = codebook_size;
    doc["kmeans_iters"] = kmeans_iters;
    doc["split_ratio"] = split_ratio;
    doc["m_cap"] = m_cap;
    doc["lambda_scaled"] = lambda_scaled;
    doc["split_levels"] = split_levels;
    doc["d_model"] = d_model;
    doc["n_layers"] = n_layers;
    doc["n_heads"] = n_heads;
    doc["max_context_items"] = max_context_items;
    doc["gamma"] = gamma;
    doc["learning_rate"] = learning_rate;
    doc["epochs"] = epochs;
    doc["batch_size"] = batch_size;
    doc["clip_norm"] = clip_norm;
    doc["windows_per_user"] = windows_per_user;
    doc["noise_scale_rel"] = noise_scale_rel;
    doc["finetune_from_scratch"] = finetune_from_scratch;
    doc["top_k"] = top_k;
    doc["beam_width"] = beam_width;
    doc["rerank_alpha"] = rerank_alpha;
    doc["reweight_beta"] = reweight_beta;
    doc["pop_top_frac"] = pop_top_frac;
    doc["partition"] = partition;
    return doc.dump(2) + "\n";
}

void PipelineConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigInvalid(msg); };
    if (n_items < 2) fail("n_items must be >= 2");
    if (dim < 1) fail("dim must be >= 1");
    if (n_clusters < 1 || n_clusters > n_items) fail("n_clusters must lie in [1, n_items]");
    if (cluster_spread < 0) fail("cluster_spread must be >= 0");
    if (pop_cluster_corr < 0 || pop_cluster_corr > 1) fail("pop_cluster_corr must lie in [0, 1]");
    if (n_users < 1) fail("n_users must be >= 1");
    if (zipf_s <= 0) fail("zipf_s must be > 0");
    if (min_len < 5) fail("min_len must be >= 5 (the chronological split needs 5 events)");
    if (max_len < min_len) fail("max_len must be >= min_len");
    if (levels < 2) fail("levels must be >= 2");
    if (codebook_size < 2) fail("codebook_size must be >= 2");
    if (codebook_size > n_items) fail("codebook_size must be <= n_items");
    if (kmeans_iters < 1) fail("kmeans_iters must be >= 1");
    if (split_ratio < 0 || split_ratio > 1) fail("split_ratio must lie in [0, 1]");
    if (m_cap < 2) fail("m_cap must be >= 2");
    if (lambda_scaled < 0) fail("lambda_scaled must be >= 0");
    for (int l : split_levels)
        if (l < 0 || l >= levels) fail("split_levels entries must lie in [0, levels)");
    if (d_model < 1) fail("d_model must be >= 1");
    if (n_layers < 1) fail("n_layers must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0) fail("n_heads must divide d_model");
    if (max_context_items < 1) fail("max_context_items must be >= 1");
    if (gamma < 0) fail("gamma must be >= 0");
    if (learning_rate <= 0) fail("learning_rate must be > 0");
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (clip_norm < 0) fail("clip_norm must be >= 0");
    if (windows_per_user < 1) fail("windows_per_user must be >= 1");
    if (top_k < 1) fail("top_k must be >= 1");
    if (beam_width < top_k) fail("beam_width must be >= top_k");
    if (rerank_alpha < 0) fail("rerank_alpha must be >= 0");
    if (reweight_beta < 0) fail("reweight_beta must be >= 0");
    if (pop_top_frac <= 0 || pop_top_frac >= 1) fail("pop_top_frac must lie in (0, 1)");
    if (partition != "item-pop20" && partition != "token-groups")
        fail("partition must be 'item-pop20' or 'token-groups'");
}

void stage_gen_data(const PipelineConfig& cfg, const std::string& out) {
    StageClock clock;
    fs::create_directories(out);
    const ItemCatalog catalog =
        generate_catalog(cfg.n_items, cfg.dim, cfg.n_clusters, cfg.cluster_spread, cfg.seed,
                         cfg.pop_cluster_corr);
    const InteractionLog log =
        generate_interactions(catalog, cfg.n_users, cfg.zipf_s, cfg.min_len, cfg.max_len,
                              cfg.seed + 1);
    const DatasetSplits splits = chronological_split(log);
    const FrequencyTable freq = item_frequency(splits.train, cfg.n_items);
    save_catalog_jsonl(catalog, paths::catalog(out));
    save_log_jsonl(log, paths::interactions(out));
    save_log_jsonl(splits.train, paths::split(out, "train"));
    save_log_jsonl(splits.val, paths::split(out, "val"));
    save_log_jsonl(splits.test, paths::split(out, "test"));
    save_frequencies(freq, paths::frequencies(out));
    manifest_record(out, "gen-data", cfg, {},
                    {paths::catalog(out), paths::interactions(out), paths::split(out, "train"),
                     paths::split(out, "val"), paths::split(out, "test"), paths::frequencies(out)},
                    clock.seconds());
    log_info("gen-data: " + std::to_string(catalog.items.size()) + " items, " +
             std::to_string(log.events.size()) + " events");
}

void stage_tokenize(const PipelineConfig& cfg, const std::string& out) {
    StageClock clock;
    require_artifact(paths::catalog(out), "gen-data");
    const ItemCatalog catalog = load_catalog_jsonl(paths::catalog(out));
    const RqFitResult fit =
        rq_fit(catalog, cfg.levels, cfg.codebook_size, cfg.kmeans_iters, cfg.seed);
    save_codebook_json(fit.codebook, paths::codebook(out, false));
    save_sids_jsonl(fit.sids, paths::sids(out, false));
    manifest_record(out, "tokenize", cfg, {paths::catalog(out)},
                    {paths::codebook(out, false), paths::sids(out, false)}, clock.seconds());
    log_info("tokenize: vocab " + std::to_string(fit.codebook.vocab_size) + ", " +
             std::to_string(fit.codebook.n_suffix) + " suffix slots");
}

void stage_analyze(const PipelineConfig& cfg, const std::string& out) {
    StageClock clock;
    require_artifact(paths::codebook(out, false), "tokenize");
    require_artifact(paths::sids(out, false), "tokenize");
    require_artifact(paths::frequencies(out), "gen-data");
    const Codebook codebook = load_codebook_json(paths::codebook(out, false));
    const std::vector<SemanticId> sids = load_sids_jsonl(paths::sids(out, false));
    const FrequencyTable freq = load_frequencies(paths::frequencies(out));
    const auto pop = token_popularity(sids, freq, codebook);
    const TokenStats stats = group_tokens(pop, codebook);
    const ChildMap child_map = build_child_map(sids, codebook);
    const SplitPlan plan = select_split_targets(stats, child_map, sids, codebook, cfg.split_ratio,
                                                cfg.m_cap, cfg.lambda_scaled, cfg.split_levels);
    json doc;
    doc["token_popularity"] = pop;
    json groups = json::array();
    for (const auto& level : stats.group) {
        json row = json::array();
        for (TokenGroup g : level)
            row.push_back(g == TokenGroup::Pop ? "pop" : (g == TokenGroup::Unp ? "unp" : "neu"));
        groups.push_back(std::move(row));
    }
    doc["token_group"] = std::move(groups);
    json targets = json::array();
    for (const SplitTarget& t : plan.targets)
        targets.push_back({{"level", t.level}, {"token", t.token}, {"m", t.m_new}});
    doc["split_targets"] = std::move(targets);
    doc["split_ratio"] = plan.ratio;
    doc["lambda_scaled"] = plan.lambda_scaled;
    std::ofstream f(paths::analysis(out), std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + paths::analysis(out));
    f << doc.dump(2) << "\n";
    manifest_record(out, "analyze", cfg,
                    {paths::codebook(out, false), paths::sids(out, false), paths::frequencies(out)},
                    {paths::analysis(out)}, clock.seconds());
    log_info("analyze: " + std::to_string(plan.targets.size()) + " split targets");
}

void stage_rebalance(const PipelineConfig& cfg, const std::string& out) {
    StageClock clock;
    require_artifact(paths::catalog(out), "gen-data");
    require_artifact(paths::codebook(out, false), "tokenize");
    require_artifact(paths::sids(out, false), "tokenize");
    require_artifact(paths::frequencies(out), "gen-data");
    const ItemCatalog catalog = load_catalog_jsonl(paths::catalog(out));
    const Codebook codebook = load_codebook_json(paths::codebook(out, false));
    const std::vector<SemanticId> sids = load_sids_jsonl(paths::sids(out, false));
    const FrequencyTable freq = load_frequencies(paths::frequencies(out));

    const ResidualTrace trace = residual_trace_for(catalog, codebook, sids);
    const auto pop = token_popularity(sids, freq, codebook);
    const TokenStats stats = group_tokens(pop, codebook);
    const ChildMap child_map = build_child_map(sids, codebook);
    const ChildStatsTable cstats = child_stats(child_map, trace, freq, sids, codebook);
    const SplitPlan plan = select_split_targets(stats, child_map, sids, codebook, cfg.split_ratio,
                                                cfg.m_cap, cfg.lambda_scaled, cfg.split_levels);
    std::vector<SplitInstance> instances;
    std::vector<SplitResult> results;
    for (const SplitTarget& target : plan.targets) {
        instances.push_back(
            build_split_instance(target, cstats, child_map, sids, trace, freq, codebook));
        results.push_back(
            regularized_kmeans_split(instances.back(), target.m_new, plan.lambda_scaled, cfg.seed));
    }
    const RebalanceOutcome outcome =
        apply_split(codebook, sids, plan, plan.targets, instances, results);
    save_codebook_json(outcome.codebook, paths::codebook(out, true));
    save_sids_jsonl(outcome.sids, paths::sids(out, true));
    save_lineage_json(outcome.lineage, paths::lineage(out));
    manifest_record(out, "rebalance", cfg,
                    {paths::catalog(out), paths::codebook(out, false), paths::sids(out, false),
                     paths::frequencies(out)},
                    {paths::codebook(out, true), paths::sids(out, true), paths::lineage(out)},
                    clock.seconds());
    log_info("rebalance: " + std::to_string(plan.targets.size()) + " tokens split, vocab " +
             std::to_string(codebook.vocab_size) + " -> " +
             std::to_string(outcome.codebook.vocab_size));
}

void stage_train(const PipelineConfig& cfg, const std::string& out, PipelineVariant variant) {
    StageClock clock;
    if (variant == PipelineVariant::Rerank)
        throw ConfigInvalid("rerank reuses the baseline checkpoint; train baseline instead");
    const bool rebalanced = variant == PipelineVariant::Rebalanced;
    require_artifact(paths::split(out, "train"), "gen-data");
    require_artifact(paths::codebook(out, rebalanced), rebalanced ? "rebalance" : "tokenize");
    require_artifact(paths::sids(out, rebalanced), rebalanced ? "rebalance" : "tokenize");
    const Codebook codebook = load_codebook_json(paths::codebook(out, rebalanced));
    const std::vector<SemanticId> sids = load_sids_jsonl(paths::sids(out, rebalanced));
    InteractionLog train_log = load_log_jsonl(paths::split(out, "train"));

    const std::vector<TrainExample> examples = build_train_examples(
        train_log, sids, codebook, cfg.max_context_items, cfg.windows_per_user);

    ModelParams model;
    SiblingGroups groups;
    if (rebalanced) {
        require_artifact(paths::lineage(out), "rebalance");
        const std::vector<LineageEntry> lineage = load_lineage_json(paths::lineage(out));
        groups = lineage_groups(lineage);
        if (cfg.finetune_from_scratch) {
            model = init_model(codebook.vocab_size, cfg.d_model, cfg.n_layers, cfg.n_heads,
                               cfg.seed, model_max_seq(cfg));
            model.retired = codebook.retired_mask();
        } else {
            require_artifact(paths::model(out, PipelineVariant::Baseline), "train");
            model = load_model(paths::model(out, PipelineVariant::Baseline));
            std::vector<std::pair<int, int>> new_to_parent;
            for (const LineageEntry& e : lineage)
                for (int flat : e.new_flats) new_to_parent.emplace_back(flat, e.old_flat);
            std::sort(new_to_parent.begin(), new_to_parent.end());
            const double noise =
                cfg.noise_scale_rel >= 0 ? cfg.noise_scale_rel * embed_rms(model) : -1.0;
            extend_vocab(model, new_to_parent, noise, cfg.seed + 101);
            model.retired = codebook.retired_mask();
        }
    } else {
        model = init_model(codebook.vocab_size, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.seed,
                           model_max_seq(cfg));
        model.retired = codebook.retired_mask();
    }

    TrainConfig tc;
    tc.gamma = cfg.gamma;
    tc.learning_rate = cfg.learning_rate;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.clip_norm = cfg.clip_norm;
    tc.seed = cfg.seed;
    tc.reweight_beta = cfg.reweight_beta;

    FrequencyTable freq;
    const FrequencyTable* reweight = nullptr;
    if (variant == PipelineVariant::Reweight) {
        require_artifact(paths::frequencies(out), "gen-data");
        freq = load_frequencies(paths::frequencies(out));
        reweight = &freq;
    }
    const std::vector<double> losses = train(model, examples, tc, groups, reweight);
    save_model(model, paths::model(out, variant));
    save_losses(losses, clock.seconds(), paths::losses(out, variant));
    manifest_record(out, "train", cfg,
                    {paths::split(out, "train"), paths::codebook(out, rebalanced),
                     paths::sids(out, rebalanced)},
                    {paths::model(out, variant), paths::losses(out, variant)}, clock.seconds());
    log_info("train(" + variant_name(variant) + "): " + std::to_string(examples.size()) +
             " examples, final loss " + std::to_string(losses.back()));
}

MetricsReport stage_evaluate(const PipelineConfig& cfg, const std::string& out,
                             PipelineVariant variant) {
    StageClock clock;
    const bool rebalanced = variant == PipelineVariant::Rebalanced;
    require_artifact(paths::model(out, variant), "train");
    require_artifact(paths::codebook(out, rebalanced), rebalanced ? "rebalance" : "tokenize");
    require_artifact(paths::sids(out, rebalanced), rebalanced ? "rebalance" : "tokenize");
    require_artifact(paths::split(out, "train"), "gen-data");
    require_artifact(paths::split(out, "val"), "gen-data");
    require_artifact(paths::split(out, "test"), "gen-data");
    require_artifact(paths::frequencies(out), "gen-data");

    const ModelParams model = load_model(paths::model(out, variant));
    const Codebook codebook = load_codebook_json(paths::codebook(out, rebalanced));
    const std::vector<SemanticId> sids = load_sids_jsonl(paths::sids(out, rebalanced));
    const InteractionLog train_log = load_log_jsonl(paths::split(out, "train"));
    const InteractionLog val_log = load_log_jsonl(paths::split(out, "val"));
    const InteractionLog test_log = load_log_jsonl(paths::split(out, "test"));
    const FrequencyTable freq = load_frequencies(paths::frequencies(out));
    if (model.vocab_size != codebook.vocab_size)
        throw InvalidArgument("checkpoint vocabulary does not match the codebook");

    const SidTrie trie = build_sid_trie(sids, codebook);
    // Train precedes val chronologically, so appending keeps history ordered.
    std::map<int64_t, std::vector<int64_t>> hist_items;
    for (const auto& events : train_log.by_user())
        for (const Event& e : events) hist_items[e.user_id].push_back(e.item_id);
    for (const auto& events : val_log.by_user())
        for (const Event& e : events) hist_items[e.user_id].push_back(e.item_id);

    std::vector<std::vector<int64_t>> rec_items;
    std::vector<std::vector<Recommendation>> rec_full;
    std::vector<int64_t> targets;
    std::vector<int64_t> users;
    for (const auto& events : test_log.by_user()) {
        const int64_t user = events.front().user_id;
        std::vector<SemanticId> history;
        if (auto it = hist_items.find(user); it != hist_items.end())
            for (int64_t item : it->second) history.push_back(sids[item]);
        if (history.empty()) continue;
        const std::vector<int> ctx = build_context(history, codebook, cfg.max_context_items);
        std::vector<Recommendation> recs;
        if (variant == PipelineVariant::Rerank) {
            const std::vector<Recommendation> cands =
                recommend_topk(model, ctx, trie, cfg.beam_width, cfg.beam_width);
            recs = rerank(cands, freq, cfg.rerank_alpha, cfg.top_k);
        } else {
            recs = recommend_topk(model, ctx, trie, cfg.top_k, cfg.beam_width);
        }
        std::vector<int64_t> items;
        for (const Recommendation& r : recs) items.push_back(r.item_id);
        rec_items.push_back(std::move(items));
        rec_full.push_back(std::move(recs));
        targets.push_back(events.front().item_id);
        users.push_back(user);
    }
    if (targets.empty()) throw InvalidArgument("empty-test-set");

    const ItemPartition partition = evaluation_partition(cfg, out, freq);
    MetricsReport report;
    std::vector<int> ks{1, 5, cfg.top_k};
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    for (int k : ks) {
        if (k < 1 || k > cfg.top_k) continue;
        report.hr[k] = hr_at_k(rec_items, targets, k);
        report.ndcg[k] = ndcg_at_k(rec_items, targets, k);
    }
    const BiasMetrics bias = bias_metrics(rec_items, freq, partition, cfg.top_k);
    for (int g = 0; g < partition.num_groups(); ++g) report.gu[partition.names[g]] = bias.gu[g];
    report.dgu[cfg.top_k] = bias.dgu;
    report.mgu[cfg.top_k] = bias.mgu;
    report.exposure_by_decile = exposure_by_decile(rec_items, freq);
    report.partition_name = cfg.partition;
    report.wall_seconds = clock.seconds() + load_train_wall(paths::losses(out, variant));

    std::ofstream rf(paths::recommendations(out, variant), std::ios::binary);
    if (!rf) throw IoError("cannot open for writing: " + paths::recommendations(out, variant));
    for (size_t u = 0; u < users.size(); ++u) {
        json rec;
        rec["user_id"] = users[u];
        rec["target"] = targets[u];
        json items = json::array(), scores = json::array();
        for (const Recommendation& r : rec_full[u]) {
            items.push_back(r.item_id);
            scores.push_back(r.score);
        }
        rec["items"] = std::move(items);
        rec["scores"] = std::move(scores);
        rf << rec.dump() << "\n";
    }
    rf.close();

    save_metrics_json(report, paths::metrics(out, variant));
    manifest_record(out, "evaluate", cfg,
                    {paths::model(out, variant), paths::codebook(out, rebalanced),
                     paths::sids(out, rebalanced), paths::split(out, "test")},
                    {paths::metrics(out, variant), paths::recommendations(out, variant)},
                    clock.seconds());
    log_info("evaluate(" + variant_name(variant) + "): HR@" + std::to_string(cfg.top_k) + " " +
             std::to_string(report.hr[cfg.top_k]) + ", DGU@" + std::to_string(cfg.top_k) + " " +
             std::to_string(report.dgu[cfg.top_k]));
    return report;
}

void stage_report(const PipelineConfig& cfg, const std::string& out) {
    StageClock clock;
    std::vector<NamedReport> reports;
    for (PipelineVariant v : {PipelineVariant::Baseline, PipelineVariant::Rebalanced,
                              PipelineVariant::Reweight, PipelineVariant::Rerank}) {
        require_artifact(paths::metrics(out, v), "evaluate");
        reports.push_back(NamedReport{variant_name(v), load_metrics_json(paths::metrics(out, v))});
    }
    const std::string csv = comparison_csv(reports, cfg.top_k);
    const std::string js = comparison_json(reports, cfg.top_k);
    std::ofstream cf(paths::report_csv(out), std::ios::binary);
    if (!cf) throw IoError("cannot open for writing: " + paths::report_csv(out));
    cf << csv;
    cf.close();
    std::ofstream jf(paths::report_json(out), std::ios::binary);
    if (!jf) throw IoError("cannot open for writing: " + paths::report_json(out));
    jf << js;
    jf.close();
    std::vector<std::string> inputs;
    for (PipelineVariant v : {PipelineVariant::Baseline, PipelineVariant::Rebalanced,
                              PipelineVariant::Reweight, PipelineVariant::Rerank})
        inputs.push_back(paths::metrics(out, v));
    manifest_record(out, "report", cfg, inputs, {paths::report_csv(out), paths::report_json(out)},
                    clock.seconds());
    log_info("report written to " + paths::report_csv(out));
}

void run_all(const PipelineConfig& cfg, const std::string& out) {
    StageClock clock;
    stage_gen_data(cfg, out);
    stage_tokenize(cfg, out);
    stage_analyze(cfg, out);
    stage_rebalance(cfg, out);
    stage_train(cfg, out, PipelineVariant::Baseline);
    stage_train(cfg, out, PipelineVariant::Rebalanced);
    stage_train(cfg, out, PipelineVariant::Reweight);
    stage_evaluate(cfg, out, PipelineVariant::Baseline);
    stage_evaluate(cfg, out, PipelineVariant::Rebalanced);
    stage_evaluate(cfg, out, PipelineVariant::Reweight);
    stage_evaluate(cfg, out, PipelineVariant::Rerank);
    stage_report(cfg, out);
    log_info("run-all finished in " + std::to_string(clock.seconds()) + " s");
}

}  // namespace semid
