#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "semid/decode.hpp"
#include "semid/popularity.hpp"

namespace semid {

struct MetricsReport {
    std::map<int, double> hr;    // K -> hit rate
    std::map<int, double> ndcg;  // K -> NDCG (single relevant item)
    std::map<std::string, double> gu;  // group name -> GU
    std::map<int, double> dgu;   // K -> max GU - min GU
    std::map<int, double> mgu;   // K -> mean |GU|
    std::vector<double> exposure_by_decile;  // item-popularity decile -> share
    std::string partition_name;  // which item partition the GU table used
    double wall_seconds = 0.0;
};

// recs[u] is user u's ranked item list; targets[u] the held-out item.
double hr_at_k(const std::vector<std::vector<int64_t>>& recs, const std::vector<int64_t>& targets,
               int k);
double ndcg_at_k(const std::vector<std::vector<int64_t>>& recs,
                 const std::vector<int64_t>& targets, int k);

struct BiasMetrics {
    std::vector<double> gu;  // per group
    double dgu = 0.0;        // max_g GU - min_g GU
    double mgu = 0.0;        // mean_g |GU|
};

BiasMetrics bias_metrics(const std::vector<std::vector<int64_t>>& recs,
                         const FrequencyTable& freq, const ItemPartition& partition, int k);

// Reweighting baseline: raw weight (f_target + 1)^(-beta), normalized to mean
// 1 per batch. beta = 0 yields all-ones exactly.
std::vector<double> reweight_raw(const std::vector<int64_t>& target_items,
                                 const FrequencyTable& freq, double beta);

// Reranking baseline: stable re-sort of a scored candidate list by
// score - alpha * ln(f_i + 1), then cut to k. alpha = 0 is the identity.
std::vector<Recommendation> rerank(const std::vector<Recommendation>& scored,
                                   const FrequencyTable& freq, double alpha, int k);

std::vector<double> exposure_by_decile(const std::vector<std::vector<int64_t>>& recs,
                                       const FrequencyTable& freq);

// Comparison table vs the first (baseline) report. CSV columns:
// pipeline,HR@10,NDCG@10,DGU@10,MGU@10,time_seconds. The JSON adds relative
// deltas per metric. Throws on a metric missing from any report.
struct NamedReport {
    std::string name;
    MetricsReport report;
};
std::string comparison_csv(const std::vector<NamedReport>& reports, int k = 10);
std::string comparison_json(const std::vector<NamedReport>& reports, int k = 10);

void save_metrics_json(const MetricsReport& report, const std::string& path);
MetricsReport load_metrics_json(const std::string& path);

}  // namespace semid
