#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semid/dataset.hpp"
#include "semid/tokenizer.hpp"

namespace semid {

enum class TokenGroup : int8_t { Pop = 0, Neu = 1, Unp = 2 };

// Per-level token popularity P(c_k^l) = sum of f_i over items carrying the
// token, and the top/bottom percentile group labels. Suffix tokens are not
// tracked here. Retired slots carry popularity 0 and stay Neu.
struct TokenStats {
    std::vector<std::vector<double>> pop;       // [level][token slot]
    std::vector<std::vector<TokenGroup>> group; // [level][token slot]
};

struct ChildEdge {
    int child = 0;                    // level-(l+1) token slot
    std::vector<int64_t> items;       // items with s^l = parent and s^{l+1} = child
};

// Parent -> child co-occurrence structure between consecutive levels.
// children[l][parent] lists the edges from level-l token `parent`.
struct ChildMap {
    std::vector<std::vector<std::vector<ChildEdge>>> children;

    int level_pairs() const { return static_cast<int>(children.size()); }
};

struct ChildStat {
    int child = 0;
    int64_t n = 0;          // |edge items|
    Vec mean_residual;      // mean level-l residual over edge items
    double pop = 0.0;       // unconditional P(c_j^{l+1})
    double cond_pop = 0.0;  // P(c_j^{l+1} | c_k^l), over the edge items only
};

// stats[l][parent] lists per-child statistics for level-l token `parent`.
struct ChildStatsTable {
    std::vector<std::vector<std::vector<ChildStat>>> stats;
};

std::vector<std::vector<double>> token_popularity(const std::vector<SemanticId>& sids,
                                                  const FrequencyTable& freq,
                                                  const Codebook& codebook);

// Per level: sort active tokens by popularity descending (ties: lower index
// first); top ceil(pop_pct*K) -> Pop, bottom ceil(unp_pct*K) -> Unp, rest Neu.
TokenStats group_tokens(const std::vector<std::vector<double>>& pop, const Codebook& codebook,
                        double pop_pct = 0.05, double unp_pct = 0.05);

ChildMap build_child_map(const std::vector<SemanticId>& sids, const Codebook& codebook);

ChildStatsTable child_stats(const ChildMap& child_map, const ResidualTrace& trace,
                            const FrequencyTable& freq, const std::vector<SemanticId>& sids,
                            const Codebook& codebook);

// Disjoint, exhaustive item partition used for group-unfairness metrics.
struct ItemPartition {
    std::vector<int> group_of;          // item_id -> group index
    std::vector<std::string> names;

    int num_groups() const { return static_cast<int>(names.size()); }
};

// Top `top_frac` of items by train frequency (ties: lower item_id) vs rest.
ItemPartition partition_by_item_popularity(const FrequencyTable& freq, double top_frac = 0.2);

// Items carrying any Pop token -> "pop", else any Unp token -> "unp", else
// "neu" (priority Pop > Unp). Suffix tokens are ignored.
ItemPartition partition_by_token_groups(const std::vector<SemanticId>& sids,
                                        const TokenStats& stats);

// GU(g) = exposure share of g in the top-K lists minus interaction share of g.
// Signed; sums to zero over an exhaustive partition.
std::vector<double> group_unfairness(const std::vector<std::vector<int64_t>>& topk_lists,
                                     const FrequencyTable& freq, const ItemPartition& partition);

}  // namespace semid
