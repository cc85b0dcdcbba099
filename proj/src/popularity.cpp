#include "semid/popularity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semid/error.hpp"

namespace semid {

std::vector<std::vector<double>> token_popularity(const std::vector<SemanticId>& sids,
                                                  const FrequencyTable& freq,
                                                  const Codebook& codebook) {
    if (sids.size() != freq.freq.size())
        throw InvalidArgument("token_popularity: SID/frequency size mismatch");
    std::vector<std::vector<double>> pop(codebook.num_levels());
    for (int l = 0; l < codebook.num_levels(); ++l) pop[l].assign(codebook.levels[l].size(), 0.0);
    for (size_t i = 0; i < sids.size(); ++i) {
        for (int l = 0; l < codebook.num_levels(); ++l) {
            const int t = sids[i].tokens[l];
            if (t < 0 || t >= codebook.levels[l].size())
                throw InvalidArgument("token_popularity: token slot out of range");
            pop[l][t] += static_cast<double>(freq.freq[i]);
        }
    }
    return pop;
}

TokenStats group_tokens(const std::vector<std::vector<double>>& pop, const Codebook& codebook,
                        double pop_pct, double unp_pct) {
    if (pop_pct < 0 || unp_pct < 0 || pop_pct + unp_pct > 1.0)
        throw InvalidArgument("group_tokens: percentiles must be >= 0 and sum to <= 1");
    TokenStats stats;
    stats.pop = pop;
    stats.group.resize(pop.size());
    for (size_t l = 0; l < pop.size(); ++l) {
        stats.group[l].assign(pop[l].size(), TokenGroup::Neu);
        std::vector<int> active;
        for (int t = 0; t < static_cast<int>(pop[l].size()); ++t)
            if (!codebook.levels[l].retired[t]) active.push_back(t);
        std::vector<int> order = active;  // descending popularity, ties by slot index
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return pop[l][a] > pop[l][b]; });
        const int k = static_cast<int>(active.size());
        const int n_pop = static_cast<int>(std::ceil(pop_pct * k));
        const int n_unp = std::min(static_cast<int>(std::ceil(unp_pct * k)), k - n_pop);
        for (int r = 0; r < n_pop; ++r) stats.group[l][order[r]] = TokenGroup::Pop;
        for (int r = 0; r < n_unp; ++r) stats.group[l][order[k - 1 - r]] = TokenGroup::Unp;
    }
    return stats;
}

ChildMap build_child_map(const std::vector<SemanticId>& sids, const Codebook& codebook) {
    ChildMap map;
    const int pairs = codebook.num_levels() - 1;
    map.children.resize(pairs);
    for (int l = 0; l < pairs; ++l) {
        map.children[l].resize(codebook.levels[l].size());
        // edge_of[parent][child] -> index into children[l][parent], built in
        // first-seen order then normalized to ascending child slot.
        std::vector<std::vector<int>> edge_of(codebook.levels[l].size(),
                                              std::vector<int>(codebook.levels[l + 1].size(), -1));
        for (size_t i = 0; i < sids.size(); ++i) {
            const int parent = sids[i].tokens[l];
            const int child = sids[i].tokens[l + 1];
            int& slot = edge_of[parent][child];
            if (slot < 0) {
                slot = static_cast<int>(map.children[l][parent].size());
                map.children[l][parent].push_back(ChildEdge{child, {}});
            }
            map.children[l][parent][slot].items.push_back(static_cast<int64_t>(i));
        }
        for (auto& edges : map.children[l])
            std::sort(edges.begin(), edges.end(),
                      [](const ChildEdge& a, const ChildEdge& b) { return a.child < b.child; });
    }
    return map;
}

ChildStatsTable child_stats(const ChildMap& child_map, const ResidualTrace& trace,
                            const FrequencyTable& freq, const std::vector<SemanticId>& sids,
                            const Codebook& codebook) {
    const auto pop = token_popularity(sids, freq, codebook);
    ChildStatsTable table;
    table.stats.resize(child_map.level_pairs());
    for (int l = 0; l < child_map.level_pairs(); ++l) {
        table.stats[l].resize(child_map.children[l].size());
        for (size_t parent = 0; parent < child_map.children[l].size(); ++parent) {
            for (const ChildEdge& edge : child_map.children[l][parent]) {
                ChildStat cs;
                cs.child = edge.child;
                cs.n = static_cast<int64_t>(edge.items.size());
                cs.pop = pop[l + 1][edge.child];
                // Mean of the residuals entering the parent's level: the split
                // centroids replace the parent codeword, so they live in the
                // same space it quantizes.
                const size_t d = trace.residuals.at(edge.items[0])[l].size();
                cs.mean_residual.assign(d, 0.0);
                for (int64_t item : edge.items) {
                    const Vec& r = trace.residuals[item][l];
                    for (size_t j = 0; j < d; ++j) cs.mean_residual[j] += r[j];
                    cs.cond_pop += static_cast<double>(freq.freq[item]);
                }
                for (size_t j = 0; j < d; ++j) cs.mean_residual[j] /= static_cast<double>(cs.n);
                table.stats[l][parent].push_back(std::move(cs));
            }
        }
    }
    return table;
}

ItemPartition partition_by_item_popularity(const FrequencyTable& freq, double top_frac) {
    if (top_frac <= 0 || top_frac >= 1)
        throw InvalidArgument("partition_by_item_popularity: need 0 < top_frac < 1");
    const int n = static_cast<int>(freq.freq.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return freq.freq[a] > freq.freq[b]; });
    const int n_top = std::max(1, static_cast<int>(std::ceil(top_frac * n)));
    ItemPartition part;
    part.names = {"head", "tail"};
    part.group_of.assign(n, 1);
    for (int r = 0; r < n_top && r < n; ++r) part.group_of[order[r]] = 0;
    return part;
}

ItemPartition partition_by_token_groups(const std::vector<SemanticId>& sids,
                                        const TokenStats& stats) {
    ItemPartition part;
    part.names = {"pop", "neu", "unp"};
    part.group_of.assign(sids.size(), 1);
    for (size_t i = 0; i < sids.size(); ++i) {
        bool has_pop = false, has_unp = false;
        for (size_t l = 0; l < stats.group.size(); ++l) {
            const TokenGroup g = stats.group[l][sids[i].tokens[l]];
            has_pop |= g == TokenGroup::Pop;
            has_unp |= g == TokenGroup::Unp;
        }
        if (has_pop)
            part.group_of[i] = 0;
        else if (has_unp)
            part.group_of[i] = 2;
    }
    return part;
}

std::vector<double> group_unfairness(const std::vector<std::vector<int64_t>>& topk_lists,
                                     const FrequencyTable& freq, const ItemPartition& partition) {
    std::vector<double> exposure(partition.num_groups(), 0.0);
    std::vector<double> interaction(partition.num_groups(), 0.0);
    int64_t slots = 0;
    for (const auto& list : topk_lists) {
        for (int64_t item : list) {
            if (item < 0 || item >= static_cast<int64_t>(partition.group_of.size()))
                throw InvalidArgument("group_unfairness: item_id outside the partition");
            exposure[partition.group_of[item]] += 1.0;
            ++slots;
        }
    }
    for (size_t i = 0; i < freq.freq.size(); ++i)
        interaction[partition.group_of[i]] += static_cast<double>(freq.freq[i]);
    const double total_inter = std::accumulate(interaction.begin(), interaction.end(), 0.0);
    if (slots == 0 || total_inter == 0.0)
        throw InvalidArgument("group_unfairness: empty recommendation lists or frequencies");
    std::vector<double> gu(partition.num_groups(), 0.0);
    for (int g = 0; g < partition.num_groups(); ++g)
        gu[g] = exposure[g] / static_cast<double>(slots) - interaction[g] / total_inter;
    return gu;
}

}  // namespace semid
