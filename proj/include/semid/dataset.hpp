#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semid {

using Vec = std::vector<double>;

struct Item {
    int64_t item_id = 0;
    Vec embedding;
    int64_t cluster_id = 0;
};

// Items with continuous embeddings; item_ids are contiguous from 0.
struct ItemCatalog {
    std::vector<Item> items;

    size_t size() const { return items.size(); }
    int dim() const { return items.empty() ? 0 : static_cast<int>(items[0].embedding.size()); }
    void validate() const;  // throws InvalidArgument on broken invariants
};

struct Event {
    int64_t user_id = 0;
    int64_t item_id = 0;
    int64_t ts = 0;
};

// Chronological interaction events; per-user timestamps strictly increase.
struct InteractionLog {
    std::vector<Event> events;

    size_t size() const { return events.size(); }
    // Events grouped by user, time-ascending within each user.
    std::vector<std::vector<Event>> by_user() const;
};

// Train-split interaction counts per item, indexed by item_id.
struct FrequencyTable {
    std::vector<int64_t> freq;

    int64_t total() const;
    int64_t at(int64_t item_id) const { return freq[static_cast<size_t>(item_id)]; }
};

struct DatasetSplits {
    InteractionLog train;
    InteractionLog val;
    InteractionLog test;
};

// Synthetic catalog: n_clusters isotropic Gaussian centers, embeddings drawn
// around them with the given spread. pop_cluster_corr in [0,1] concentrates
// low-rank (popular) items into contiguous rank-block clusters; at 0 the
// cluster assignment is uniform at random.
ItemCatalog generate_catalog(int64_t n_items, int d, int64_t n_clusters, double cluster_spread,
                             uint64_t seed, double pop_cluster_corr = 0.8);

// Zipf(zipf_s) item draws over item rank (= item_id order); sequence lengths
// uniform in [min_len, max_len]. Deterministic in seed.
InteractionLog generate_interactions(const ItemCatalog& catalog, int64_t n_users, double zipf_s,
                                     int min_len, int max_len, uint64_t seed);

// Per user: earliest 80% -> train, next 10% -> val, last 10% -> test.
// Val/test sizes floor; the remainder goes to train.
DatasetSplits chronological_split(const InteractionLog& log);

FrequencyTable item_frequency(const InteractionLog& train, int64_t n_items);

// JSONL persistence. One record per line, UTF-8.
void save_catalog_jsonl(const ItemCatalog& catalog, const std::string& path);
ItemCatalog load_catalog_jsonl(const std::string& path);
void save_log_jsonl(const InteractionLog& log, const std::string& path);
InteractionLog load_log_jsonl(const std::string& path);

}  // namespace semid
