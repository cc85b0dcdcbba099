#include "semid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "semid/error.hpp"
#include "semid/rng.hpp"

namespace semid {

using nlohmann::json;

void ItemCatalog::validate() const {
    if (items.empty()) return;
    const size_t d = items[0].embedding.size();
    if (d < 2) throw InvalidArgument("catalog embeddings must have dimension >= 2");
    for (size_t i = 0; i < items.size(); ++i) {
        if (items[i].item_id != static_cast<int64_t>(i))
            throw InvalidArgument("catalog item_ids must be contiguous from 0");
        if (items[i].embedding.size() != d)
            throw InvalidArgument("catalog embeddings must share one dimension");
        for (double v : items[i].embedding)
            if (!std::isfinite(v)) throw InvalidArgument("catalog embedding not finite");
    }
}

std::vector<std::vector<Event>> InteractionLog::by_user() const {
    std::map<int64_t, std::vector<Event>> grouped;
    for (const Event& e : events) grouped[e.user_id].push_back(e);
    std::vector<std::vector<Event>> out;
    out.reserve(grouped.size());
    for (auto& [uid, evs] : grouped) {
        std::stable_sort(evs.begin(), evs.end(),
                         [](const Event& a, const Event& b) { return a.ts < b.ts; });
        out.push_back(std::move(evs));
    }
    return out;
}

int64_t FrequencyTable::total() const {
    int64_t t = 0;
    for (int64_t c : freq) t += c;
    return t;
}

namespace {

// Rejection-resampled Gaussian centers so clusters stay well separated
// relative to the spread.
std::vector<Vec> draw_centers(int64_t n_clusters, int d, double spread, Rng& rng) {
    const double scale = 3.0;
    const double min_sep2 = std::pow(std::max(1.0, 4.0 * spread), 2);
    std::vector<Vec> centers;
    centers.reserve(static_cast<size_t>(n_clusters));
    for (int64_t c = 0; c < n_clusters; ++c) {
        Vec center(d);
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (int j = 0; j < d; ++j) center[j] = scale * rng.next_normal();
            bool ok = true;
            for (const Vec& other : centers) {
                double d2 = 0.0;
                for (int j = 0; j < d; ++j) d2 += (center[j] - other[j]) * (center[j] - other[j]);
                if (d2 < min_sep2) {
                    ok = false;
                    break;
                }
            }
            if (ok) break;
        }
        centers.push_back(std::move(center));
    }
    return centers;
}

}  // namespace

ItemCatalog generate_catalog(int64_t n_items, int d, int64_t n_clusters, double cluster_spread,
                             uint64_t seed, double pop_cluster_corr) {
    if (n_clusters < 1 || n_items < n_clusters) throw InvalidArgument("need n_items >= n_clusters >= 1");
    if (d < 2) throw InvalidArgument("need d >= 2");
    if (cluster_spread < 0.0) throw InvalidArgument("need cluster_spread >= 0");
    if (pop_cluster_corr < 0.0 || pop_cluster_corr > 1.0)
        throw InvalidArgument("pop_cluster_corr must be in [0,1]");

    Rng rng(seed);
    const std::vector<Vec> centers = draw_centers(n_clusters, d, cluster_spread, rng);

    // Item rank equals item_id (the Zipf rank order used by the interaction
    // generator). With probability pop_cluster_corr an item lands in its rank
    // block's cluster, so popular items concentrate in few clusters.
    const int64_t block = (n_items + n_clusters - 1) / n_clusters;
    ItemCatalog catalog;
    catalog.items.reserve(static_cast<size_t>(n_items));
    for (int64_t i = 0; i < n_items; ++i) {
        int64_t cluster;
        if (rng.next_double() < pop_cluster_corr) {
            cluster = i / block;
        } else {
            cluster = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n_clusters)));
        }
        Item item;
        item.item_id = i;
        item.cluster_id = cluster;
        item.embedding.resize(d);
        for (int j = 0; j < d; ++j)
            item.embedding[j] = centers[cluster][j] + cluster_spread * rng.next_normal();
        catalog.items.push_back(std::move(item));
    }
    return catalog;
}

InteractionLog generate_interactions(const ItemCatalog& catalog, int64_t n_users, double zipf_s,
                                     int min_len, int max_len, uint64_t seed) {
    if (zipf_s < 0.0) throw InvalidArgument("need zipf_s >= 0");
    if (min_len < 1 || min_len > max_len) throw InvalidArgument("need 1 <= min_len <= max_len");
    if (catalog.items.empty()) throw InvalidArgument("catalog is empty");
    if (n_users < 0) throw InvalidArgument("need n_users >= 0");

    const size_t n = catalog.items.size();
    std::vector<double> cum(n);
    double total = 0.0;
    for (size_t r = 0; r < n; ++r) {
        total += std::pow(static_cast<double>(r + 1), -zipf_s);
        cum[r] = total;
    }

    Rng rng(seed);
    InteractionLog log;
    for (int64_t u = 0; u < n_users; ++u) {
        const int len = static_cast<int>(rng.next_int(min_len, max_len));
        for (int t = 0; t < len; ++t) {
            const double x = rng.next_double() * total;
            const auto it = std::upper_bound(cum.begin(), cum.end(), x);
            const int64_t item = std::min<int64_t>(static_cast<int64_t>(it - cum.begin()),
                                                   static_cast<int64_t>(n) - 1);
            log.events.push_back({u, item, t});
        }
    }
    return log;
}

DatasetSplits chronological_split(const InteractionLog& log) {
    DatasetSplits splits;
    for (const auto& user_events : log.by_user()) {
        const int64_t n = static_cast<int64_t>(user_events.size());
        if (n < 5)
            throw InvalidArgument("user-too-short: user " + std::to_string(user_events[0].user_id) +
                                  " has " + std::to_string(n) + " events, need >= 5");
        // Floor for val/test with a floor of one test event, remainder to train.
        const int64_t n_val = n / 10;
        const int64_t n_test = std::max<int64_t>(1, n / 10);
        const int64_t n_train = n - n_val - n_test;
        for (int64_t i = 0; i < n; ++i) {
            if (i < n_train)
                splits.train.events.push_back(user_events[i]);
            else if (i < n_train + n_val)
                splits.val.events.push_back(user_events[i]);
            else
                splits.test.events.push_back(user_events[i]);
        }
    }
    return splits;
}

FrequencyTable item_frequency(const InteractionLog& train, int64_t n_items) {
    FrequencyTable table;
    table.freq.assign(static_cast<size_t>(n_items), 0);
    for (const Event& e : train.events) {
        if (e.item_id < 0 || e.item_id >= n_items)
            throw InvalidArgument("event item_id outside catalog");
        ++table.freq[static_cast<size_t>(e.item_id)];
    }
    return table;
}

namespace {

json parse_line(const std::string& path, const std::string& line, long line_number) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(path, line_number, e.what());
    }
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    return in;
}

}  // namespace

void save_catalog_jsonl(const ItemCatalog& catalog, const std::string& path) {
    std::ofstream out = open_out(path);
    for (const Item& item : catalog.items) {
        json rec;
        rec["item_id"] = item.item_id;
        rec["embedding"] = item.embedding;
        rec["cluster_id"] = item.cluster_id;
        out << rec.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

ItemCatalog load_catalog_jsonl(const std::string& path) {
    std::ifstream in = open_in(path);
    ItemCatalog catalog;
    std::string line;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const json rec = parse_line(path, line, line_number);
        if (!rec.contains("item_id") || !rec.contains("embedding") || !rec.contains("cluster_id"))
            throw ParseError(path, line_number, "catalog record missing a required field");
        Item item;
        item.item_id = rec.at("item_id").get<int64_t>();
        item.embedding = rec.at("embedding").get<Vec>();
        item.cluster_id = rec.at("cluster_id").get<int64_t>();
        catalog.items.push_back(std::move(item));
    }
    catalog.validate();
    return catalog;
}

void save_log_jsonl(const InteractionLog& log, const std::string& path) {
    std::ofstream out = open_out(path);
    for (const Event& e : log.events) {
        json rec;
        rec["user_id"] = e.user_id;
        rec["item_id"] = e.item_id;
        rec["ts"] = e.ts;
        out << rec.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

InteractionLog load_log_jsonl(const std::string& path) {
    std::ifstream in = open_in(path);
    InteractionLog log;
    std::string line;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const json rec = parse_line(path, line, line_number);
        if (!rec.contains("user_id") || !rec.contains("item_id") || !rec.contains("ts"))
            throw ParseError(path, line_number, "interaction record missing a required field");
        log.events.push_back({rec.at("user_id").get<int64_t>(), rec.at("item_id").get<int64_t>(),
                              rec.at("ts").get<int64_t>()});
    }
    return log;
}

}  // namespace semid
