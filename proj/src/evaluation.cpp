#include "semid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "semid/error.hpp"

namespace semid {

using nlohmann::json;

namespace {

// Rank (1-based) of `target` in the list, or 0 if absent from the top k.
int rank_within(const std::vector<int64_t>& recs, int64_t target, int k) {
    const int lim = std::min<int>(k, static_cast<int>(recs.size()));
    for (int r = 0; r < lim; ++r)
        if (recs[r] == target) return r + 1;
    return 0;
}

void check_eval_inputs(const std::vector<std::vector<int64_t>>& recs,
                       const std::vector<int64_t>& targets, int k) {
    if (recs.empty() || targets.empty()) throw InvalidArgument("empty-test-set");
    if (recs.size() != targets.size())
        throw InvalidArgument("recommendation/target list size mismatch");
    if (k < 1) throw InvalidArgument("K must be >= 1");
}

}  // namespace

double hr_at_k(const std::vector<std::vector<int64_t>>& recs, const std::vector<int64_t>& targets,
               int k) {
    check_eval_inputs(recs, targets, k);
    double hits = 0.0;
    for (size_t u = 0; u < recs.size(); ++u)
        if (rank_within(recs[u], targets[u], k) > 0) hits += 1.0;
    return hits / static_cast<double>(recs.size());
}

double ndcg_at_k(const std::vector<std::vector<int64_t>>& recs,
                 const std::vector<int64_t>& targets, int k) {
    check_eval_inputs(recs, targets, k);
    double sum = 0.0;
    for (size_t u = 0; u < recs.size(); ++u) {
        const int rank = rank_within(recs[u], targets[u], k);
        if (rank > 0) sum += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    return sum / static_cast<double>(recs.size());
}

BiasMetrics bias_metrics(const std::vector<std::vector<int64_t>>& recs,
                         const FrequencyTable& freq, const ItemPartition& partition, int k) {
    if (k < 1) throw InvalidArgument("K must be >= 1");
    std::vector<int64_t> members(partition.num_groups(), 0);
    for (int g : partition.group_of) ++members[g];
    for (int g = 0; g < partition.num_groups(); ++g)
        if (members[g] == 0)
            throw InvalidArgument("empty-group: partition group '" + partition.names[g] +
                                  "' has no items");
    std::vector<std::vector<int64_t>> cut;
    cut.reserve(recs.size());
    for (const auto& list : recs) {
        cut.emplace_back(list.begin(),
                         list.begin() + std::min<size_t>(list.size(), static_cast<size_t>(k)));
    }
    BiasMetrics out;
    out.gu = group_unfairness(cut, freq, partition);
    const auto [mn, mx] = std::minmax_element(out.gu.begin(), out.gu.end());
    out.dgu = *mx - *mn;
    for (double g : out.gu) out.mgu += std::abs(g);
    out.mgu /= static_cast<double>(out.gu.size());
    return out;
}

std::vector<double> reweight_raw(const std::vector<int64_t>& target_items,
                                 const FrequencyTable& freq, double beta) {
    if (target_items.empty()) throw InvalidArgument("reweight_raw: no targets");
    std::vector<double> w(target_items.size());
    double sum = 0.0;
    for (size_t i = 0; i < target_items.size(); ++i) {
        const int64_t item = target_items[i];
        if (item < 0 || item >= static_cast<int64_t>(freq.freq.size()))
            throw InvalidArgument("reweight_raw: target item out of range");
        w[i] = std::pow(static_cast<double>(freq.freq[item]) + 1.0, -beta);
        sum += w[i];
    }
    const double mean = sum / static_cast<double>(w.size());
    for (double& x : w) x /= mean;
    return w;
}

std::vector<Recommendation> rerank(const std::vector<Recommendation>& scored,
                                   const FrequencyTable& freq, double alpha, int k) {
    if (k < 0) throw InvalidArgument("rerank: k must be >= 0");
    if (static_cast<size_t>(k) > scored.size())
        throw InvalidArgument("rerank: k exceeds the candidate list");
    std::vector<std::pair<double, size_t>> adjusted(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) {
        const int64_t item = scored[i].item_id;
        if (item < 0 || item >= static_cast<int64_t>(freq.freq.size()))
            throw InvalidArgument("rerank: item out of range");
        adjusted[i] = {scored[i].score -
                           alpha * std::log(static_cast<double>(freq.freq[item]) + 1.0),
                       i};
    }
    std::stable_sort(adjusted.begin(), adjusted.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Recommendation> out;
    out.reserve(k);
    for (int r = 0; r < k; ++r) out.push_back(scored[adjusted[r].second]);
    return out;
}

std::vector<double> exposure_by_decile(const std::vector<std::vector<int64_t>>& recs,
                                       const FrequencyTable& freq) {
    const int n = static_cast<int>(freq.freq.size());
    if (n == 0) throw InvalidArgument("exposure_by_decile: empty frequency table");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return freq.freq[a] > freq.freq[b]; });
    std::vector<int> decile_of(n);
    for (int r = 0; r < n; ++r)
        decile_of[order[r]] = std::min(9, static_cast<int>(static_cast<int64_t>(r) * 10 / n));
    std::vector<double> exposure(10, 0.0);
    int64_t slots = 0;
    for (const auto& list : recs)
        for (int64_t item : list) {
            if (item < 0 || item >= n) throw InvalidArgument("exposure_by_decile: item out of range");
            exposure[decile_of[item]] += 1.0;
            ++slots;
        }
    if (slots == 0) throw InvalidArgument("exposure_by_decile: no recommendations");
    for (double& e : exposure) e /= static_cast<double>(slots);
    return exposure;
}

namespace {

double metric_at(const std::map<int, double>& table, int k, const std::string& name,
                 const std::string& pipeline) {
    auto it = table.find(k);
    if (it == table.end())
        throw InvalidArgument("metric-mismatch: report '" + pipeline + "' lacks " + name + "@" +
                              std::to_string(k));
    return it->second;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string comparison_csv(const std::vector<NamedReport>& reports, int k) {
    if (reports.size() < 2) throw InvalidArgument("compare_report needs at least 2 reports");
    std::string csv = "pipeline,HR@" + std::to_string(k) + ",NDCG@" + std::to_string(k) + ",DGU@" +
                      std::to_string(k) + ",MGU@" + std::to_string(k) + ",time_seconds\n";
    for (const NamedReport& r : reports) {
        csv += r.name;
        csv += ',' + fmt(metric_at(r.report.hr, k, "HR", r.name));
        csv += ',' + fmt(metric_at(r.report.ndcg, k, "NDCG", r.name));
        csv += ',' + fmt(metric_at(r.report.dgu, k, "DGU", r.name));
        csv += ',' + fmt(metric_at(r.report.mgu, k, "MGU", r.name));
        csv += ',' + fmt(r.report.wall_seconds);
        csv += '\n';
    }
    return csv;
}

std::string comparison_json(const std::vector<NamedReport>& reports, int k) {
    if (reports.size() < 2) throw InvalidArgument("compare_report needs at least 2 reports");
    const NamedReport& base = reports.front();
    json doc = json::array();
    for (const NamedReport& r : reports) {
        json row;
        row["pipeline"] = r.name;
        row["partition"] = r.report.partition_name;
        row["time_seconds"] = r.report.wall_seconds;
        const char* names[4] = {"HR", "NDCG", "DGU", "MGU"};
        const std::map<int, double>* tables[4] = {&r.report.hr, &r.report.ndcg, &r.report.dgu,
                                                  &r.report.mgu};
        const std::map<int, double>* base_tables[4] = {&base.report.hr, &base.report.ndcg,
                                                       &base.report.dgu, &base.report.mgu};
        for (int i = 0; i < 4; ++i) {
            const std::string key = std::string(names[i]) + "@" + std::to_string(k);
            const double v = metric_at(*tables[i], k, names[i], r.name);
            const double b = metric_at(*base_tables[i], k, names[i], base.name);
            row[key] = v;
            row[key + "_rel_delta"] = b != 0.0 ? (v - b) / b : 0.0;
        }
        doc.push_back(std::move(row));
    }
    return doc.dump(2) + "\n";
}

void save_metrics_json(const MetricsReport& report, const std::string& path) {
    json doc;
    for (const auto& [k, v] : report.hr) doc["hr"][std::to_string(k)] = v;
    for (const auto& [k, v] : report.ndcg) doc["ndcg"][std::to_string(k)] = v;
    for (const auto& [g, v] : report.gu) doc["gu"][g] = v;
    for (const auto& [k, v] : report.dgu) doc["dgu"][std::to_string(k)] = v;
    for (const auto& [k, v] : report.mgu) doc["mgu"][std::to_string(k)] = v;
    doc["exposure_by_decile"] = report.exposure_by_decile;
    doc["partition"] = report.partition_name;
    doc["wall_seconds"] = report.wall_seconds;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

MetricsReport load_metrics_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ParseError(path, 1, e.what());
    }
    MetricsReport report;
    for (const auto& [k, v] : doc.at("hr").items()) report.hr[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : doc.at("ndcg").items()) report.ndcg[std::stoi(k)] = v.get<double>();
    for (const auto& [g, v] : doc.at("gu").items()) report.gu[g] = v.get<double>();
    for (const auto& [k, v] : doc.at("dgu").items()) report.dgu[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : doc.at("mgu").items()) report.mgu[std::stoi(k)] = v.get<double>();
    report.exposure_by_decile = doc.at("exposure_by_decile").get<std::vector<double>>();
    report.partition_name = doc.at("partition").get<std::string>();
    report.wall_seconds = doc.at("wall_seconds").get<double>();
    return report;
}

}  // namespace semid
