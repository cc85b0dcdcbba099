#include "semid/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "semid/error.hpp"
#include "semid/kmeans.hpp"

namespace semid {

using nlohmann::json;

int LevelCodebook::active_count() const {
    int n = 0;
    for (uint8_t r : retired)
        if (!r) ++n;
    return n;
}

int Codebook::dim() const {
    for (const LevelCodebook& level : levels)
        for (size_t t = 0; t < level.codewords.size(); ++t)
            if (!level.retired[t]) return static_cast<int>(level.codewords[t].size());
    return 0;
}

std::vector<uint8_t> Codebook::retired_mask() const {
    std::vector<uint8_t> mask(vocab_size, 0);
    for (const LevelCodebook& level : levels)
        for (size_t t = 0; t < level.codewords.size(); ++t)
            if (level.retired[t]) mask[level.flat_ids[t]] = 1;
    return mask;
}

void Codebook::validate() const {
    if (num_levels() < 2) throw InvalidArgument("codebook needs at least 2 levels");
    std::vector<uint8_t> seen(vocab_size, 0);
    seen[kPadId] = 1;
    seen[kBosId] = 1;
    for (const LevelCodebook& level : levels) {
        if (level.flat_ids.size() != level.codewords.size() ||
            level.retired.size() != level.codewords.size())
            throw InvalidArgument("codebook level arrays out of sync");
        for (size_t t = 0; t < level.codewords.size(); ++t) {
            for (double v : level.codewords[t])
                if (!std::isfinite(v)) throw InvalidArgument("codeword not finite");
            const int flat = level.flat_ids[t];
            if (flat < 0 || flat >= vocab_size || seen[flat])
                throw InvalidArgument("flat vocabulary ids must be unique and in range");
            seen[flat] = 1;
        }
    }
    for (int s = 0; s < n_suffix; ++s) {
        const int flat = suffix_base + s;
        if (flat < 0 || flat >= vocab_size || seen[flat])
            throw InvalidArgument("suffix ids overlap level ids");
        seen[flat] = 1;
    }
}

namespace {

int nearest_active(const Vec& x, const LevelCodebook& level) {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int t = 0; t < level.size(); ++t) {
        if (level.retired[t]) continue;
        const double d2 = squared_distance(x, level.codewords[t]);
        if (d2 < best_d2) {  // strict: ties keep the lowest index
            best_d2 = d2;
            best = t;
        }
    }
    if (best < 0) throw InvalidArgument("level has no active codewords");
    return best;
}

}  // namespace

RqFitResult rq_fit(const ItemCatalog& catalog, int n_levels, int k, int max_iters, uint64_t seed) {
    if (n_levels < 2) throw InvalidArgument("rq_fit: need L >= 2");
    if (k < 1 || static_cast<size_t>(k) > catalog.items.size())
        throw InvalidArgument("rq_fit: need 1 <= K <= n_items");
    catalog.validate();

    const size_t n = catalog.items.size();
    RqFitResult out;
    out.trace.residuals.assign(n, {});
    std::vector<Vec> residuals(n);
    for (size_t i = 0; i < n; ++i) {
        residuals[i] = catalog.items[i].embedding;
        out.trace.residuals[i].push_back(residuals[i]);
    }

    out.sids.assign(n, SemanticId{});
    out.codebook.levels.resize(n_levels);
    for (int l = 0; l < n_levels; ++l) {
        const KmeansResult km = kmeans(residuals, k, max_iters, seed + static_cast<uint64_t>(l));
        LevelCodebook& level = out.codebook.levels[l];
        level.codewords = km.centroids;
        level.retired.assign(k, 0);
        level.flat_ids.resize(k);  // assigned below, after sizes are known

        // Final nearest-codeword pass against the converged centroids, so the
        // stored tokens are exact argmins of the persisted codebook.
        for (size_t i = 0; i < n; ++i) {
            const int token = nearest_active(residuals[i], level);
            out.sids[i].tokens.push_back(token);
            const Vec& cw = level.codewords[token];
            for (size_t j = 0; j < residuals[i].size(); ++j) residuals[i][j] -= cw[j];
            out.trace.residuals[i].push_back(residuals[i]);
        }
    }

    disambiguate(out.sids);

    // Flat vocabulary: [pad, bos, level tokens..., suffix tokens].
    int next = 2;
    for (LevelCodebook& level : out.codebook.levels)
        for (int t = 0; t < level.size(); ++t) level.flat_ids[t] = next++;
    int max_suffix = 0;
    for (const SemanticId& sid : out.sids) max_suffix = std::max(max_suffix, sid.suffix);
    out.codebook.suffix_base = next;
    out.codebook.n_suffix = max_suffix + 1;
    out.codebook.vocab_size = next + out.codebook.n_suffix;
    return out;
}

SemanticId assign_sid(const Vec& embedding, const Codebook& codebook) {
    const int d = codebook.dim();
    if (static_cast<int>(embedding.size()) != d)
        throw InvalidArgument("assign_sid: embedding dimension mismatch (want " +
                              std::to_string(d) + ")");
    SemanticId sid;
    Vec residual = embedding;
    for (const LevelCodebook& level : codebook.levels) {
        const int token = nearest_active(residual, level);
        sid.tokens.push_back(token);
        const Vec& cw = level.codewords[token];
        for (size_t j = 0; j < residual.size(); ++j) residual[j] -= cw[j];
    }
    return sid;
}

void disambiguate(std::vector<SemanticId>& sids) {
    std::map<std::vector<int>, int> counts;
    for (SemanticId& sid : sids) sid.suffix = counts[sid.tokens]++;
}

std::vector<int> flatten(const std::vector<SemanticId>& history, const Codebook& codebook) {
    if (history.empty()) throw InvalidArgument("flatten: empty history");
    std::vector<int> out;
    out.reserve(history.size() * (codebook.num_levels() + 1));
    for (const SemanticId& sid : history) {
        if (static_cast<int>(sid.tokens.size()) != codebook.num_levels())
            throw InvalidArgument("flatten: SID level count mismatch");
        for (int l = 0; l < codebook.num_levels(); ++l)
            out.push_back(codebook.flat_of(l, sid.tokens[l]));
        if (sid.suffix < 0 || sid.suffix >= codebook.n_suffix)
            throw InvalidArgument("flatten: SID suffix outside the allocated range");
        out.push_back(codebook.suffix_flat(sid.suffix));
    }
    return out;
}

std::vector<SemanticId> unflatten(const std::vector<int>& tokens, const Codebook& codebook) {
    const int stride = codebook.num_levels() + 1;
    if (tokens.size() % stride != 0) throw InvalidArgument("unflatten: length not a multiple of L+1");

    // Reverse map flat id -> (level, token).
    std::vector<std::pair<int, int>> reverse(codebook.vocab_size, {-1, -1});
    for (int l = 0; l < codebook.num_levels(); ++l)
        for (int t = 0; t < codebook.levels[l].size(); ++t)
            reverse[codebook.flat_of(l, t)] = {l, t};

    std::vector<SemanticId> out;
    for (size_t pos = 0; pos < tokens.size(); pos += stride) {
        SemanticId sid;
        for (int l = 0; l < codebook.num_levels(); ++l) {
            const int flat = tokens[pos + l];
            if (flat < 0 || flat >= codebook.vocab_size || reverse[flat].first != l)
                throw InvalidArgument("unflatten: token not in level " + std::to_string(l));
            sid.tokens.push_back(reverse[flat].second);
        }
        const int sfx = tokens[pos + codebook.num_levels()] - codebook.suffix_base;
        if (sfx < 0 || sfx >= codebook.n_suffix)
            throw InvalidArgument("unflatten: suffix token out of range");
        sid.suffix = sfx;
        out.push_back(std::move(sid));
    }
    return out;
}

void save_codebook_json(const Codebook& codebook, const std::string& path) {
    json doc;
    doc["levels"] = json::array();
    doc["flat_ids"] = json::array();
    doc["retired"] = json::array();
    for (const LevelCodebook& level : codebook.levels) {
        doc["levels"].push_back(level.codewords);
        doc["flat_ids"].push_back(level.flat_ids);
        doc["retired"].push_back(level.retired);
    }
    doc["n_suffix"] = codebook.n_suffix;
    doc["suffix_base"] = codebook.suffix_base;
    doc["vocab_size"] = codebook.vocab_size;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

Codebook load_codebook_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ParseError(path, 1, e.what());
    }
    Codebook cb;
    const auto& levels = doc.at("levels");
    for (size_t l = 0; l < levels.size(); ++l) {
        LevelCodebook level;
        level.codewords = levels[l].get<std::vector<Vec>>();
        level.flat_ids = doc.at("flat_ids")[l].get<std::vector<int>>();
        level.retired = doc.at("retired")[l].get<std::vector<uint8_t>>();
        cb.levels.push_back(std::move(level));
    }
    cb.n_suffix = doc.at("n_suffix").get<int>();
    cb.suffix_base = doc.at("suffix_base").get<int>();
    cb.vocab_size = doc.at("vocab_size").get<int>();
    cb.validate();
    return cb;
}

void save_sids_jsonl(const std::vector<SemanticId>& sids, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (size_t i = 0; i < sids.size(); ++i) {
        json rec;
        rec["item_id"] = static_cast<int64_t>(i);
        rec["tokens"] = sids[i].tokens;
        rec["suffix"] = sids[i].suffix;
        out << rec.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<SemanticId> load_sids_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<SemanticId> sids;
    std::string line;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(path, line_number, e.what());
        }
        if (rec.at("item_id").get<int64_t>() != static_cast<int64_t>(sids.size()))
            throw ParseError(path, line_number, "SID records must be ordered by item_id from 0");
        SemanticId sid;
        sid.tokens = rec.at("tokens").get<std::vector<int>>();
        sid.suffix = rec.at("suffix").get<int>();
        sids.push_back(std::move(sid));
    }
    return sids;
}

ResidualTrace residual_trace_for(const ItemCatalog& catalog, const Codebook& codebook,
                                 const std::vector<SemanticId>& sids) {
    if (catalog.items.size() != sids.size())
        throw InvalidArgument("residual_trace_for: catalog/SID size mismatch");
    ResidualTrace trace;
    trace.residuals.assign(catalog.items.size(), {});
    for (size_t i = 0; i < catalog.items.size(); ++i) {
        Vec residual = catalog.items[i].embedding;
        trace.residuals[i].push_back(residual);
        for (int l = 0; l < codebook.num_levels(); ++l) {
            const Vec& cw = codebook.levels[l].codewords[sids[i].tokens[l]];
            for (size_t j = 0; j < residual.size(); ++j) residual[j] -= cw[j];
            trace.residuals[i].push_back(residual);
        }
    }
    return trace;
}

}  // namespace semid
