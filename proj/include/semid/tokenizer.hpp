#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semid/dataset.hpp"

namespace semid {

// One quantization level. Tokens keep their slot forever: a split retires the
// old slot (masked from assignment and decoding) and appends replacements, so
// flat vocabulary ids stay valid across rebalances.
struct LevelCodebook {
    std::vector<Vec> codewords;
    std::vector<int> flat_ids;       // flat vocabulary id per token slot
    std::vector<uint8_t> retired;    // 1 = retired slot

    int size() const { return static_cast<int>(codewords.size()); }
    int active_count() const;
};

struct Codebook {
    static constexpr int kPadId = 0;
    static constexpr int kBosId = 1;

    std::vector<LevelCodebook> levels;
    int n_suffix = 0;      // disambiguation-suffix slots allocated at fit time
    int suffix_base = 0;   // flat id of suffix value 0
    int vocab_size = 0;    // pad + bos + level tokens + suffix tokens

    int num_levels() const { return static_cast<int>(levels.size()); }
    int dim() const;
    int flat_of(int level, int token) const { return levels[level].flat_ids[token]; }
    int suffix_flat(int suffix) const { return suffix_base + suffix; }
    // Mask over flat ids; retired slots are excluded from decoding.
    std::vector<uint8_t> retired_mask() const;
    void validate() const;
};

// L-tuple of per-level token indices plus a disambiguation suffix.
// suffix = -1 means "not yet disambiguated".
struct SemanticId {
    std::vector<int> tokens;
    int suffix = -1;

    bool operator==(const SemanticId& o) const { return tokens == o.tokens && suffix == o.suffix; }
};

// Per item, residuals[l] is the level-(l+1) input residual; residuals[0] is
// the raw embedding and residuals[L] the final quantization error.
struct ResidualTrace {
    std::vector<std::vector<Vec>> residuals;
};

struct RqFitResult {
    Codebook codebook;
    std::vector<SemanticId> sids;   // indexed by item_id, suffixes assigned
    ResidualTrace trace;
};

// Greedy level-by-level RQ-KMeans: level-l codewords are K-means centroids of
// the level-l residual set, tokens are nearest-codeword assignments, and the
// residual update is r^{l+1} = r^l - c_{s^l}.
RqFitResult rq_fit(const ItemCatalog& catalog, int n_levels, int k, int max_iters, uint64_t seed);

// Greedy nearest active codeword per level with residual update. Ties break
// to the lowest token index. Returned suffix is unset (-1).
SemanticId assign_sid(const Vec& embedding, const Codebook& codebook);

// Items sharing an identical token tuple receive suffixes 0,1,2,... in
// ascending item_id order; unique tuples get suffix 0.
void disambiguate(std::vector<SemanticId>& sids);

// Flat token sequence [s^1..s^L, suffix] per item, using the codebook's
// disjoint per-level vocabulary ranges.
std::vector<int> flatten(const std::vector<SemanticId>& history, const Codebook& codebook);
std::vector<SemanticId> unflatten(const std::vector<int>& tokens, const Codebook& codebook);

void save_codebook_json(const Codebook& codebook, const std::string& path);
Codebook load_codebook_json(const std::string& path);
void save_sids_jsonl(const std::vector<SemanticId>& sids, const std::string& path);
std::vector<SemanticId> load_sids_jsonl(const std::string& path);

// Exact residual recomputation for a fitted (possibly rebalanced) codebook and
// its SID table; reproduces the trace rq_fit/apply_split would have produced.
ResidualTrace residual_trace_for(const ItemCatalog& catalog, const Codebook& codebook,
                                 const std::vector<SemanticId>& sids);

}  // namespace semid
