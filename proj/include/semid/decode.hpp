#pragma once

#include <cstdint>
#include <vector>

#include "semid/model.hpp"
#include "semid/tokenizer.hpp"

namespace semid {

// Prefix tree over the flat token sequences of valid SIDs; leaves biject with
// items. Children are kept sorted by token id.
struct SidTrie {
    struct Node {
        std::vector<std::pair<int, int>> children;  // (flat token, node index)
        int64_t item_id = -1;                       // set on leaves
    };
    std::vector<Node> nodes;
    int depth = 0;  // L + 1 (levels plus suffix)

    bool empty() const { return nodes.size() <= 1; }
    size_t leaf_count() const;
};

SidTrie build_sid_trie(const std::vector<SemanticId>& sids, const Codebook& codebook);

struct Recommendation {
    int64_t item_id = -1;
    double score = 0.0;  // sum of token log-probabilities
};

// Beam search over trie-constrained token paths. Token probabilities come
// from the full unmasked-vocabulary softmax; the trie restricts candidate
// selection only, so with beam_width >= |items| the ranking equals exhaustive
// scoring of every valid SID. Final ties break by item_id.
std::vector<Recommendation> recommend_topk(const ModelParams& model,
                                           const std::vector<int>& context, const SidTrie& trie,
                                           int k, int beam_width);

// Sum of next-token log-probabilities of `continuation` given `context`.
// Shares kernels with recommend_topk, so scores match bitwise.
double score_continuation(const ModelParams& model, const std::vector<int>& context,
                          const std::vector<int>& continuation);

}  // namespace semid
