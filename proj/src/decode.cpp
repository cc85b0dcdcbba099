#include "semid/decode.hpp"

#include <algorithm>

#include "forward.hpp"
#include "semid/error.hpp"

namespace semid {

size_t SidTrie::leaf_count() const {
    size_t n = 0;
    for (const Node& node : nodes)
        if (node.item_id >= 0) ++n;
    return n;
}

SidTrie build_sid_trie(const std::vector<SemanticId>& sids, const Codebook& codebook) {
    SidTrie trie;
    trie.depth = codebook.num_levels() + 1;
    trie.nodes.push_back(SidTrie::Node{});
    for (size_t i = 0; i < sids.size(); ++i) {
        const std::vector<int> path = flatten({sids[i]}, codebook);
        int node = 0;
        for (int tok : path) {
            auto& children = trie.nodes[node].children;
            auto it = std::lower_bound(
                children.begin(), children.end(), tok,
                [](const std::pair<int, int>& c, int t) { return c.first < t; });
            if (it == children.end() || it->first != tok) {
                const int fresh = static_cast<int>(trie.nodes.size());
                it = trie.nodes[node].children.insert(it, {tok, fresh});
                trie.nodes.push_back(SidTrie::Node{});
            }
            node = it->second;
        }
        if (trie.nodes[node].item_id >= 0)
            throw InvalidArgument("build_sid_trie: duplicate SID for items " +
                                  std::to_string(trie.nodes[node].item_id) + " and " +
                                  std::to_string(i));
        trie.nodes[node].item_id = static_cast<int64_t>(i);
    }
    return trie;
}

namespace {

struct Beam {
    int node = 0;
    double score = 0.0;
    kern::DecoderState state;
    Vec logprobs;
};

}  // namespace

std::vector<Recommendation> recommend_topk(const ModelParams& model,
                                           const std::vector<int>& context, const SidTrie& trie,
                                           int k, int beam_width) {
    if (k < 0) throw InvalidArgument("recommend_topk: k must be >= 0");
    if (k == 0) return {};
    if (beam_width < k)
        throw InvalidArgument("beam-too-small: beam_width " + std::to_string(beam_width) +
                              " < k " + std::to_string(k));
    if (context.empty()) throw InvalidArgument("recommend_topk: empty context");
    if (trie.empty()) throw InvalidArgument("recommend_topk: empty trie");

    std::vector<Beam> beams;
    {
        Beam root{0, 0.0, kern::DecoderState(model), {}};
        for (int tok : context) root.state.append(tok);
        root.logprobs = root.state.logprobs();
        beams.push_back(std::move(root));
    }

    for (int step = 0; step < trie.depth; ++step) {
        // Candidates enumerated beam-major then child-major; stable sort keeps
        // that order among equal scores, so expansion is deterministic.
        struct Cand {
            int beam = 0;
            int token = 0;
            int node = 0;
            double score = 0.0;
        };
        std::vector<Cand> cands;
        for (size_t b = 0; b < beams.size(); ++b)
            for (const auto& [tok, child] : trie.nodes[beams[b].node].children)
                cands.push_back(Cand{static_cast<int>(b), tok, child,
                                     beams[b].score + beams[b].logprobs[tok]});
        if (cands.empty()) throw InvalidArgument("recommend_topk: trie path dead-ends");
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& a, const Cand& b) { return a.score > b.score; });
        if (static_cast<int>(cands.size()) > beam_width) cands.resize(beam_width);

        const bool last = step + 1 == trie.depth;
        std::vector<Beam> next;
        next.reserve(cands.size());
        for (const Cand& c : cands) {
            Beam nb{c.node, c.score, beams[c.beam].state, {}};
            if (!last) {
                nb.state.append(c.token);
                nb.logprobs = nb.state.logprobs();
            }
            next.push_back(std::move(nb));
        }
        beams = std::move(next);
    }

    std::vector<Recommendation> recs;
    recs.reserve(beams.size());
    for (const Beam& b : beams) {
        if (trie.nodes[b.node].item_id < 0)
            throw InvalidArgument("recommend_topk: trie leaf without an item");
        recs.push_back(Recommendation{trie.nodes[b.node].item_id, b.score});
    }
    std::sort(recs.begin(), recs.end(), [](const Recommendation& a, const Recommendation& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });
    if (static_cast<int>(recs.size()) > k) recs.resize(k);
    return recs;
}

double score_continuation(const ModelParams& model, const std::vector<int>& context,
                          const std::vector<int>& continuation) {
    if (context.empty()) throw InvalidArgument("score_continuation: empty context");
    if (continuation.empty()) throw InvalidArgument("score_continuation: empty continuation");
    kern::DecoderState state(model);
    for (int tok : context) state.append(tok);
    double score = 0.0;
    for (size_t j = 0; j < continuation.size(); ++j) {
        const Vec lp = state.logprobs();
        const int tok = continuation[j];
        if (tok < 0 || tok >= model.vocab_size)
            throw InvalidArgument("score_continuation: token out of range");
        score += lp[tok];
        if (j + 1 < continuation.size()) state.append(tok);
    }
    return score;
}

}  // namespace semid
