#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "semid/decode.hpp"
#include "semid/error.hpp"
#include "semid/model.hpp"
#include "semid/tokenizer.hpp"

using namespace semid;

namespace {

// Small fitted catalog: 12 items, 2 levels, K=3 -> vocab 2 + 6 + n_suffix.
struct Fixture {
    ItemCatalog catalog;
    RqFitResult fit;
    ModelParams model;

    Fixture() {
        catalog = generate_catalog(12, 3, 4, 0.3, 51);
        fit = rq_fit(catalog, 2, 3, 50, 52);
        model = init_model(fit.codebook.vocab_size, 8, 1, 2, 53, 16);
    }
};

std::vector<int> item_tokens(const Fixture& fx, int64_t item) {
    return flatten({fx.fit.sids[static_cast<size_t>(item)]}, fx.fit.codebook);
}

}  // namespace

TEST_CASE("the SID trie has one leaf per item") {
    Fixture fx;
    const SidTrie trie = build_sid_trie(fx.fit.sids, fx.fit.codebook);
    CHECK(trie.leaf_count() == 12);
    CHECK(trie.depth == 3);  // two levels plus suffix
    CHECK(!trie.empty());

    std::vector<SemanticId> dup = fx.fit.sids;
    dup[3] = dup[7];
    CHECK_THROWS_WITH_AS(build_sid_trie(dup, fx.fit.codebook), doctest::Contains("duplicate"),
                         InvalidArgument);
}

TEST_CASE("k zero returns nothing and undersized beams are rejected") {
    Fixture fx;
    const SidTrie trie = build_sid_trie(fx.fit.sids, fx.fit.codebook);
    const std::vector<int> context = {Codebook::kBosId};
    CHECK(recommend_topk(fx.model, context, trie, 0, 4).empty());
    CHECK_THROWS_WITH_AS(recommend_topk(fx.model, context, trie, 5, 4),
                         doctest::Contains("beam-too-small"), InvalidArgument);
    CHECK_THROWS_AS(recommend_topk(fx.model, context, trie, -1, 4), InvalidArgument);
    CHECK_THROWS_AS(recommend_topk(fx.model, {}, trie, 2, 4), InvalidArgument);
}

TEST_CASE("a full-width beam reproduces exhaustive scoring exactly") {
    Fixture fx;
    const SidTrie trie = build_sid_trie(fx.fit.sids, fx.fit.codebook);
    const std::vector<int> context = {Codebook::kBosId, item_tokens(fx, 4)[0],
                                      item_tokens(fx, 4)[1], item_tokens(fx, 4)[2]};

    std::vector<Recommendation> exhaustive;
    for (int64_t item = 0; item < 12; ++item)
        exhaustive.push_back({item, score_continuation(fx.model, context, item_tokens(fx, item))});
    std::stable_sort(exhaustive.begin(), exhaustive.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });

    const std::vector<Recommendation> beamed =
        recommend_topk(fx.model, context, trie, 12, 64);
    REQUIRE(beamed.size() == 12);
    for (size_t i = 0; i < 12; ++i) {
        CHECK(beamed[i].item_id == exhaustive[i].item_id);
        CHECK(beamed[i].score == exhaustive[i].score);  // shared kernels, bitwise
    }

    // top-k is a prefix of the full ranking
    const std::vector<Recommendation> top3 = recommend_topk(fx.model, context, trie, 3, 64);
    REQUIRE(top3.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(top3[i].item_id == beamed[i].item_id);
}

TEST_CASE("exact score ties rank by item id") {
    Fixture fx;
    // All-zero parameters: uniform distributions everywhere, so every SID path
    // of equal length scores identically.
    ModelParams zero = zeros_like(fx.model);
    const SidTrie trie = build_sid_trie(fx.fit.sids, fx.fit.codebook);
    const std::vector<Recommendation> recs =
        recommend_topk(zero, {Codebook::kBosId}, trie, 12, 32);
    REQUIRE(recs.size() == 12);
    for (size_t i = 0; i < 12; ++i) CHECK(recs[i].item_id == static_cast<int64_t>(i));
    for (size_t i = 1; i < 12; ++i) CHECK(recs[i].score == recs[0].score);
}

TEST_CASE("score_continuation equals the stepwise log-probability sum") {
    Fixture fx;
    const std::vector<int> context = {Codebook::kBosId, item_tokens(fx, 2)[0]};
    const std::vector<int> continuation = item_tokens(fx, 9);

    double stepwise = 0.0;
    std::vector<int> prefix = context;
    for (int tok : continuation) {
        stepwise += next_token_logprobs(fx.model, prefix)[tok];
        prefix.push_back(tok);
    }
    CHECK(score_continuation(fx.model, context, continuation) == stepwise);

    CHECK_THROWS_AS(score_continuation(fx.model, {}, continuation), InvalidArgument);
    CHECK_THROWS_AS(score_continuation(fx.model, context, {}), InvalidArgument);
    CHECK_THROWS_AS(score_continuation(fx.model, context, {9999}), InvalidArgument);
}

TEST_CASE("retired tokens never appear on recommended paths") {
    Fixture fx;
    // Retire item 0's level-0 token slot and drop its SIDs from the trie, as a
    // rebalance would; surviving recommendations must avoid the retired flat id.
    const int retired_token = fx.fit.sids[0].tokens[0];
    const int retired_flat = fx.fit.codebook.flat_of(0, retired_token);
    Codebook cb = fx.fit.codebook;
    cb.levels[0].retired[retired_token] = 1;
    std::vector<SemanticId> kept_sids;
    std::vector<int64_t> kept_items;
    for (size_t i = 0; i < fx.fit.sids.size(); ++i)
        if (fx.fit.sids[i].tokens[0] != retired_token) {
            kept_sids.push_back(fx.fit.sids[i]);
            kept_items.push_back(static_cast<int64_t>(i));
        }
    REQUIRE(kept_sids.size() >= 2);

    // trie items index into the kept list
    std::vector<SemanticId> reindexed = kept_sids;
    const SidTrie trie = build_sid_trie(reindexed, cb);
    ModelParams model = fx.model;
    model.retired[retired_flat] = 1;
    const std::vector<Recommendation> recs = recommend_topk(
        model, {Codebook::kBosId}, trie, static_cast<int>(kept_sids.size()),
        static_cast<int>(kept_sids.size()) * 4);
    REQUIRE(recs.size() == kept_sids.size());
    for (const Recommendation& r : recs) {
        const std::vector<int> toks =
            flatten({kept_sids[static_cast<size_t>(r.item_id)]}, cb);
        for (int t : toks) CHECK(t != retired_flat);
        CHECK(std::isfinite(r.score));
    }
}
