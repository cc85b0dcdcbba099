#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "semid/dataset.hpp"
#include "semid/error.hpp"
#include "semid/kmeans.hpp"
#include "semid/tokenizer.hpp"

using namespace semid;

namespace {

// Exhaustive nearest-active-codeword scan, lowest index on ties.
int nearest_scan(const Vec& r, const LevelCodebook& level) {
    int best = -1;
    double best_d2 = 0.0;
    for (int t = 0; t < level.size(); ++t) {
        if (level.retired[t]) continue;
        const double d2 = squared_distance(r, level.codewords[t]);
        if (best < 0 || d2 < best_d2) {
            best = t;
            best_d2 = d2;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("rq_fit tokens match an exhaustive nearest-codeword scan") {
    const ItemCatalog cat = generate_catalog(80, 4, 6, 0.2, 3);
    const RqFitResult fit = rq_fit(cat, 3, 8, 50, 1);
    REQUIRE(fit.sids.size() == 80);
    for (size_t i = 0; i < cat.size(); ++i) {
        for (int l = 0; l < 3; ++l) {
            const int expect = nearest_scan(fit.trace.residuals[i][l], fit.codebook.levels[l]);
            CHECK(fit.sids[i].tokens[l] == expect);
        }
    }
}

TEST_CASE("residual identities hold bitwise") {
    const ItemCatalog cat = generate_catalog(60, 3, 5, 0.25, 9);
    const RqFitResult fit = rq_fit(cat, 3, 6, 50, 2);
    for (size_t i = 0; i < cat.size(); ++i) {
        CHECK(fit.trace.residuals[i][0] == cat.items[i].embedding);
        for (int l = 0; l < 3; ++l) {
            const Vec& cw = fit.codebook.levels[l].codewords[fit.sids[i].tokens[l]];
            for (int j = 0; j < 3; ++j) {
                const double expect = fit.trace.residuals[i][l][j] - cw[j];
                CHECK(fit.trace.residuals[i][l + 1][j] == expect);
            }
        }
    }
}

TEST_CASE("items equal to K distinct points quantize exactly") {
    ItemCatalog cat;
    const std::vector<Vec> pts{{0.0, 0.0}, {5.0, 0.0}, {0.0, 5.0}, {5.0, 5.0}};
    for (int i = 0; i < 20; ++i) cat.items.push_back({i, pts[i % 4], 0});
    const RqFitResult fit = rq_fit(cat, 2, 4, 50, 4);
    std::set<Vec> codewords(fit.codebook.levels[0].codewords.begin(),
                            fit.codebook.levels[0].codewords.end());
    CHECK(codewords == std::set<Vec>(pts.begin(), pts.end()));
    for (size_t i = 0; i < cat.size(); ++i)
        CHECK(fit.trace.residuals[i][1] == Vec{0.0, 0.0});
}

TEST_CASE("K=1 gives everyone token 0 and the mean codeword") {
    const ItemCatalog cat = generate_catalog(30, 2, 3, 0.2, 6);
    const RqFitResult fit = rq_fit(cat, 2, 1, 50, 1);
    Vec mean(2, 0.0);
    for (const Item& it : cat.items)
        for (int j = 0; j < 2; ++j) mean[j] += it.embedding[j] / 30.0;
    for (const SemanticId& s : fit.sids) {
        CHECK(s.tokens[0] == 0);
        CHECK(s.tokens[1] == 0);
    }
    CHECK(fit.codebook.levels[0].codewords[0][0] == doctest::Approx(mean[0]).epsilon(1e-12));
}

TEST_CASE("more levels reduce reconstruction error") {
    const ItemCatalog cat = generate_catalog(100, 4, 8, 0.3, 8);
    auto total_err = [&](const RqFitResult& fit, int levels) {
        double e = 0.0;
        for (size_t i = 0; i < cat.size(); ++i)
            e += squared_distance(fit.trace.residuals[i][levels], Vec(4, 0.0));
        return e;
    };
    const RqFitResult deep = rq_fit(cat, 3, 8, 50, 1);
    const RqFitResult shallow = rq_fit(cat, 2, 8, 50, 1);
    CHECK(total_err(deep, 3) < total_err(shallow, 2));
}

TEST_CASE("disambiguate assigns suffixes in item order") {
    std::vector<SemanticId> sids(5);
    sids[0].tokens = {1, 2};
    sids[1].tokens = {1, 2};
    sids[2].tokens = {0, 0};
    sids[3].tokens = {1, 2};
    sids[4].tokens = {0, 1};
    disambiguate(sids);
    CHECK(sids[0].suffix == 0);
    CHECK(sids[1].suffix == 1);
    CHECK(sids[2].suffix == 0);
    CHECK(sids[3].suffix == 2);
    CHECK(sids[4].suffix == 0);
}

TEST_CASE("rq_fit output is deterministic and unique per item") {
    const ItemCatalog cat = generate_catalog(120, 4, 6, 0.15, 12);
    const RqFitResult a = rq_fit(cat, 3, 8, 50, 5);
    const RqFitResult b = rq_fit(cat, 3, 8, 50, 5);
    std::set<std::pair<std::vector<int>, int>> seen;
    for (size_t i = 0; i < a.sids.size(); ++i) {
        CHECK(a.sids[i].tokens == b.sids[i].tokens);
        CHECK(a.sids[i].suffix == b.sids[i].suffix);
        seen.insert({a.sids[i].tokens, a.sids[i].suffix});
    }
    CHECK(seen.size() == a.sids.size());  // full SIDs are unique
}

TEST_CASE("flatten and unflatten are inverse and ranges are disjoint") {
    const ItemCatalog cat = generate_catalog(50, 3, 4, 0.2, 3);
    const RqFitResult fit = rq_fit(cat, 3, 5, 50, 2);
    const Codebook& cb = fit.codebook;

    std::vector<SemanticId> history{fit.sids[0], fit.sids[7], fit.sids[31]};
    const std::vector<int> flat = flatten(history, cb);
    REQUIRE(flat.size() == 3 * 4);
    const std::vector<SemanticId> back = unflatten(flat, cb);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(back[i] == history[i]);

    std::set<int> all_ids{Codebook::kPadId, Codebook::kBosId};
    for (const LevelCodebook& level : cb.levels)
        for (int id : level.flat_ids) {
            CHECK(all_ids.count(id) == 0);
            all_ids.insert(id);
        }
    for (int s = 0; s < cb.n_suffix; ++s) {
        CHECK(all_ids.count(cb.suffix_flat(s)) == 0);
        all_ids.insert(cb.suffix_flat(s));
    }
    CHECK(static_cast<int>(all_ids.size()) == cb.vocab_size);
}

TEST_CASE("assign_sid reproduces fit tokens for training items") {
    const ItemCatalog cat = generate_catalog(60, 3, 5, 0.2, 7);
    const RqFitResult fit = rq_fit(cat, 3, 6, 50, 3);
    for (size_t i = 0; i < cat.size(); ++i) {
        const SemanticId s = assign_sid(cat.items[i].embedding, fit.codebook);
        CHECK(s.tokens == fit.sids[i].tokens);
        CHECK(s.suffix == -1);
    }
    CHECK_THROWS_AS(assign_sid(Vec{1.0}, fit.codebook), InvalidArgument);
}

TEST_CASE("codebook json round-trip is bitwise") {
    const ItemCatalog cat = generate_catalog(40, 3, 4, 0.2, 11);
    const RqFitResult fit = rq_fit(cat, 2, 5, 50, 6);
    const std::string path = "/tmp/semid_codebook_rt.json";
    save_codebook_json(fit.codebook, path);
    const Codebook back = load_codebook_json(path);
    REQUIRE(back.num_levels() == fit.codebook.num_levels());
    for (int l = 0; l < back.num_levels(); ++l) {
        CHECK(back.levels[l].codewords == fit.codebook.levels[l].codewords);
        CHECK(back.levels[l].flat_ids == fit.codebook.levels[l].flat_ids);
        CHECK(back.levels[l].retired == fit.codebook.levels[l].retired);
    }
    CHECK(back.n_suffix == fit.codebook.n_suffix);
    CHECK(back.suffix_base == fit.codebook.suffix_base);
    CHECK(back.vocab_size == fit.codebook.vocab_size);
    std::remove(path.c_str());
}

TEST_CASE("sids jsonl round-trip, ordering enforced") {
    const ItemCatalog cat = generate_catalog(30, 2, 3, 0.2, 13);
    const RqFitResult fit = rq_fit(cat, 2, 4, 50, 1);
    const std::string path = "/tmp/semid_sids_rt.jsonl";
    save_sids_jsonl(fit.sids, path);
    const std::vector<SemanticId> back = load_sids_jsonl(path);
    REQUIRE(back.size() == fit.sids.size());
    for (size_t i = 0; i < back.size(); ++i) CHECK(back[i] == fit.sids[i]);

    std::ofstream f(path);
    f << R"({"item_id":1,"tokens":[0,0],"suffix":0})" << "\n";
    f.close();
    CHECK_THROWS_AS(load_sids_jsonl(path), ParseError);  // must start at item 0
    std::remove(path.c_str());
}

TEST_CASE("residual_trace_for reproduces the fit trace bitwise") {
    const ItemCatalog cat = generate_catalog(50, 3, 5, 0.2, 17);
    const RqFitResult fit = rq_fit(cat, 3, 6, 50, 9);
    const ResidualTrace re = residual_trace_for(cat, fit.codebook, fit.sids);
    REQUIRE(re.residuals.size() == fit.trace.residuals.size());
    for (size_t i = 0; i < re.residuals.size(); ++i)
        CHECK(re.residuals[i] == fit.trace.residuals[i]);
}

TEST_CASE("rq_fit validates arguments") {
    const ItemCatalog cat = generate_catalog(10, 2, 2, 0.2, 1);
    CHECK_THROWS_AS(rq_fit(cat, 1, 4, 50, 1), InvalidArgument);   // L >= 2
    CHECK_THROWS_AS(rq_fit(cat, 2, 11, 50, 1), InvalidArgument);  // K <= n
    CHECK_THROWS_AS(rq_fit(ItemCatalog{}, 2, 1, 50, 1), InvalidArgument);
}
