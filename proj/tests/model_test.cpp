#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "semid/error.hpp"
#include "semid/model.hpp"

using namespace semid;

namespace {

ModelParams tiny_model(uint64_t seed = 7) {
    return init_model(14, 8, 2, 2, seed, 8);
}

std::vector<TrainExample> tiny_batch() {
    std::vector<TrainExample> batch(3);
    batch[0] = {{1, 2, 5, 9}, {3, 7, 12}, 0};
    batch[1] = {{1, 4}, {6, 10, 13}, 1};
    batch[2] = {{1, 11, 2}, {5, 8}, 2};
    return batch;
}

// A handful of probe entries spread across a block.
std::vector<size_t> probes(size_t n) {
    std::vector<size_t> idx = {0, n / 3, n / 2, (2 * n) / 3, n - 1};
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

// Symmetric relative error with a floor so zero-gradient entries compare
// against finite-difference noise honestly instead of dividing by ~0.
double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max(std::abs(analytic) + std::abs(fd), 1e-6);
}

}  // namespace

TEST_CASE("init is shaped, deterministic, and counted") {
    ModelParams m = init_model(6, 4, 1, 2, 3, 5);
    CHECK(m.embed.size() == 24);
    CHECK(m.pos.size() == 20);
    CHECK(m.layers.size() == 1);
    CHECK(m.w_out.size() == 24);
    CHECK(m.b_out.size() == 6);
    CHECK(m.retired == std::vector<uint8_t>(6, 0));

    // embed 24 + pos 20 + layer (8 ln + 80 attn + 8 ln + 80 fc + 68 proj) + 8 lnf + 30 out
    CHECK(m.param_count() == 326);
    int64_t total = 0;
    for (const auto& [name, block] : param_blocks(m)) total += static_cast<int64_t>(block->size());
    CHECK(total == m.param_count());

    ModelParams again = init_model(6, 4, 1, 2, 3, 5);
    auto a = param_blocks(m);
    auto b = param_blocks(again);
    for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);

    ModelParams other = init_model(6, 4, 1, 2, 4, 5);
    CHECK(m.embed != other.embed);

    CHECK_THROWS_AS(init_model(6, 5, 1, 2, 3), InvalidArgument);
}

TEST_CASE("analytic gradients match central differences") {
    ModelParams m = tiny_model();
    const std::vector<TrainExample> batch = tiny_batch();
    SiblingGroups groups;
    groups.groups = {{2, 3, 4}, {5, 6}};
    const double gamma = 0.3;
    const std::vector<double> weights = {1.0, 0.5, 1.5};
    const double h = 1e-4;

    LossResult base = total_loss(m, batch, gamma, groups, weights);
    auto grad_blocks = param_blocks(base.grads);
    auto model_blocks = param_blocks(m);
    for (size_t bi = 0; bi < model_blocks.size(); ++bi) {
        Vec& vec = *model_blocks[bi].second;
        const Vec& grad = *grad_blocks[bi].second;
        for (size_t i : probes(vec.size())) {
            const double saved = vec[i];
            vec[i] = saved + h;
            const double up = total_loss(m, batch, gamma, groups, weights).loss;
            vec[i] = saved - h;
            const double down = total_loss(m, batch, gamma, groups, weights).loss;
            vec[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            INFO(model_blocks[bi].first, "[", i, "] analytic=", grad[i], " fd=", fd);
            CHECK(rel_err(grad[i], fd) <= 1e-4);
        }
    }
}

TEST_CASE("rec_loss gradients pass finite differences on their own") {
    ModelParams m = tiny_model(21);
    const std::vector<TrainExample> batch = tiny_batch();
    const double h = 1e-4;
    LossResult base = rec_loss(m, batch);
    auto grad_blocks = param_blocks(base.grads);
    auto model_blocks = param_blocks(m);
    for (size_t bi = 0; bi < model_blocks.size(); ++bi) {
        Vec& vec = *model_blocks[bi].second;
        const Vec& grad = *grad_blocks[bi].second;
        for (size_t i : probes(vec.size())) {
            const double saved = vec[i];
            vec[i] = saved + h;
            const double up = rec_loss(m, batch).loss;
            vec[i] = saved - h;
            const double down = rec_loss(m, batch).loss;
            vec[i] = saved;
            INFO(model_blocks[bi].first, "[", i, "]");
            CHECK(rel_err(grad[i], (up - down) / (2.0 * h)) <= 1e-4);
        }
    }
}

TEST_CASE("tree regularizer matches the hand example") {
    ModelParams m = init_model(6, 2, 1, 1, 3, 4);
    m.embed[2 * 2 + 0] = 0.0;
    m.embed[2 * 2 + 1] = 0.0;
    m.embed[3 * 2 + 0] = 2.0;
    m.embed[3 * 2 + 1] = 0.0;
    SiblingGroups groups;
    groups.groups = {{2, 3}};
    const TreeRegResult reg = tree_regularizer(m, groups);
    CHECK(reg.value == 1.0);
    CHECK(reg.embed_grad[2 * 2 + 0] == -1.0);
    CHECK(reg.embed_grad[2 * 2 + 1] == 0.0);
    CHECK(reg.embed_grad[3 * 2 + 0] == 1.0);
    CHECK(reg.embed_grad[3 * 2 + 1] == 0.0);
    // untouched rows carry zero gradient
    CHECK(reg.embed_grad[0] == 0.0);
    CHECK(reg.embed_grad[5 * 2 + 1] == 0.0);
}

TEST_CASE("tree regularizer gradient passes finite differences") {
    ModelParams m = tiny_model(5);
    SiblingGroups groups;
    groups.groups = {{2, 3, 4, 5}, {9, 10}, {12, 13}};
    const TreeRegResult reg = tree_regularizer(m, groups);
    const double h = 1e-4;
    for (size_t i : {size_t{16}, size_t{25}, size_t{40}, size_t{77}, size_t{100}, size_t{111}}) {
        const double saved = m.embed[i];
        m.embed[i] = saved + h;
        const double up = tree_regularizer(m, groups).value;
        m.embed[i] = saved - h;
        const double down = tree_regularizer(m, groups).value;
        m.embed[i] = saved;
        CHECK(rel_err(reg.embed_grad[i], (up - down) / (2.0 * h)) <= 1e-4);
    }
    CHECK_THROWS_AS(tree_regularizer(m, SiblingGroups{{{0, 99}}}), InvalidArgument);
}

TEST_CASE("gamma zero recovers rec_loss bitwise") {
    ModelParams m = tiny_model(9);
    const std::vector<TrainExample> batch = tiny_batch();
    SiblingGroups groups;
    groups.groups = {{2, 3, 4}};
    LossResult with_reg = total_loss(m, batch, 0.0, groups);
    LossResult plain = rec_loss(m, batch);
    CHECK(with_reg.loss == plain.loss);
    auto a = param_blocks(with_reg.grads);
    auto b = param_blocks(plain.grads);
    for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
}

TEST_CASE("example weights scale contributions") {
    ModelParams m = tiny_model(13);
    std::vector<TrainExample> batch = tiny_batch();
    const std::vector<TrainExample> solo = {batch[0]};
    const double weighted = rec_loss(m, {batch[0], batch[1]}, {2.0, 0.0}).loss;
    CHECK(weighted == rec_loss(m, solo).loss);

    const double la = rec_loss(m, {batch[0]}).loss;
    const double lb = rec_loss(m, {batch[1]}).loss;
    const double both = rec_loss(m, {batch[0], batch[1]}).loss;
    CHECK(both == doctest::Approx((la + lb) / 2.0).epsilon(1e-14));

    CHECK_THROWS_AS(rec_loss(m, batch, {1.0, 2.0}), InvalidArgument);
    CHECK_THROWS_AS(rec_loss(m, {}), InvalidArgument);
}

TEST_CASE("full-batch training descends") {
    ModelParams m = tiny_model(17);
    std::vector<TrainExample> examples;
    for (int r = 0; r < 4; ++r)
        for (TrainExample ex : tiny_batch()) {
            std::rotate(ex.context.begin() + 1, ex.context.begin() + 1 + (r % 2),
                        ex.context.end());
            examples.push_back(ex);
        }
    SiblingGroups groups;
    groups.groups = {{2, 3, 4}, {5, 6}};
    TrainConfig cfg;
    cfg.gamma = 0.1;
    cfg.learning_rate = 0.02;
    cfg.epochs = 5;
    cfg.batch_size = static_cast<int>(examples.size());
    cfg.seed = 4;
    const std::vector<double> losses = train(m, examples, cfg, groups);
    REQUIRE(losses.size() == 5);
    for (int e = 0; e < 3; ++e) CHECK(losses[e + 1] < losses[e]);
    CHECK(losses.back() < losses.front());
}

TEST_CASE("training reports divergence with its position") {
    ModelParams m = tiny_model(19);
    const std::vector<TrainExample> examples = tiny_batch();
    TrainConfig cfg;
    // LayerNorm keeps merely-huge parameters producing finite losses, so the
    // step has to overflow the weights outright.
    cfg.learning_rate = 1e200;
    cfg.clip_norm = 0.0;
    cfg.epochs = 4;
    cfg.batch_size = 3;
    SiblingGroups groups;
    CHECK_THROWS_WITH_AS(train(m, examples, cfg, groups), doctest::Contains("epoch"),
                         NumericDivergence);
}

TEST_CASE("zero-beta reweighting trains bitwise like the baseline") {
    const std::vector<TrainExample> examples = tiny_batch();
    FrequencyTable freq;
    freq.freq = {50, 3, 12};
    SiblingGroups groups;
    groups.groups = {{2, 3}};
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.learning_rate = 0.05;
    cfg.seed = 23;
    cfg.reweight_beta = 0.0;

    ModelParams baseline = tiny_model(29);
    ModelParams reweighted = tiny_model(29);
    const std::vector<double> lb = train(baseline, examples, cfg, groups, nullptr);
    const std::vector<double> lr = train(reweighted, examples, cfg, groups, &freq);
    CHECK(lb == lr);
    auto a = param_blocks(baseline);
    auto b = param_blocks(reweighted);
    for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
}

TEST_CASE("nonzero beta changes the trained model") {
    const std::vector<TrainExample> examples = tiny_batch();
    FrequencyTable freq;
    freq.freq = {50, 3, 12};
    SiblingGroups groups;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 3;
    cfg.seed = 23;

    ModelParams baseline = tiny_model(29);
    ModelParams reweighted = tiny_model(29);
    cfg.reweight_beta = 0.0;
    train(baseline, examples, cfg, groups, nullptr);
    cfg.reweight_beta = 1.0;
    train(reweighted, examples, cfg, groups, &freq);
    CHECK(baseline.embed != reweighted.embed);
}

TEST_CASE("extend_vocab copies parents and retires them") {
    ModelParams m = init_model(10, 4, 1, 2, 31, 6);
    const ModelParams before = m;
    extend_vocab(m, {{10, 3}, {11, 3}, {12, 7}}, 0.0, 5);

    CHECK(m.vocab_size == 13);
    CHECK(m.embed.size() == 13 * 4);
    CHECK(m.b_out.size() == 13);
    CHECK(m.retired[3] == 1);
    CHECK(m.retired[7] == 1);
    for (int id : {10, 11, 12}) CHECK(m.retired[id] == 0);

    const auto embed_row = [&](const ModelParams& mm, int id, int i) {
        return mm.embed[static_cast<size_t>(id) * 4 + i];
    };
    const auto w_out_at = [&](const ModelParams& mm, int i, int v) {
        return mm.w_out[static_cast<size_t>(i) * mm.vocab_size + v];
    };
    for (int i = 0; i < 4; ++i) {
        CHECK(embed_row(m, 10, i) == embed_row(before, 3, i));
        CHECK(embed_row(m, 11, i) == embed_row(before, 3, i));
        CHECK(embed_row(m, 12, i) == embed_row(before, 7, i));
        CHECK(w_out_at(m, i, 10) == w_out_at(before, i, 3));
        CHECK(w_out_at(m, i, 12) == w_out_at(before, i, 7));
    }
    CHECK(m.b_out[10] == before.b_out[3]);
    CHECK(m.b_out[11] == before.b_out[3]);
    CHECK(m.b_out[12] == before.b_out[7]);

    // pre-existing rows untouched
    for (int v = 0; v < 10; ++v) {
        CHECK(m.b_out[v] == before.b_out[v]);
        for (int i = 0; i < 4; ++i) {
            CHECK(embed_row(m, v, i) == embed_row(before, v, i));
            CHECK(w_out_at(m, i, v) == w_out_at(before, i, v));
        }
    }

    CHECK_THROWS_WITH_AS(extend_vocab(m, {{99, 3}}, 0.0, 5), doctest::Contains("contiguous"),
                         InvalidArgument);
    CHECK_THROWS_AS(extend_vocab(m, {{13, 50}}, 0.0, 5), InvalidArgument);
}

TEST_CASE("extend_vocab default noise is a small perturbation") {
    ModelParams m = init_model(10, 4, 1, 2, 37, 6);
    const double rms = embed_rms(m);
    REQUIRE(rms > 0.0);
    const ModelParams before = m;
    extend_vocab(m, {{10, 2}}, -1.0, 11);
    double max_diff = 0.0;
    for (int i = 0; i < 4; ++i)
        max_diff = std::max(max_diff,
                            std::abs(m.embed[10 * 4 + i] - before.embed[2 * 4 + i]));
    CHECK(max_diff > 0.0);
    CHECK(max_diff < rms);  // default scale is 0.01 * rms
    CHECK(m.b_out[10] == before.b_out[2]);  // bias copies exactly even with noise

    // deterministic in seed
    ModelParams m2 = init_model(10, 4, 1, 2, 37, 6);
    extend_vocab(m2, {{10, 2}}, -1.0, 11);
    CHECK(m.embed == m2.embed);
    CHECK(m.w_out == m2.w_out);
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
    ModelParams m = init_model(9, 4, 1, 2, 11, 6);
    m.retired[4] = 1;
    const std::string path = "/tmp/semid_model_rt.bin";
    save_model(m, path);
    ModelParams back = load_model(path);
    CHECK(back.vocab_size == 9);
    CHECK(back.d_model == 4);
    CHECK(back.n_layers == 1);
    CHECK(back.n_heads == 2);
    CHECK(back.max_seq == 6);
    CHECK(back.retired == m.retired);
    auto a = param_blocks(m);
    auto b = param_blocks(back);
    for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    const std::string trunc_path = "/tmp/semid_model_trunc.bin";
    std::ofstream(trunc_path, std::ios::binary) << bytes.substr(0, bytes.size() * 4 / 5);
    CHECK_THROWS_WITH_AS(load_model(trunc_path), doctest::Contains("truncated"), ParseError);

    const std::string magic_path = "/tmp/semid_model_magic.bin";
    std::string garbled = bytes;
    garbled[0] = 'X';
    std::ofstream(magic_path, std::ios::binary) << garbled;
    CHECK_THROWS_WITH_AS(load_model(magic_path), doctest::Contains("not a model checkpoint"),
                         ParseError);

    const std::string extra_path = "/tmp/semid_model_extra.bin";
    std::ofstream(extra_path, std::ios::binary) << bytes << 'Z';
    CHECK_THROWS_WITH_AS(load_model(extra_path), doctest::Contains("trailing"), ParseError);

    CHECK_THROWS_AS(load_model("/tmp/semid_model_missing.bin"), IoError);
    for (const std::string& p : {path, trunc_path, magic_path, extra_path})
        std::remove(p.c_str());
}

TEST_CASE("next-token log-probabilities are a proper masked distribution") {
    ModelParams m = init_model(10, 4, 1, 2, 41, 6);
    m.retired[7] = 1;
    const Vec lp = next_token_logprobs(m, {1, 2, 3});
    REQUIRE(lp.size() == 10);
    CHECK(std::isinf(lp[7]));
    CHECK(lp[7] < 0.0);
    double mass = 0.0;
    for (int v = 0; v < 10; ++v)
        if (v != 7) mass += std::exp(lp[v]);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(next_token_logprobs(m, {}), InvalidArgument);
    // max_seq positions hold max_seq tokens; predicting after them is fine,
    // appending one more is not
    CHECK(next_token_logprobs(m, {1, 2, 3, 4, 5, 6}).size() == 10);
    CHECK_THROWS_WITH_AS(next_token_logprobs(m, {1, 2, 3, 4, 5, 6, 2}),
                         doctest::Contains("max_seq"), InvalidArgument);
}
