#include "semid/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "forward.hpp"
#include "semid/error.hpp"
#include "semid/log.hpp"
#include "semid/rng.hpp"

namespace semid {

using kern::DecoderState;
using kern::LayerTrace;
using kern::PositionTrace;

namespace {

void shape_model(ModelParams& m) {
    const int d = m.d_model;
    m.embed.assign(static_cast<size_t>(m.vocab_size) * d, 0.0);
    m.pos.assign(static_cast<size_t>(m.max_seq) * d, 0.0);
    m.layers.assign(m.n_layers, LayerParams{});
    for (LayerParams& lp : m.layers) {
        lp.ln1_g.assign(d, 0.0);
        lp.ln1_b.assign(d, 0.0);
        lp.attn.wq.assign(static_cast<size_t>(d) * d, 0.0);
        lp.attn.bq.assign(d, 0.0);
        lp.attn.wk.assign(static_cast<size_t>(d) * d, 0.0);
        lp.attn.bk.assign(d, 0.0);
        lp.attn.wv.assign(static_cast<size_t>(d) * d, 0.0);
        lp.attn.bv.assign(d, 0.0);
        lp.attn.wo.assign(static_cast<size_t>(d) * d, 0.0);
        lp.attn.bo.assign(d, 0.0);
        lp.ln2_g.assign(d, 0.0);
        lp.ln2_b.assign(d, 0.0);
        lp.w_fc.assign(static_cast<size_t>(d) * 4 * d, 0.0);
        lp.b_fc.assign(static_cast<size_t>(4) * d, 0.0);
        lp.w_proj.assign(static_cast<size_t>(4) * d * d, 0.0);
        lp.b_proj.assign(d, 0.0);
    }
    m.lnf_g.assign(d, 0.0);
    m.lnf_b.assign(d, 0.0);
    m.w_out.assign(static_cast<size_t>(d) * m.vocab_size, 0.0);
    m.b_out.assign(m.vocab_size, 0.0);
    m.retired.assign(m.vocab_size, 0);
}

void fill_normal(Vec& v, Rng& rng, double scale) {
    for (double& x : v) x = scale * rng.next_normal();
}

// dx for y = g * xhat + b given dy; accumulates dg, db.
void layernorm_backward(const Vec& dy, const Vec& xhat, double rstd, const Vec& g, Vec& dg,
                        Vec& db, Vec& dx) {
    const int d = static_cast<int>(dy.size());
    double mean1 = 0.0, mean2 = 0.0;
    dx.assign(d, 0.0);
    for (int i = 0; i < d; ++i) {
        const double dxhat = dy[i] * g[i];
        dg[i] += dy[i] * xhat[i];
        db[i] += dy[i];
        dx[i] = dxhat;
        mean1 += dxhat;
        mean2 += dxhat * xhat[i];
    }
    mean1 /= d;
    mean2 /= d;
    for (int i = 0; i < d; ++i) dx[i] = rstd * (dx[i] - mean1 - xhat[i] * mean2);
}

// dx and parameter grads for y = b + x W, W stored [in][out].
void linear_backward(const Vec& x, const Vec& w, const Vec& dy, int in, int out, Vec& dw, Vec& db,
                     Vec& dx) {
    for (int o = 0; o < out; ++o) db[o] += dy[o];
    dx.assign(in, 0.0);
    for (int i = 0; i < in; ++i) {
        const double xi = x[i];
        const size_t base = static_cast<size_t>(i) * out;
        double acc = 0.0;
        for (int o = 0; o < out; ++o) {
            dw[base + o] += xi * dy[o];
            acc += w[base + o] * dy[o];
        }
        dx[i] = acc;
    }
}

Vec ln_output(const Vec& xhat, const Vec& g, const Vec& b) {
    Vec y(xhat.size());
    for (size_t i = 0; i < xhat.size(); ++i) y[i] = g[i] * xhat[i] + b[i];
    return y;
}

// Forward + backward for one example; returns the weighted NLL contribution
// and accumulates scaled gradients.
double example_loss_and_grads(const ModelParams& m, const TrainExample& ex, double scale,
                              ModelParams* grads) {
    if (ex.context.empty()) throw InvalidArgument("training example has empty context");
    if (ex.targets.empty()) throw InvalidArgument("training example has no targets");
    const int d = m.d_model;
    const int dh = d / m.n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<int> input = ex.context;
    input.insert(input.end(), ex.targets.begin(), ex.targets.end() - 1);
    const int T = static_cast<int>(input.size());
    if (T > m.max_seq)
        throw InvalidArgument("training sequence of length " + std::to_string(T) +
                              " exceeds max_seq " + std::to_string(m.max_seq));
    for (int tok : ex.targets)
        if (tok < 0 || tok >= m.vocab_size || m.retired[tok])
            throw InvalidArgument("target token retired or out of range");

    std::vector<std::vector<Vec>> k_cache(m.n_layers), v_cache(m.n_layers);
    std::vector<PositionTrace> traces(T);
    for (int t = 0; t < T; ++t)
        (void)kern::forward_position(m, input[t], t, k_cache, v_cache, &traces[t]);

    const int first_pred = static_cast<int>(ex.context.size()) - 1;
    const int n_targets = static_cast<int>(ex.targets.size());

    double nll = 0.0;
    Vec logits(m.vocab_size), logprobs(m.vocab_size);
    std::vector<Vec> dx(T, Vec(d, 0.0));
    Vec dh_out(d), dxf(d);
    for (int j = 0; j < n_targets; ++j) {
        const int pt = first_pred + j;
        const int target = ex.targets[j];
        kern::linear(traces[pt].h_out.data(), m.w_out.data(), m.b_out.data(), d, m.vocab_size,
                     logits.data());
        kern::masked_log_softmax(logits.data(), m.retired, m.vocab_size, logprobs.data());
        nll -= logprobs[target];
        if (!grads) continue;

        Vec dlogits(m.vocab_size, 0.0);
        for (int i = 0; i < m.vocab_size; ++i)
            if (!m.retired[i]) dlogits[i] = std::exp(logprobs[i]) * scale;
        dlogits[target] -= scale;
        linear_backward(traces[pt].h_out, m.w_out, dlogits, d, m.vocab_size, grads->w_out,
                        grads->b_out, dh_out);
        layernorm_backward(dh_out, traces[pt].lnf_xhat, traces[pt].lnf_rstd, m.lnf_g, grads->lnf_g,
                           grads->lnf_b, dxf);
        for (int i = 0; i < d; ++i) dx[pt][i] += dxf[i];
    }
    if (!grads) return nll * scale;

    Vec dmlp(d), dact(4 * d), dfc(4 * d), da2(d), dmid(d), dattn(d), dctx(d), dq(d), da1(d),
        dtmp(d);
    for (int l = m.n_layers - 1; l >= 0; --l) {
        const LayerParams& lp = m.layers[l];
        LayerParams& gl = grads->layers[l];
        std::vector<Vec> dk_all(T, Vec(d, 0.0)), dv_all(T, Vec(d, 0.0));
        for (int t = T - 1; t >= 0; --t) {
            const LayerTrace& lt = traces[t].layers[l];
            // MLP branch: layer output = x_mid + mlp.
            const Vec a2 = ln_output(lt.ln2_xhat, lp.ln2_g, lp.ln2_b);
            linear_backward(lt.fc_act, lp.w_proj, dx[t], 4 * d, d, gl.w_proj, gl.b_proj, dact);
            for (int i = 0; i < 4 * d; ++i) dfc[i] = dact[i] * kern::gelu_grad(lt.fc_pre[i]);
            linear_backward(a2, lp.w_fc, dfc, d, 4 * d, gl.w_fc, gl.b_fc, da2);
            layernorm_backward(da2, lt.ln2_xhat, lt.ln2_rstd, lp.ln2_g, gl.ln2_g, gl.ln2_b, dmid);
            for (int i = 0; i < d; ++i) dmid[i] += dx[t][i];  // residual

            // Attention branch: x_mid = x_in + attn_out.
            linear_backward(lt.ctx, lp.attn.wo, dmid, d, d, gl.attn.wo, gl.attn.bo, dctx);
            std::fill(dq.begin(), dq.end(), 0.0);
            for (int h = 0; h < m.n_heads; ++h) {
                const int hb = h * dh;
                const Vec& probs = lt.probs[h];
                const int span = static_cast<int>(probs.size());
                Vec dp(span, 0.0);
                double sum_pd = 0.0;
                for (int s = 0; s < span; ++s) {
                    double acc = 0.0;
                    const Vec& vs = v_cache[l][s];
                    for (int j = 0; j < dh; ++j) {
                        acc += dctx[hb + j] * vs[hb + j];
                        dv_all[s][hb + j] += probs[s] * dctx[hb + j];
                    }
                    dp[s] = acc;
                    sum_pd += probs[s] * acc;
                }
                for (int s = 0; s < span; ++s) {
                    const double dscore = probs[s] * (dp[s] - sum_pd) * inv_sqrt_dh;
                    const Vec& ks = k_cache[l][s];
                    for (int j = 0; j < dh; ++j) {
                        dq[hb + j] += dscore * ks[hb + j];
                        dk_all[s][hb + j] += dscore * lt.q[hb + j];
                    }
                }
            }
            const Vec a1 = ln_output(lt.ln1_xhat, lp.ln1_g, lp.ln1_b);
            linear_backward(a1, lp.attn.wq, dq, d, d, gl.attn.wq, gl.attn.bq, da1);
            // Queries at positions >= t are done, so dk/dv for t are complete.
            linear_backward(a1, lp.attn.wk, dk_all[t], d, d, gl.attn.wk, gl.attn.bk, dtmp);
            for (int i = 0; i < d; ++i) da1[i] += dtmp[i];
            linear_backward(a1, lp.attn.wv, dv_all[t], d, d, gl.attn.wv, gl.attn.bv, dtmp);
            for (int i = 0; i < d; ++i) da1[i] += dtmp[i];
            layernorm_backward(da1, lt.ln1_xhat, lt.ln1_rstd, lp.ln1_g, gl.ln1_g, gl.ln1_b, dtmp);
            for (int i = 0; i < d; ++i) dx[t][i] = dmid[i] + dtmp[i];
        }
    }
    for (int t = 0; t < T; ++t) {
        const size_t eb = static_cast<size_t>(input[t]) * d;
        const size_t pb = static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
            grads->embed[eb + i] += dx[t][i];
            grads->pos[pb + i] += dx[t][i];
        }
    }
    return nll * scale;
}

}  // namespace

int64_t ModelParams::param_count() const {
    int64_t n = 0;
    auto& self = const_cast<ModelParams&>(*this);
    for (const auto& [name, block] : param_blocks(self)) n += static_cast<int64_t>(block->size());
    return n;
}

ModelParams init_model(int vocab_size, int d_model, int n_layers, int n_heads, uint64_t seed,
                       int max_seq) {
    if (vocab_size < 2 || d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq < 1)
        throw InvalidArgument("init_model: non-positive dimension");
    if (d_model % n_heads != 0) throw InvalidArgument("init_model: d_model must divide into heads");
    ModelParams m;
    m.vocab_size = vocab_size;
    m.d_model = d_model;
    m.n_layers = n_layers;
    m.n_heads = n_heads;
    m.max_seq = max_seq;
    shape_model(m);
    Rng rng(seed);
    const double scale = 0.02;
    fill_normal(m.embed, rng, scale);
    fill_normal(m.pos, rng, scale);
    for (LayerParams& lp : m.layers) {
        std::fill(lp.ln1_g.begin(), lp.ln1_g.end(), 1.0);
        fill_normal(lp.attn.wq, rng, scale);
        fill_normal(lp.attn.wk, rng, scale);
        fill_normal(lp.attn.wv, rng, scale);
        fill_normal(lp.attn.wo, rng, scale);
        std::fill(lp.ln2_g.begin(), lp.ln2_g.end(), 1.0);
        fill_normal(lp.w_fc, rng, scale);
        fill_normal(lp.w_proj, rng, scale);
    }
    std::fill(m.lnf_g.begin(), m.lnf_g.end(), 1.0);
    fill_normal(m.w_out, rng, scale);
    return m;
}

ModelParams zeros_like(const ModelParams& model) {
    ModelParams z;
    z.vocab_size = model.vocab_size;
    z.d_model = model.d_model;
    z.n_layers = model.n_layers;
    z.n_heads = model.n_heads;
    z.max_seq = model.max_seq;
    shape_model(z);
    z.retired = model.retired;
    return z;
}

std::vector<std::pair<std::string, Vec*>> param_blocks(ModelParams& model) {
    std::vector<std::pair<std::string, Vec*>> blocks;
    blocks.emplace_back("embed", &model.embed);
    blocks.emplace_back("pos", &model.pos);
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerParams& lp = model.layers[l];
        blocks.emplace_back(p + "ln1_g", &lp.ln1_g);
        blocks.emplace_back(p + "ln1_b", &lp.ln1_b);
        blocks.emplace_back(p + "wq", &lp.attn.wq);
        blocks.emplace_back(p + "bq", &lp.attn.bq);
        blocks.emplace_back(p + "wk", &lp.attn.wk);
        blocks.emplace_back(p + "bk", &lp.attn.bk);
        blocks.emplace_back(p + "wv", &lp.attn.wv);
        blocks.emplace_back(p + "bv", &lp.attn.bv);
        blocks.emplace_back(p + "wo", &lp.attn.wo);
        blocks.emplace_back(p + "bo", &lp.attn.bo);
        blocks.emplace_back(p + "ln2_g", &lp.ln2_g);
        blocks.emplace_back(p + "ln2_b", &lp.ln2_b);
        blocks.emplace_back(p + "w_fc", &lp.w_fc);
        blocks.emplace_back(p + "b_fc", &lp.b_fc);
        blocks.emplace_back(p + "w_proj", &lp.w_proj);
        blocks.emplace_back(p + "b_proj", &lp.b_proj);
    }
    blocks.emplace_back("lnf_g", &model.lnf_g);
    blocks.emplace_back("lnf_b", &model.lnf_b);
    blocks.emplace_back("w_out", &model.w_out);
    blocks.emplace_back("b_out", &model.b_out);
    return blocks;
}

LossResult rec_loss(const ModelParams& model, const std::vector<TrainExample>& batch,
                    const std::vector<double>& weights) {
    if (batch.empty()) throw InvalidArgument("rec_loss: empty batch");
    if (!weights.empty() && weights.size() != batch.size())
        throw InvalidArgument("rec_loss: weights/batch size mismatch");
    LossResult result;
    result.grads = zeros_like(model);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (size_t e = 0; e < batch.size(); ++e) {
        const double w = weights.empty() ? 1.0 : weights[e];
        result.loss += example_loss_and_grads(model, batch[e], w * inv_b, &result.grads);
    }
    return result;
}

TreeRegResult tree_regularizer(const ModelParams& model, const SiblingGroups& groups) {
    TreeRegResult result;
    result.embed_grad.assign(model.embed.size(), 0.0);
    const int d = model.d_model;
    for (const std::vector<int>& group : groups.groups) {
        if (group.empty()) throw InvalidArgument("tree_regularizer: empty sibling group");
        for (int id : group)
            if (id < 0 || id >= model.vocab_size)
                throw InvalidArgument("tree_regularizer: token id out of range");
        const double inv_n = 1.0 / static_cast<double>(group.size());
        Vec mean(d, 0.0);
        for (int id : group) {
            const size_t base = static_cast<size_t>(id) * d;
            for (int i = 0; i < d; ++i) mean[i] += model.embed[base + i];
        }
        for (int i = 0; i < d; ++i) mean[i] *= inv_n;
        for (int id : group) {
            const size_t base = static_cast<size_t>(id) * d;
            for (int i = 0; i < d; ++i) {
                const double diff = model.embed[base + i] - mean[i];
                result.value += inv_n * diff * diff;
                result.embed_grad[base + i] += 2.0 * inv_n * diff;
            }
        }
    }
    return result;
}

LossResult total_loss(const ModelParams& model, const std::vector<TrainExample>& batch,
                      double gamma, const SiblingGroups& groups,
                      const std::vector<double>& weights) {
    LossResult result = rec_loss(model, batch, weights);
    if (gamma != 0.0 && !groups.groups.empty()) {
        const TreeRegResult reg = tree_regularizer(model, groups);
        result.loss += gamma * reg.value;
        for (size_t i = 0; i < reg.embed_grad.size(); ++i)
            result.grads.embed[i] += gamma * reg.embed_grad[i];
    }
    return result;
}

std::vector<double> train(ModelParams& model, const std::vector<TrainExample>& examples,
                          const TrainConfig& config, const SiblingGroups& groups,
                          const FrequencyTable* freq_for_reweight) {
    if (examples.empty()) throw InvalidArgument("train: no examples");
    if (config.epochs < 1 || config.batch_size < 1) throw InvalidArgument("train: bad config");
    if (config.learning_rate <= 0.0) throw InvalidArgument("train: learning rate must be > 0");
    Rng rng(config.seed);
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_sum = 0.0;
        int step = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size, ++step) {
            const size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<TrainExample> batch;
            batch.reserve(stop - start);
            for (size_t b = start; b < stop; ++b) batch.push_back(examples[order[b]]);

            std::vector<double> weights;
            if (freq_for_reweight) {
                weights.resize(batch.size());
                double sum = 0.0;
                for (size_t b = 0; b < batch.size(); ++b) {
                    const int64_t item = batch[b].target_item;
                    if (item < 0 || item >= static_cast<int64_t>(freq_for_reweight->freq.size()))
                        throw InvalidArgument("train: reweighting needs a valid target_item");
                    weights[b] = std::pow(
                        static_cast<double>(freq_for_reweight->freq[item]) + 1.0,
                        -config.reweight_beta);
                    sum += weights[b];
                }
                const double mean = sum / static_cast<double>(batch.size());
                for (double& w : weights) w /= mean;
            }

            LossResult res = total_loss(model, batch, config.gamma, groups, weights);
            if (!std::isfinite(res.loss))
                throw NumericDivergence("training loss became non-finite at epoch " +
                                        std::to_string(epoch) + ", step " + std::to_string(step));
            double norm_sq = 0.0;
            for (const auto& [name, block] : param_blocks(res.grads))
                for (double g : *block) norm_sq += g * g;
            const double norm = std::sqrt(norm_sq);
            double factor = config.learning_rate;
            if (config.clip_norm > 0.0 && norm > config.clip_norm)
                factor = config.learning_rate * (config.clip_norm / norm);
            auto params = param_blocks(model);
            auto grads = param_blocks(res.grads);
            for (size_t b = 0; b < params.size(); ++b) {
                Vec& p = *params[b].second;
                const Vec& g = *grads[b].second;
                for (size_t i = 0; i < p.size(); ++i) p[i] -= factor * g[i];
            }
            epoch_sum += res.loss * static_cast<double>(batch.size());
        }
        epoch_losses.push_back(epoch_sum / static_cast<double>(examples.size()));
        log_debug("epoch " + std::to_string(epoch) + " loss " +
                  std::to_string(epoch_losses.back()));
    }
    return epoch_losses;
}

double embed_rms(const ModelParams& model) {
    if (model.embed.empty()) return 0.0;
    double sum = 0.0;
    for (double x : model.embed) sum += x * x;
    return std::sqrt(sum / static_cast<double>(model.embed.size()));
}

void extend_vocab(ModelParams& model, const std::vector<std::pair<int, int>>& new_to_parent,
                  double noise_scale, uint64_t seed) {
    if (new_to_parent.empty()) return;
    const int old_vocab = model.vocab_size;
    const int d = model.d_model;
    for (size_t j = 0; j < new_to_parent.size(); ++j) {
        if (new_to_parent[j].first != old_vocab + static_cast<int>(j))
            throw InvalidArgument("extend_vocab: new ids must be contiguous from vocab_size");
        const int parent = new_to_parent[j].second;
        if (parent < 0 || parent >= old_vocab)
            throw InvalidArgument("extend_vocab: parent id out of range");
    }
    const double scale = noise_scale < 0.0 ? 0.01 * embed_rms(model) : noise_scale;
    const int n_new = static_cast<int>(new_to_parent.size());
    const int new_vocab = old_vocab + n_new;
    Rng rng(seed);

    model.embed.resize(static_cast<size_t>(new_vocab) * d);
    Vec new_w_out(static_cast<size_t>(d) * new_vocab);
    for (int i = 0; i < d; ++i)
        std::memcpy(new_w_out.data() + static_cast<size_t>(i) * new_vocab,
                    model.w_out.data() + static_cast<size_t>(i) * old_vocab,
                    sizeof(double) * old_vocab);
    model.b_out.resize(new_vocab);
    model.retired.resize(new_vocab, 0);

    for (int j = 0; j < n_new; ++j) {
        const int id = old_vocab + j;
        const int parent = new_to_parent[j].second;
        const size_t eb = static_cast<size_t>(id) * d;
        const size_t pb = static_cast<size_t>(parent) * d;
        for (int i = 0; i < d; ++i)
            model.embed[eb + i] = model.embed[pb + i] + scale * rng.next_normal();
        for (int i = 0; i < d; ++i)
            new_w_out[static_cast<size_t>(i) * new_vocab + id] =
                new_w_out[static_cast<size_t>(i) * new_vocab + parent] + scale * rng.next_normal();
        model.b_out[id] = model.b_out[parent];
    }
    for (const auto& [id, parent] : new_to_parent) model.retired[parent] = 1;
    model.w_out = std::move(new_w_out);
    model.vocab_size = new_vocab;
}

Vec next_token_logprobs(const ModelParams& model, const std::vector<int>& tokens) {
    if (tokens.empty()) throw InvalidArgument("next_token_logprobs: empty prefix");
    DecoderState state(model);
    for (int tok : tokens) state.append(tok);
    return state.logprobs();
}

namespace {
constexpr uint32_t kModelMagic = 0x53454D49;  // "SEMI"
constexpr uint32_t kModelVersion = 1;

void write_raw(std::ofstream& out, const void* p, size_t bytes) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
}

void read_raw(std::ifstream& in, void* p, size_t bytes) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
}
}  // namespace

void save_model(const ModelParams& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const int32_t header[7] = {static_cast<int32_t>(kModelMagic),
                               static_cast<int32_t>(kModelVersion),
                               model.vocab_size,
                               model.d_model,
                               model.n_layers,
                               model.n_heads,
                               model.max_seq};
    write_raw(out, header, sizeof(header));
    write_raw(out, model.retired.data(), model.retired.size());
    auto& self = const_cast<ModelParams&>(model);
    for (const auto& [name, block] : param_blocks(self))
        write_raw(out, block->data(), block->size() * sizeof(double));
    if (!out) throw IoError("write failed: " + path);
}

ModelParams load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    int32_t header[7] = {};
    read_raw(in, header, sizeof(header));
    if (!in || static_cast<uint32_t>(header[0]) != kModelMagic)
        throw ParseError(path, 0, "not a model checkpoint");
    if (static_cast<uint32_t>(header[1]) != kModelVersion)
        throw ParseError(path, 0, "unsupported checkpoint version");
    ModelParams m;
    m.vocab_size = header[2];
    m.d_model = header[3];
    m.n_layers = header[4];
    m.n_heads = header[5];
    m.max_seq = header[6];
    if (m.vocab_size < 2 || m.d_model < 1 || m.n_layers < 1 || m.n_heads < 1 || m.max_seq < 1 ||
        m.d_model % m.n_heads != 0)
        throw ParseError(path, 0, "checkpoint header is inconsistent");
    shape_model(m);
    read_raw(in, m.retired.data(), m.retired.size());
    for (const auto& [name, block] : param_blocks(m))
        read_raw(in, block->data(), block->size() * sizeof(double));
    if (!in) throw ParseError(path, 0, "checkpoint truncated");
    char extra = 0;
    in.read(&extra, 1);
    if (!in.eof()) throw ParseError(path, 0, "trailing bytes after checkpoint payload");
    return m;
}

}  // namespace semid
