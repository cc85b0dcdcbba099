#pragma once

// Shared forward kernels. Training, scoring, and beam decode all run the same
// per-position code path with the same accumulation order, so identical token
// prefixes produce bitwise identical logits everywhere. Keep loops plain —
// no shortcuts that could reorder floating-point sums.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "semid/error.hpp"
#include "semid/model.hpp"

namespace semid::kern {

constexpr double kLnEps = 1e-5;

// y = b + x W with W stored [in][out]; saxpy order (i outer, o inner).
inline void linear(const double* x, const double* w, const double* b, int in, int out, double* y) {
    for (int o = 0; o < out; ++o) y[o] = b[o];
    for (int i = 0; i < in; ++i) {
        const double xi = x[i];
        const double* row = w + static_cast<size_t>(i) * out;
        for (int o = 0; o < out; ++o) y[o] += xi * row[o];
    }
}

// xhat = (x - mean) * rstd; y = g * xhat + b. Returns xhat and rstd for the
// backward pass.
inline void layernorm(const double* x, const double* g, const double* b, int d, double* y,
                      double* xhat, double* rstd_out) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < d; ++i) {
        xhat[i] = (x[i] - mean) * rstd;
        y[i] = g[i] * xhat[i] + b[i];
    }
    *rstd_out = rstd;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return phi + x * pdf;
}

// Log-softmax over the non-retired vocabulary; retired slots get -inf.
inline void masked_log_softmax(const double* logits, const std::vector<uint8_t>& retired, int v,
                               double* out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < v; ++i)
        if (!retired[i] && logits[i] > mx) mx = logits[i];
    double sum = 0.0;
    for (int i = 0; i < v; ++i)
        if (!retired[i]) sum += std::exp(logits[i] - mx);
    const double lse = std::log(sum);
    for (int i = 0; i < v; ++i)
        out[i] = retired[i] ? -std::numeric_limits<double>::infinity() : logits[i] - mx - lse;
}

// Activations one position leaves behind in one layer, for the backward pass.
struct LayerTrace {
    Vec x_in;
    Vec ln1_xhat;
    double ln1_rstd = 0.0;
    Vec q;
    std::vector<Vec> probs;  // per head, over key positions 0..t
    Vec ctx;
    Vec x_mid;
    Vec ln2_xhat;
    double ln2_rstd = 0.0;
    Vec fc_pre;
    Vec fc_act;
};

struct PositionTrace {
    std::vector<LayerTrace> layers;
    Vec x_final;
    Vec lnf_xhat;
    double lnf_rstd = 0.0;
    Vec h_out;
};

// Runs one token through the stack, appending its K/V to the caches and
// returning the final (post-lnf) hidden state. `trace` may be null.
inline Vec forward_position(const ModelParams& m, int token, int pos_index,
                            std::vector<std::vector<Vec>>& k_cache,
                            std::vector<std::vector<Vec>>& v_cache, PositionTrace* trace) {
    const int d = m.d_model;
    const int dh = d / m.n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    if (token < 0 || token >= m.vocab_size) throw InvalidArgument("token id out of range");
    if (pos_index < 0 || pos_index >= m.max_seq)
        throw InvalidArgument("sequence longer than max_seq");

    Vec x(d);
    for (int i = 0; i < d; ++i)
        x[i] = m.embed[static_cast<size_t>(token) * d + i] +
               m.pos[static_cast<size_t>(pos_index) * d + i];
    if (trace) trace->layers.resize(m.n_layers);

    Vec a(d), xhat(d), q(d), k(d), v(d), ctx(d), attn(d);
    Vec fc(4 * d), act(4 * d), mlp(d);
    for (int l = 0; l < m.n_layers; ++l) {
        const LayerParams& lp = m.layers[l];
        LayerTrace* lt = trace ? &trace->layers[l] : nullptr;
        if (lt) lt->x_in = x;

        double rstd = 0.0;
        layernorm(x.data(), lp.ln1_g.data(), lp.ln1_b.data(), d, a.data(), xhat.data(), &rstd);
        if (lt) {
            lt->ln1_xhat = xhat;
            lt->ln1_rstd = rstd;
        }
        linear(a.data(), lp.attn.wq.data(), lp.attn.bq.data(), d, d, q.data());
        linear(a.data(), lp.attn.wk.data(), lp.attn.bk.data(), d, d, k.data());
        linear(a.data(), lp.attn.wv.data(), lp.attn.bv.data(), d, d, v.data());
        k_cache[l].push_back(k);
        v_cache[l].push_back(v);
        const int t = static_cast<int>(k_cache[l].size()) - 1;

        if (lt) {
            lt->q = q;
            lt->probs.resize(m.n_heads);
        }
        std::fill(ctx.begin(), ctx.end(), 0.0);
        Vec scores(t + 1);
        for (int h = 0; h < m.n_heads; ++h) {
            const int hb = h * dh;
            for (int s = 0; s <= t; ++s) {
                double dot = 0.0;
                const Vec& ks = k_cache[l][s];
                for (int j = 0; j < dh; ++j) dot += q[hb + j] * ks[hb + j];
                scores[s] = dot * inv_sqrt_dh;
            }
            double mx = scores[0];
            for (int s = 1; s <= t; ++s)
                if (scores[s] > mx) mx = scores[s];
            double sum = 0.0;
            for (int s = 0; s <= t; ++s) {
                scores[s] = std::exp(scores[s] - mx);
                sum += scores[s];
            }
            for (int s = 0; s <= t; ++s) scores[s] /= sum;
            for (int s = 0; s <= t; ++s) {
                const double p = scores[s];
                const Vec& vs = v_cache[l][s];
                for (int j = 0; j < dh; ++j) ctx[hb + j] += p * vs[hb + j];
            }
            if (lt) lt->probs[h] = scores;
        }
        if (lt) lt->ctx = ctx;
        linear(ctx.data(), lp.attn.wo.data(), lp.attn.bo.data(), d, d, attn.data());
        for (int i = 0; i < d; ++i) x[i] += attn[i];
        if (lt) lt->x_mid = x;

        layernorm(x.data(), lp.ln2_g.data(), lp.ln2_b.data(), d, a.data(), xhat.data(), &rstd);
        if (lt) {
            lt->ln2_xhat = xhat;
            lt->ln2_rstd = rstd;
        }
        linear(a.data(), lp.w_fc.data(), lp.b_fc.data(), d, 4 * d, fc.data());
        for (int i = 0; i < 4 * d; ++i) act[i] = gelu(fc[i]);
        if (lt) {
            lt->fc_pre = fc;
            lt->fc_act = act;
        }
        linear(act.data(), lp.w_proj.data(), lp.b_proj.data(), 4 * d, d, mlp.data());
        for (int i = 0; i < d; ++i) x[i] += mlp[i];
    }

    Vec h(d);
    double rstd = 0.0;
    layernorm(x.data(), m.lnf_g.data(), m.lnf_b.data(), d, h.data(), xhat.data(), &rstd);
    if (trace) {
        trace->x_final = x;
        trace->lnf_xhat = xhat;
        trace->lnf_rstd = rstd;
        trace->h_out = h;
    }
    return h;
}

// Incremental decoder: append tokens one at a time, read next-token
// log-probabilities after each append.
struct DecoderState {
    const ModelParams* model = nullptr;
    std::vector<std::vector<Vec>> k_cache, v_cache;
    Vec last_h;

    explicit DecoderState(const ModelParams& m)
        : model(&m), k_cache(m.n_layers), v_cache(m.n_layers) {}

    int length() const { return model->n_layers ? static_cast<int>(k_cache[0].size()) : 0; }

    void append(int token) {
        last_h = forward_position(*model, token, length(), k_cache, v_cache, nullptr);
    }

    Vec logprobs() const {
        const ModelParams& m = *model;
        Vec logits(m.vocab_size);
        linear(last_h.data(), m.w_out.data(), m.b_out.data(), m.d_model, m.vocab_size,
               logits.data());
        Vec out(m.vocab_size);
        masked_log_softmax(logits.data(), m.retired, m.vocab_size, out.data());
        return out;
    }
};

}  // namespace semid::kern
