#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semid/dataset.hpp"

namespace semid {

// Decoder-only causal transformer over the flat SID vocabulary. Pre-LN
// blocks, learned positional embeddings, untied output projection, GELU MLP,
// all in 64-bit floats with handwritten analytic gradients.
//
// Linear weights are stored row-major [in][out] so forward accumulation runs
// in the saxpy order shared by every code path (training forward, streaming
// decode); identical inputs therefore produce bitwise identical logits.

struct AttnParams {
    Vec wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerParams {
    Vec ln1_g, ln1_b;
    AttnParams attn;
    Vec ln2_g, ln2_b;
    Vec w_fc, b_fc;      // d -> 4d
    Vec w_proj, b_proj;  // 4d -> d
};

struct ModelParams {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    int n_heads = 0;
    int max_seq = 0;

    Vec embed;  // vocab_size x d_model
    Vec pos;    // max_seq x d_model
    std::vector<LayerParams> layers;
    Vec lnf_g, lnf_b;
    Vec w_out, b_out;  // d_model x vocab_size, vocab_size
    std::vector<uint8_t> retired;  // flat ids masked from prediction

    int64_t param_count() const;
};

// Scaled Gaussian init, deterministic in seed.
ModelParams init_model(int vocab_size, int d_model, int n_layers, int n_heads, uint64_t seed,
                       int max_seq = 64);

// Same shapes as `model`, all zeros; doubles as the gradient accumulator.
ModelParams zeros_like(const ModelParams& model);

// Named parameter blocks in a fixed order, for updates and gradient checks.
std::vector<std::pair<std::string, Vec*>> param_blocks(ModelParams& model);

struct TrainExample {
    std::vector<int> context;   // BOS + flattened history tokens
    std::vector<int> targets;   // flat ids of the next item's tokens
    int64_t target_item = -1;   // for loss reweighting
};

struct LossResult {
    double loss = 0.0;
    ModelParams grads;
};

// Mean over the batch of each sequence's summed next-token NLL on target
// positions only (history is conditioning). weights scale per-example
// contributions; empty means all-ones. Retired ids are masked from the
// softmax. Throws InvalidArgument if a sequence exceeds max_seq.
LossResult rec_loss(const ModelParams& model, const std::vector<TrainExample>& batch,
                    const std::vector<double>& weights = {});

// Flat ids of sibling token groups (children sharing one parent), the input
// to the hierarchical embedding regularizer.
struct SiblingGroups {
    std::vector<std::vector<int>> groups;
};

// L_T = sum over groups of (1/|g|) * sum_{c in g} ||e(c) - mean_g||^2.
// Returns the value and the gradient on the embedding table only.
struct TreeRegResult {
    double value = 0.0;
    Vec embed_grad;  // vocab_size x d_model
};
TreeRegResult tree_regularizer(const ModelParams& model, const SiblingGroups& groups);

// L = L_Rec + gamma * L_T; gamma = 0 recovers rec_loss bitwise.
LossResult total_loss(const ModelParams& model, const std::vector<TrainExample>& batch,
                      double gamma, const SiblingGroups& groups,
                      const std::vector<double>& weights = {});

struct TrainConfig {
    double gamma = 0.2;
    double learning_rate = 0.05;
    int epochs = 10;
    int batch_size = 32;
    double clip_norm = 1.0;
    uint64_t seed = 1;
    double reweight_beta = 0.0;  // 0 disables the reweighting baseline
};

// Mini-batch gradient descent with global-norm clipping; single-threaded and
// deterministic in config.seed. Returns per-epoch mean train loss. Throws
// NumericDivergence (with epoch/step) if the loss turns non-finite.
std::vector<double> train(ModelParams& model, const std::vector<TrainExample>& examples,
                          const TrainConfig& config, const SiblingGroups& groups,
                          const FrequencyTable* freq_for_reweight = nullptr);

// Appends rows for new tokens: embedding and output-projection rows copy the
// parent (plus Gaussian noise of scale noise_scale; pass a negative scale for
// the 0.01 * RMS(embed) default), output bias copies exactly, parents are
// marked retired. Pre-existing rows are untouched.
void extend_vocab(ModelParams& model, const std::vector<std::pair<int, int>>& new_to_parent,
                  double noise_scale, uint64_t seed);

double embed_rms(const ModelParams& model);

// Log-probabilities over the vocabulary for the next token after `tokens`
// (retired ids get -inf). Bitwise identical to the streaming decode path.
Vec next_token_logprobs(const ModelParams& model, const std::vector<int>& tokens);

void save_model(const ModelParams& model, const std::string& path);
ModelParams load_model(const std::string& path);

}  // namespace semid
