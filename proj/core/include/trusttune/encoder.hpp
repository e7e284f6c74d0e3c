#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trusttune/graph.hpp"
#include "trusttune/rng.hpp"
#include "trusttune/tensor.hpp"

namespace trusttune {

enum class Pooling { kFirstToken, kMean };

struct EncoderConfig {
    std::size_t vocab_size = 64;  // V
    std::size_t embed_dim = 16;   // n
    std::size_t blocks = 2;       // B
    std::size_t ffn_hidden = 32;  // h
    std::size_t max_len = 16;     // m
    Pooling pooling = Pooling::kFirstToken;
};

// Single-head self-attention + tanh FFN, post-LN residual wiring. Attention
// projections carry no bias; only the layer norms have gain/bias.
struct TransformerBlock {
    Tensor wq, wk, wv, wo;  // n x n
    Tensor w1;              // n x h
    Tensor w2;              // h x n
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // (n,)
};

struct EncoderParams {
    EncoderConfig config;
    Tensor embedding;  // V x n; rows 0..2 are the reserved CLS/MASK/PAD ids
    std::vector<TransformerBlock> blocks;

    static EncoderParams init(const EncoderConfig& cfg, Rng& init_rng);

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<Tensor*> params();
    void zero_grads();
    // Content hash over config and all parameter values; the frozen-encoder
    // fingerprint used by the probing protocol.
    std::uint64_t fingerprint() const;
};

// Sinusoidal position encodings, (len x n).
Tensor position_encodings(std::size_t len, std::size_t dim);

// Node handles for one encoder bound into one graph. Bind once per graph and
// reuse across the batch so leaf gradients accumulate in one place.
struct EncoderNodes {
    NodeId embedding;
    struct BlockNodes {
        NodeId wq, wk, wv, wo, w1, w2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    };
    std::vector<BlockNodes> blocks;
};

EncoderNodes bind_encoder(Graph& g, EncoderParams& p, bool trainable);

constexpr NodeId kNoPerturbation = static_cast<NodeId>(-1);

// Per-position representations after the block stack: (m x n).
// `perturbation`, when given, is an (m x n) node added to the embedded input
// (after position encodings, before block 1) - the injection point for z / delta.
NodeId encode_sequence_graph(Graph& g, const EncoderNodes& nodes, const EncoderConfig& cfg,
                             const std::vector<int>& tokens, NodeId perturbation = kNoPerturbation);

// Pooled representation, (1 x n).
NodeId encode_graph(Graph& g, const EncoderNodes& nodes, const EncoderConfig& cfg,
                    const std::vector<int>& tokens, NodeId perturbation = kNoPerturbation);

// Plain evaluation wrappers over a scratch graph.
Tensor encode(EncoderParams& p, const std::vector<int>& tokens);
Tensor embed_then_encode(EncoderParams& p, const std::vector<int>& tokens, const Tensor& perturbation);

struct PretrainConfig {
    double mask_rate = 0.15;      // in (0,1)
    std::size_t steps = 400;
    std::size_t corpus_size = 256;
    std::size_t batch_size = 8;
    double lr = 5e-3;
};

struct PretrainResult {
    std::vector<double> loss_curve;  // one entry per step
};

// Masked-token pretraining: masked positions take the MASK embedding row and
// are predicted through a softmax tied to the embedding table.
PretrainResult pretrain(EncoderParams& params, const PretrainConfig& cfg,
                        const std::vector<std::vector<int>>& corpus, std::uint64_t seed);

// Fraction of masked positions whose argmax prediction recovers the original
// token, over `samples` freshly masked sequences.
double masked_accuracy(EncoderParams& params, const std::vector<std::vector<int>>& corpus,
                       double mask_rate, std::size_t samples, std::uint64_t seed);

}  // namespace trusttune
