#include "trusttune/encoder.hpp"

#include <cmath>

#include "trusttune/errors.hpp"
#include "trusttune/hash.hpp"
#include "trusttune/optimizer.hpp"
#include "trusttune/tasks.hpp"

namespace trusttune {

namespace {

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.values) v = rng.normal(0.0, stddev);
    return t;
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& init_rng) {
    if (cfg.vocab_size < 8) throw ConfigError("encoder: vocabulary size must be >= 8");
    if (cfg.embed_dim < 2) throw ConfigError("encoder: embedding dim must be >= 2");
    if (cfg.blocks < 1) throw ConfigError("encoder: needs at least one block");

    EncoderParams p;
    p.config = cfg;
    p.embedding = gaussian_matrix(cfg.vocab_size, cfg.embed_dim, 0.5, init_rng);
    const double w_std = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    const double f_std = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_hidden));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        TransformerBlock blk;
        blk.wq = gaussian_matrix(cfg.embed_dim, cfg.embed_dim, w_std, init_rng);
        blk.wk = gaussian_matrix(cfg.embed_dim, cfg.embed_dim, w_std, init_rng);
        blk.wv = gaussian_matrix(cfg.embed_dim, cfg.embed_dim, w_std, init_rng);
        blk.wo = gaussian_matrix(cfg.embed_dim, cfg.embed_dim, w_std, init_rng);
        blk.w1 = gaussian_matrix(cfg.embed_dim, cfg.ffn_hidden, w_std, init_rng);
        blk.w2 = gaussian_matrix(cfg.ffn_hidden, cfg.embed_dim, f_std, init_rng);
        blk.ln1_gain = Tensor::full({cfg.embed_dim}, 1.0);
        blk.ln1_bias = Tensor::zeros({cfg.embed_dim});
        blk.ln2_gain = Tensor::full({cfg.embed_dim}, 1.0);
        blk.ln2_bias = Tensor::zeros({cfg.embed_dim});
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

std::vector<std::pair<std::string, Tensor*>> EncoderParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("embedding", &embedding);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        TransformerBlock& blk = blocks[b];
        out.emplace_back(pre + "wq", &blk.wq);
        out.emplace_back(pre + "wk", &blk.wk);
        out.emplace_back(pre + "wv", &blk.wv);
        out.emplace_back(pre + "wo", &blk.wo);
        out.emplace_back(pre + "w1", &blk.w1);
        out.emplace_back(pre + "w2", &blk.w2);
        out.emplace_back(pre + "ln1_gain", &blk.ln1_gain);
        out.emplace_back(pre + "ln1_bias", &blk.ln1_bias);
        out.emplace_back(pre + "ln2_gain", &blk.ln2_gain);
        out.emplace_back(pre + "ln2_bias", &blk.ln2_bias);
    }
    return out;
}

std::vector<Tensor*> EncoderParams::params() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

void EncoderParams::zero_grads() {
    for (Tensor* t : params()) t->zero_grad();
}

std::uint64_t EncoderParams::fingerprint() const {
    Fnv1a64 h;
    h.update_u64(config.vocab_size);
    h.update_u64(config.embed_dim);
    h.update_u64(config.blocks);
    h.update_u64(config.ffn_hidden);
    h.update_u64(config.max_len);
    h.update_u64(config.pooling == Pooling::kFirstToken ? 0 : 1);
    auto& self = const_cast<EncoderParams&>(*this);
    for (auto& [name, t] : self.named_params()) {
        h.update(name);
        h.update_f64(t->values);
    }
    return h.digest();
}

Tensor position_encodings(std::size_t len, std::size_t dim) {
    Tensor pe = Tensor::zeros({len, dim});
    for (std::size_t pos = 0; pos < len; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            pe.values[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

EncoderNodes bind_encoder(Graph& g, EncoderParams& p, bool trainable) {
    auto bind = [&](Tensor& t) { return trainable ? g.param(t) : g.constant(t); };
    EncoderNodes nodes;
    nodes.embedding = bind(p.embedding);
    for (TransformerBlock& blk : p.blocks) {
        EncoderNodes::BlockNodes bn;
        bn.wq = bind(blk.wq);
        bn.wk = bind(blk.wk);
        bn.wv = bind(blk.wv);
        bn.wo = bind(blk.wo);
        bn.w1 = bind(blk.w1);
        bn.w2 = bind(blk.w2);
        bn.ln1_gain = bind(blk.ln1_gain);
        bn.ln1_bias = bind(blk.ln1_bias);
        bn.ln2_gain = bind(blk.ln2_gain);
        bn.ln2_bias = bind(blk.ln2_bias);
        nodes.blocks.push_back(bn);
    }
    return nodes;
}

NodeId encode_sequence_graph(Graph& g, const EncoderNodes& nodes, const EncoderConfig& cfg,
                             const std::vector<int>& tokens, NodeId perturbation) {
    if (tokens.empty()) throw ShapeError("encode: empty token sequence");
    if (tokens.size() > cfg.max_len)
        throw ShapeError("encode: sequence length " + std::to_string(tokens.size()) +
                         " exceeds configured maximum " + std::to_string(cfg.max_len));

    NodeId x = g.embedding(nodes.embedding, tokens);
    x = g.add(x, g.constant(position_encodings(tokens.size(), cfg.embed_dim)));
    if (perturbation != kNoPerturbation) {
        const Tensor& pt = g.value(perturbation);
        if (pt.shape != Shape{tokens.size(), cfg.embed_dim})
            throw ShapeError("perturbation shape " + shape_str(pt.shape) + " does not match embedded input (" +
                             std::to_string(tokens.size()) + "x" + std::to_string(cfg.embed_dim) + ")");
        x = g.add(x, perturbation);
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    for (const auto& blk : nodes.blocks) {
        NodeId q = g.matmul(x, blk.wq);
        NodeId k = g.matmul(x, blk.wk);
        NodeId v = g.matmul(x, blk.wv);
        NodeId scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d);
        NodeId att = g.softmax_rows(scores);
        NodeId ctx = g.matmul(g.matmul(att, v), blk.wo);
        x = g.layer_norm(g.add(x, ctx), blk.ln1_gain, blk.ln1_bias);
        NodeId ffn = g.matmul(g.tanh_op(g.matmul(x, blk.w1)), blk.w2);
        x = g.layer_norm(g.add(x, ffn), blk.ln2_gain, blk.ln2_bias);
    }
    return x;
}

NodeId encode_graph(Graph& g, const EncoderNodes& nodes, const EncoderConfig& cfg,
                    const std::vector<int>& tokens, NodeId perturbation) {
    NodeId seq = encode_sequence_graph(g, nodes, cfg, tokens, perturbation);
    return cfg.pooling == Pooling::kFirstToken ? g.row(seq, 0) : g.mean_rows(seq);
}

Tensor encode(EncoderParams& p, const std::vector<int>& tokens) {
    Tensor zero = Tensor::zeros({tokens.size(), p.config.embed_dim});
    return embed_then_encode(p, tokens, zero);
}

Tensor embed_then_encode(EncoderParams& p, const std::vector<int>& tokens, const Tensor& perturbation) {
    Graph g;
    EncoderNodes nodes = bind_encoder(g, p, /*trainable=*/false);
    NodeId rep = encode_graph(g, nodes, p.config, tokens, g.constant(perturbation));
    return Tensor({p.config.embed_dim}, g.value(rep).values);
}

namespace {

// Masked copy of a sequence: every non-CLS position is masked with
// probability mask_rate, and at least one position is always masked.
std::vector<std::size_t> choose_mask_positions(const std::vector<int>& seq, double mask_rate, Rng& rng) {
    std::vector<std::size_t> masked;
    for (std::size_t i = 1; i < seq.size(); ++i) {
        if (rng.uniform01() < mask_rate) masked.push_back(i);
    }
    if (masked.empty()) masked.push_back(1 + rng.uniform_index(seq.size() - 1));
    return masked;
}

}  // namespace

PretrainResult pretrain(EncoderParams& params, const PretrainConfig& cfg,
                        const std::vector<std::vector<int>>& corpus, std::uint64_t seed) {
    if (cfg.mask_rate <= 0.0 || cfg.mask_rate >= 1.0)
        throw ConfigError("pretrain: mask_rate must lie in (0,1)");
    if (corpus.empty()) throw ConfigError("pretrain: corpus must be nonempty");

    PretrainResult result;
    if (cfg.steps == 0) return result;

    Rng data(stream_seed(seed, "pretrain-data"));
    AdamConfig adam_cfg;
    adam_cfg.weight_decay = 0.0;
    AdamOptimizer opt(params.named_params(), adam_cfg);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Graph g;
        EncoderNodes nodes = bind_encoder(g, params, /*trainable=*/true);
        std::vector<NodeId> losses;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto& seq = corpus[data.uniform_index(corpus.size())];
            const auto masked_pos = choose_mask_positions(seq, cfg.mask_rate, data);
            std::vector<int> masked_seq = seq;
            for (std::size_t pos : masked_pos) masked_seq[pos] = kMaskId;

            NodeId hidden = encode_sequence_graph(g, nodes, params.config, masked_seq);
            NodeId table_t = g.transpose(nodes.embedding);
            for (std::size_t pos : masked_pos) {
                NodeId logits = g.matmul(g.row(hidden, pos), table_t);
                NodeId logp = g.log_softmax_rows(logits);
                losses.push_back(g.scale(g.select(logp, static_cast<std::size_t>(seq[pos])), -1.0));
            }
        }
        NodeId total = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) total = g.add(total, losses[i]);
        NodeId loss = g.scale(total, 1.0 / static_cast<double>(losses.size()));
        g.count_forward_pass();
        g.backward(loss);
        result.loss_curve.push_back(g.scalar_value(loss));
        opt.step(cfg.lr);
    }
    return result;
}

double masked_accuracy(EncoderParams& params, const std::vector<std::vector<int>>& corpus,
                       double mask_rate, std::size_t samples, std::uint64_t seed) {
    Rng rng(stream_seed(seed, "pretrain-eval"));
    std::size_t hits = 0, total = 0;
    for (std::size_t s = 0; s < samples; ++s) {
        const auto& seq = corpus[rng.uniform_index(corpus.size())];
        const auto masked_pos = choose_mask_positions(seq, mask_rate, rng);
        std::vector<int> masked_seq = seq;
        for (std::size_t pos : masked_pos) masked_seq[pos] = kMaskId;

        Graph g;
        EncoderNodes nodes = bind_encoder(g, params, /*trainable=*/false);
        NodeId hidden = encode_sequence_graph(g, nodes, params.config, masked_seq);
        NodeId table_t = g.transpose(nodes.embedding);
        for (std::size_t pos : masked_pos) {
            const Tensor& logits = g.value(g.matmul(g.row(hidden, pos), table_t));
            std::size_t best = 0;
            for (std::size_t j = 1; j < logits.size(); ++j)
                if (logits.values[j] > logits.values[best]) best = j;
            if (static_cast<int>(best) == seq[pos]) ++hits;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace trusttune
