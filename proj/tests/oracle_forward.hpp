#pragma once

// Test-only straight-line recomputation of the model forward and the training
// objectives: plain loops, no compute graph. Used as the independent oracle
// against the autodiff path.

#include <cmath>
#include <vector>

#include "trusttune/encoder.hpp"
#include "trusttune/head.hpp"
#include "trusttune/objectives.hpp"

namespace oracle {

using trusttune::EncoderParams;
using trusttune::HeadParams;
using trusttune::Tensor;

inline std::vector<double> matmul_plain(const std::vector<double>& a, std::size_t ar, std::size_t ac,
                                        const std::vector<double>& b, std::size_t bc) {
    std::vector<double> out(ar * bc, 0.0);
    for (std::size_t i = 0; i < ar; ++i)
        for (std::size_t j = 0; j < bc; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < ac; ++t) acc += a[i * ac + t] * b[t * bc + j];
            out[i * bc + j] = acc;
        }
    return out;
}

inline void softmax_rows_plain(std::vector<double>& x, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* r = x.data() + i * cols;
        double mx = r[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        for (std::size_t j = 0; j < cols; ++j) r[j] /= sum;
    }
}

inline std::vector<double> log_softmax_plain(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

inline void layer_norm_plain(std::vector<double>& x, std::size_t rows, std::size_t cols,
                             const std::vector<double>& gain, const std::vector<double>& bias) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* r = x.data() + i * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += r[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (r[j] - mean) * (r[j] - mean);
        var /= static_cast<double>(cols);
        const double inv_std = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < cols; ++j) r[j] = gain[j] * (r[j] - mean) * inv_std + bias[j];
    }
}

// Pooled representation (first-token pooling), optional additive perturbation.
inline std::vector<double> encode_plain(const EncoderParams& p, const std::vector<int>& tokens,
                                        const Tensor* perturbation = nullptr) {
    const std::size_t m = tokens.size(), n = p.config.embed_dim;
    std::vector<double> x(m * n);
    Tensor pe = trusttune::position_encodings(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            x[i * n + j] = p.embedding.values[static_cast<std::size_t>(tokens[i]) * n + j] + pe.values[i * n + j];
    if (perturbation)
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += perturbation->values[i];

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(n));
    for (const auto& blk : p.blocks) {
        auto q = matmul_plain(x, m, n, blk.wq.values, n);
        auto k = matmul_plain(x, m, n, blk.wk.values, n);
        auto v = matmul_plain(x, m, n, blk.wv.values, n);
        std::vector<double> att(m * m, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < n; ++t) acc += q[i * n + t] * k[j * n + t];
                att[i * m + j] = acc * inv_sqrt;
            }
        softmax_rows_plain(att, m, m);
        auto ctx = matmul_plain(att, m, m, v, n);
        auto proj = matmul_plain(ctx, m, n, blk.wo.values, n);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += proj[i];
        layer_norm_plain(x, m, n, blk.ln1_gain.values, blk.ln1_bias.values);
        auto h = matmul_plain(x, m, n, blk.w1.values, p.config.ffn_hidden);
        for (double& val : h) val = std::tanh(val);
        auto ffn = matmul_plain(h, m, p.config.ffn_hidden, blk.w2.values, n);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += ffn[i];
        layer_norm_plain(x, m, n, blk.ln2_gain.values, blk.ln2_bias.values);
    }
    return std::vector<double>(x.begin(), x.begin() + static_cast<long>(n));
}

inline std::vector<double> head_logits_plain(const HeadParams& head, std::vector<double> x) {
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
        const auto& layer = head.layers[l];
        std::vector<double> w = layer.weight.values;
        if (head.spectral_enabled) {
            // sigma-hat summed in flat row-major order, matching the graph
            double sigma = 0.0;
            const std::size_t r = layer.weight.rows(), c = layer.weight.cols();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    sigma += w[i * c + j] * layer.spectral.u[i] * layer.spectral.v[j];
            const double inv = 1.0 / sigma;
            for (double& val : w) val *= inv;
        }
        std::vector<double> y = matmul_plain(x, 1, layer.weight.rows(), w, layer.weight.cols());
        for (std::size_t j = 0; j < y.size(); ++j) y[j] += layer.bias.values[j];
        if (l + 1 < head.layers.size())
            for (double& val : y) val = std::tanh(val);
        x = std::move(y);
    }
    return x;
}

inline double ce_from_logits_plain(const std::vector<double>& logits, int label) {
    return -log_softmax_plain(logits)[static_cast<std::size_t>(label)];
}

inline double kls_from_logits_plain(const std::vector<double>& lp_logits,
                                    const std::vector<double>& lq_logits) {
    const auto lp = log_softmax_plain(lp_logits);
    const auto lq = log_softmax_plain(lq_logits);
    double kl_pq = 0.0, kl_qp = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
        const double p = std::exp(lp[i]);
        const double q = std::exp(lq[i]);
        kl_pq += p * (lp[i] - lq[i]);
        kl_qp += q * (lq[i] - lp[i]);
    }
    return kl_pq + kl_qp;
}

}  // namespace oracle
