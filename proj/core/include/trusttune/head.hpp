#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trusttune/graph.hpp"
#include "trusttune/rng.hpp"
#include "trusttune/tensor.hpp"

namespace trusttune {

// Persistent power-iteration vectors for one weight matrix.
struct SpectralState {
    std::vector<double> u;  // length rows(W)
    std::vector<double> v;  // length cols(W)

    static SpectralState init(std::size_t rows, std::size_t cols, Rng& rng);
    bool initialized() const { return !u.empty(); }
};

// One power-iteration round is u <- normalize(Wv), v <- normalize(W^T u);
// sigma-hat = u^T W v after `iters` rounds. Errors on an all-zero matrix.
double power_iterate(const Tensor& w, SpectralState& state, std::size_t iters);

// W / sigma-hat with the state persisted by the caller.
Tensor spectral_normalize(const Tensor& w, SpectralState& state, std::size_t iters,
                          double* sigma_out = nullptr);

// u^T W v for the current state, without advancing it.
double sigma_estimate(const Tensor& w, const SpectralState& state);

struct HeadLayer {
    Tensor weight;  // in x out
    Tensor bias;    // (out,)
    SpectralState spectral;
};

// Classification head: affine layers with tanh between, softmax on top. With
// spectral_enabled every weight used in a forward is W / sigma-hat.
struct HeadParams {
    std::vector<HeadLayer> layers;
    bool spectral_enabled = false;

    static HeadParams init(std::size_t in_dim, std::size_t out_dim, std::size_t depth,
                           bool spectral, Rng& init_rng);

    std::size_t out_dim() const { return layers.back().bias.shape[0]; }
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<Tensor*> params();
    void zero_grads();
    std::uint64_t fingerprint() const;

    // Refreshes every layer's power-iteration state (no-op when disabled).
    // Training uses 1 round per step; evaluation snapshots use 25.
    void refresh_spectral(std::size_t iters);
    // Current sigma-hat of a layer's effective (normalized) weight.
    double effective_sigma(std::size_t layer, std::size_t iters = 25) const;
};

struct HeadNodes {
    std::vector<NodeId> weights;  // normalized in-graph when spectral is on
    std::vector<NodeId> biases;
};

HeadNodes bind_head(Graph& g, HeadParams& p, bool trainable);

// rep (1 x p) -> logits (1 x q).
NodeId head_logits_graph(Graph& g, const HeadNodes& nodes, NodeId rep);
// rep -> probability row (softmax of logits).
NodeId head_forward_graph(Graph& g, const HeadNodes& nodes, NodeId rep);

// Evaluation wrapper; errors on non-finite input.
Tensor head_forward(HeadParams& p, const Tensor& representation);

}  // namespace trusttune
