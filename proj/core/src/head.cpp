#include "trusttune/head.hpp"

#include <cmath>

#include "trusttune/errors.hpp"
#include "trusttune/hash.hpp"

namespace trusttune {

namespace {

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void normalize_or_throw(std::vector<double>& v) {
    const double n = vec_norm(v);
    if (n == 0.0) throw NumericError("spectral_normalize: zero matrix has no defined scale");
    for (double& x : v) x /= n;
}

}  // namespace

SpectralState SpectralState::init(std::size_t rows, std::size_t cols, Rng& rng) {
    SpectralState s;
    s.u.resize(rows);
    s.v.resize(cols);
    for (double& x : s.u) x = rng.normal();
    for (double& x : s.v) x = rng.normal();
    normalize_or_throw(s.u);
    normalize_or_throw(s.v);
    return s;
}

double power_iterate(const Tensor& w, SpectralState& state, std::size_t iters) {
    if (!w.is_matrix()) throw ShapeError("spectral_normalize: weight must be a matrix");
    if (iters < 1) throw ConfigError("spectral_normalize: iters must be >= 1");
    const std::size_t r = w.rows(), c = w.cols();
    if (state.u.size() != r || state.v.size() != c)
        throw ShapeError("spectral state does not match weight shape");

    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < r; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += w.values[i * c + j] * state.v[j];
            state.u[i] = acc;
        }
        normalize_or_throw(state.u);
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < r; ++i) acc += w.values[i * c + j] * state.u[i];
            state.v[j] = acc;
        }
        normalize_or_throw(state.v);
    }
    double sigma = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += w.values[i * c + j] * state.v[j];
        sigma += state.u[i] * acc;
    }
    return sigma;
}

Tensor spectral_normalize(const Tensor& w, SpectralState& state, std::size_t iters, double* sigma_out) {
    const double sigma = power_iterate(w, state, iters);
    if (sigma == 0.0) throw NumericError("spectral_normalize: estimated spectral norm is zero");
    Tensor out = w;
    for (double& v : out.values) v /= sigma;
    if (sigma_out) *sigma_out = sigma;
    return out;
}

HeadParams HeadParams::init(std::size_t in_dim, std::size_t out_dim, std::size_t depth, bool spectral,
                            Rng& init_rng) {
    if (depth < 1) throw ConfigError("head: depth must be >= 1");
    HeadParams p;
    p.spectral_enabled = spectral;
    std::size_t cur = in_dim;
    for (std::size_t l = 0; l < depth; ++l) {
        const std::size_t next = (l + 1 == depth) ? out_dim : in_dim;
        HeadLayer layer;
        layer.weight = Tensor::zeros({cur, next});
        const double stddev = 1.0 / std::sqrt(static_cast<double>(cur));
        for (double& v : layer.weight.values) v = init_rng.normal(0.0, stddev);
        layer.bias = Tensor::zeros({next});
        layer.spectral = SpectralState::init(cur, next, init_rng);
        p.layers.push_back(std::move(layer));
        cur = next;
    }
    return p;
}

std::vector<std::pair<std::string, Tensor*>> HeadParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        out.emplace_back("head" + std::to_string(l) + ".weight", &layers[l].weight);
        out.emplace_back("head" + std::to_string(l) + ".bias", &layers[l].bias);
    }
    return out;
}

std::vector<Tensor*> HeadParams::params() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

void HeadParams::zero_grads() {
    for (Tensor* t : params()) t->zero_grad();
}

std::uint64_t HeadParams::fingerprint() const {
    Fnv1a64 h;
    h.update_u64(spectral_enabled ? 1 : 0);
    auto& self = const_cast<HeadParams&>(*this);
    for (auto& [name, t] : self.named_params()) {
        h.update(name);
        h.update_f64(t->values);
    }
    return h.digest();
}

void HeadParams::refresh_spectral(std::size_t iters) {
    if (!spectral_enabled) return;
    for (HeadLayer& layer : layers) power_iterate(layer.weight, layer.spectral, iters);
}

double sigma_estimate(const Tensor& w, const SpectralState& state) {
    const std::size_t r = w.rows(), c = w.cols();
    double sigma = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += w.values[i * c + j] * state.v[j];
        sigma += state.u[i] * acc;
    }
    return sigma;
}

double HeadParams::effective_sigma(std::size_t layer, std::size_t iters) const {
    const HeadLayer& l = layers.at(layer);
    const double sigma = sigma_estimate(l.weight, l.spectral);
    if (sigma == 0.0) throw NumericError("spectral_normalize: estimated spectral norm is zero");
    Tensor eff = l.weight;
    for (double& v : eff.values) v /= sigma;
    SpectralState probe_state = l.spectral;
    return power_iterate(eff, probe_state, iters);
}

HeadNodes bind_head(Graph& g, HeadParams& p, bool trainable) {
    HeadNodes nodes;
    for (HeadLayer& layer : p.layers) {
        NodeId w = trainable ? g.param(layer.weight) : g.constant(layer.weight);
        if (p.spectral_enabled) {
            if (!layer.spectral.initialized()) throw InvariantViolation("spectral state not initialized");
            // sigma-hat = u^T W v built in-graph from the persistent u, v so
            // gradients see the normalization.
            const std::size_t r = layer.weight.rows(), c = layer.weight.cols();
            Tensor outer = Tensor::zeros({r, c});
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    outer.values[i * c + j] = layer.spectral.u[i] * layer.spectral.v[j];
            NodeId sigma = g.sum_all(g.mul(w, g.constant(std::move(outer))));
            w = g.scale_by(w, g.reciprocal(sigma));
        }
        nodes.weights.push_back(w);
        nodes.biases.push_back(trainable ? g.param(layer.bias) : g.constant(layer.bias));
    }
    return nodes;
}

NodeId head_logits_graph(Graph& g, const HeadNodes& nodes, NodeId rep) {
    NodeId x = rep;
    for (std::size_t l = 0; l < nodes.weights.size(); ++l) {
        x = g.add_row_bias(g.matmul(x, nodes.weights[l]), nodes.biases[l]);
        if (l + 1 < nodes.weights.size()) x = g.tanh_op(x);
    }
    return x;
}

NodeId head_forward_graph(Graph& g, const HeadNodes& nodes, NodeId rep) {
    return g.softmax_rows(head_logits_graph(g, nodes, rep));
}

Tensor head_forward(HeadParams& p, const Tensor& representation) {
    if (!representation.all_finite()) throw NumericError("head_forward: non-finite representation");
    Graph g;
    HeadNodes nodes = bind_head(g, p, /*trainable=*/false);
    Tensor rep = representation;
    if (rep.shape.size() == 1) rep = Tensor({1, rep.shape[0]}, rep.values);
    NodeId probs = head_forward_graph(g, nodes, g.constant(rep));
    return g.value(probs);
}

}  // namespace trusttune
