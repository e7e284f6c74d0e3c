#include "trusttune/objectives.hpp"

#include <cmath>

#include "trusttune/errors.hpp"

namespace trusttune {

const char* method_name(Method m) {
    switch (m) {
        case Method::kStandard: return "standard";
        case Method::kStandardPP: return "standard_pp";
        case Method::kR3F: return "r3f";
        case Method::kR4F: return "r4f";
        case Method::kSmart: return "smart";
        case Method::kFreeLB: return "freelb";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "standard") return Method::kStandard;
    if (name == "standard_pp") return Method::kStandardPP;
    if (name == "r3f") return Method::kR3F;
    if (name == "r4f") return Method::kR4F;
    if (name == "smart") return Method::kSmart;
    if (name == "freelb") return Method::kFreeLB;
    throw ConfigError("unknown method '" + name + "'");
}

namespace {

void validate_distribution(const std::vector<double>& probs) {
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw NumericError("invalid distribution: negative or NaN entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw NumericError("invalid distribution: sums to " + std::to_string(sum));
}

}  // namespace

double cross_entropy(const std::vector<double>& probs, std::size_t label) {
    validate_distribution(probs);
    if (label >= probs.size()) throw ShapeError("cross_entropy: label out of range");
    return -std::log(std::max(probs[label], kProbFloor));
}

double label_smoothing_loss(const std::vector<double>& probs, std::size_t label, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("label smoothing alpha must lie in [0,1)");
    validate_distribution(probs);
    if (label >= probs.size()) throw ShapeError("label_smoothing_loss: label out of range");
    const double q = static_cast<double>(probs.size());
    double loss = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        const double target = (c == label ? 1.0 - alpha : 0.0) + alpha / q;
        loss -= target * std::log(std::max(probs[c], kProbFloor));
    }
    return loss;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ShapeError("kl: dimension mismatch");
    validate_distribution(p);
    validate_distribution(q);
    double out = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;  // 0 ln 0 = 0
        if (q[i] < kProbFloor)
            throw NumericError("kl: infinite divergence (q has zero mass where p > 0)");
        out += p[i] * std::log(p[i] / q[i]);
    }
    return out;
}

double symmetric_kl(const std::vector<double>& p, const std::vector<double>& q) {
    return kl(p, q) + kl(q, p);
}

Tensor sample_noise(std::size_t rows, std::size_t cols, const RegularizerConfig& cfg, Rng& noise_rng) {
    if (cfg.sigma < 0.0) throw ConfigError("sample_noise: sigma must be >= 0");
    Tensor z = Tensor::zeros({rows, cols});
    if (cfg.sigma == 0.0) return z;
    if (cfg.noise_dist == NoiseDist::kNormal) {
        for (double& v : z.values) v = noise_rng.normal(0.0, cfg.sigma);
    } else {
        for (double& v : z.values) v = noise_rng.uniform(-cfg.sigma, cfg.sigma);
    }
    return z;
}

namespace {

// Task loss node from a log-probability row: plain CE, or CE against the
// label-smoothed target when alpha > 0.
NodeId task_loss_node(Graph& g, NodeId logp, int label, double alpha, std::size_t num_classes) {
    if (alpha == 0.0) {
        return g.scale(g.select(logp, static_cast<std::size_t>(label)), -1.0);
    }
    Tensor target = Tensor::zeros({1, num_classes});
    for (std::size_t c = 0; c < num_classes; ++c)
        target.values[c] = (c == static_cast<std::size_t>(label) ? 1.0 - alpha : 0.0) +
                           alpha / static_cast<double>(num_classes);
    return g.scale(g.sum_all(g.mul(g.constant(std::move(target)), logp)), -1.0);
}

NodeId mean_of(Graph& g, const std::vector<NodeId>& terms) {
    NodeId acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
    return g.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

// In-graph KL_S between two logits rows; gradient flows into both.
NodeId symmetric_kl_node(Graph& g, NodeId logits_p, NodeId logits_q) {
    NodeId lp = g.log_softmax_rows(logits_p);
    NodeId lq = g.log_softmax_rows(logits_q);
    NodeId p = g.softmax_rows(logits_p);
    NodeId q = g.softmax_rows(logits_q);
    NodeId diff = g.sub(lp, lq);
    NodeId kl_pq = g.sum_all(g.mul(p, diff));
    NodeId kl_qp = g.scale(g.sum_all(g.mul(q, diff)), -1.0);
    return g.add(kl_pq, kl_qp);
}

// KL_S(const p-bar || softmax(logits_q)) with only the q side in-graph.
NodeId symmetric_kl_vs_const(Graph& g, const std::vector<double>& p_bar, NodeId logits_q) {
    const std::size_t n = p_bar.size();
    Tensor p(Shape{1, n}, p_bar);
    Tensor log_p = Tensor::zeros({1, n});
    for (std::size_t i = 0; i < n; ++i) log_p.values[i] = std::log(std::max(p_bar[i], kProbFloor));
    NodeId pc = g.constant(std::move(p));
    NodeId lpc = g.constant(std::move(log_p));
    NodeId lq = g.log_softmax_rows(logits_q);
    NodeId q = g.softmax_rows(logits_q);
    NodeId diff = g.sub(lpc, lq);
    NodeId kl_pq = g.sum_all(g.mul(pc, diff));
    NodeId kl_qp = g.scale(g.sum_all(g.mul(q, diff)), -1.0);
    return g.add(kl_pq, kl_qp);
}

void check_loss_finite(double v, const char* what) {
    if (!std::isfinite(v))
        throw NumericError(std::string(what) + ": non-finite loss (degenerate output distribution?)");
}

double l2_radius(const RegularizerConfig& cfg, std::size_t rows, std::size_t cols) {
    return cfg.epsilon * std::sqrt(static_cast<double>(rows * cols));
}

void project_delta(Tensor& delta, const RegularizerConfig& cfg) {
    if (cfg.ascent_norm == AscentNorm::kLinf) {
        for (double& v : delta.values)
            v = std::min(cfg.epsilon, std::max(-cfg.epsilon, v));
        return;
    }
    const double radius = l2_radius(cfg, delta.rows(), delta.cols());
    double sq = 0.0;
    for (double v : delta.values) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > radius) {
        const double s = radius / norm;
        for (double& v : delta.values) v *= s;
    }
}

void record(CostCounter* totals, LossReport& report, std::uint64_t fp, std::uint64_t bp) {
    report.fp_used = fp;
    report.bp_used = bp;
    if (totals) totals->add(fp, bp);
}

// One projected-gradient-ascent phase on KL_S for a whole batch; deltas are
// updated in place. Each step is one batch-level forward + backward.
void run_smart_ascent(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                      const std::vector<std::vector<double>>& p_bars, std::vector<Tensor>& deltas,
                      const RegularizerConfig& cfg, CostCounter* totals) {
    for (std::size_t s = 0; s < cfg.ascent_steps; ++s) {
        Graph g;
        EncoderNodes enc = bind_encoder(g, encoder, /*trainable=*/false);
        HeadNodes hd = bind_head(g, head, /*trainable=*/false);
        std::vector<NodeId> kls;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            deltas[b].zero_grad();
            NodeId delta_node = g.param(deltas[b]);
            NodeId rep = encode_graph(g, enc, encoder.config, batch[b]->tokens, delta_node);
            NodeId logits = head_logits_graph(g, hd, rep);
            kls.push_back(symmetric_kl_vs_const(g, p_bars[b], logits));
        }
        NodeId objective = kls[0];
        for (std::size_t i = 1; i < kls.size(); ++i) objective = g.add(objective, kls[i]);
        g.count_forward_pass();
        g.backward(objective);
        if (totals) totals->add(1, 1);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            Tensor& d = deltas[b];
            for (std::size_t i = 0; i < d.values.size(); ++i)
                d.values[i] += cfg.ascent_lr * (*d.grad)[i];
            project_delta(d, cfg);
            d.zero_grad();
        }
    }
}

}  // namespace

LossReport standard_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                         const RegularizerConfig& cfg, CostCounter* totals) {
    Graph g;
    EncoderNodes enc = bind_encoder(g, encoder, /*trainable=*/true);
    HeadNodes hd = bind_head(g, head, /*trainable=*/true);
    std::vector<NodeId> terms;
    for (const Example* ex : batch) {
        NodeId rep = encode_graph(g, enc, encoder.config, ex->tokens);
        NodeId logp = g.log_softmax_rows(head_logits_graph(g, hd, rep));
        terms.push_back(task_loss_node(g, logp, ex->label, cfg.label_smoothing_alpha, head.out_dim()));
    }
    NodeId loss = mean_of(g, terms);
    g.count_forward_pass();
    LossReport report;
    report.task_term = g.scalar_value(loss);
    report.total = report.task_term;
    check_loss_finite(report.total, "standard_loss");
    g.backward(loss);
    record(totals, report, 1, 1);
    return report;
}

LossReport r3f_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                    const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals) {
    if (cfg.method == Method::kR4F && !head.spectral_enabled)
        throw ConfigError("r4f requires a spectrally normalized head");

    Graph g;
    EncoderNodes enc = bind_encoder(g, encoder, /*trainable=*/true);
    HeadNodes hd = bind_head(g, head, /*trainable=*/true);

    // Clean pass.
    std::vector<NodeId> task_terms;
    std::vector<NodeId> clean_logits;
    for (const Example* ex : batch) {
        NodeId rep = encode_graph(g, enc, encoder.config, ex->tokens);
        NodeId logits = head_logits_graph(g, hd, rep);
        clean_logits.push_back(logits);
        NodeId logp = g.log_softmax_rows(logits);
        task_terms.push_back(task_loss_node(g, logp, ex->label, cfg.label_smoothing_alpha, head.out_dim()));
    }
    NodeId task_mean = mean_of(g, task_terms);
    g.count_forward_pass();

    // Noisy pass, fresh z per example per step.
    std::vector<NodeId> kl_terms;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Tensor z = sample_noise(batch[b]->tokens.size(), encoder.config.embed_dim, cfg, noise_rng);
        NodeId rep = encode_graph(g, enc, encoder.config, batch[b]->tokens, g.constant(std::move(z)));
        NodeId logits = head_logits_graph(g, hd, rep);
        kl_terms.push_back(symmetric_kl_node(g, clean_logits[b], logits));
    }
    NodeId reg_mean = mean_of(g, kl_terms);
    g.count_forward_pass();

    LossReport report;
    report.task_term = g.scalar_value(task_mean);
    report.reg_term = g.scalar_value(reg_mean);

    // With lambda == 0 the regularizer branch stays disconnected from the
    // loss, which keeps the backward pass (and the resulting trajectory)
    // bitwise identical to standard training.
    NodeId loss = (cfg.lambda == 0.0)
                      ? task_mean
                      : g.add(task_mean, g.scale(reg_mean, cfg.lambda));
    report.total = g.scalar_value(loss);
    check_loss_finite(report.total, "r3f_loss");
    g.backward(loss);
    record(totals, report, 2, 1);
    return report;
}

Tensor smart_inner_ascent(EncoderParams& encoder, HeadParams& head, const Example& example,
                          const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals) {
    if (cfg.ascent_steps < 1) throw ConfigError("smart: ascent_steps must be >= 1");
    if (cfg.epsilon <= 0.0) throw ConfigError("smart: epsilon must be > 0");

    // Clean output distribution, fixed during the ascent. Not a counted pass
    // here: in training it is the step's already-recorded clean pass.
    Tensor rep = encode(encoder, example.tokens);
    std::vector<double> p_bar = head_forward(head, rep).values;

    std::vector<Tensor> deltas;
    deltas.push_back(sample_noise(example.tokens.size(), encoder.config.embed_dim, cfg, noise_rng));
    BatchView batch{&example};
    std::vector<std::vector<double>> p_bars{p_bar};
    run_smart_ascent(encoder, head, batch, p_bars, deltas, cfg, totals);
    return deltas[0];
}

LossReport smart_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                      const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals) {
    if (cfg.ascent_steps < 1) throw ConfigError("smart: ascent_steps must be >= 1");
    if (cfg.epsilon <= 0.0) throw ConfigError("smart: epsilon must be > 0");

    Graph g;
    EncoderNodes enc = bind_encoder(g, encoder, /*trainable=*/true);
    HeadNodes hd = bind_head(g, head, /*trainable=*/true);

    // Clean pass; its distributions double as the ascent's fixed targets.
    std::vector<NodeId> task_terms;
    std::vector<NodeId> clean_logits;
    std::vector<std::vector<double>> p_bars;
    for (const Example* ex : batch) {
        NodeId rep = encode_graph(g, enc, encoder.config, ex->tokens);
        NodeId logits = head_logits_graph(g, hd, rep);
        clean_logits.push_back(logits);
        p_bars.push_back(g.value(g.softmax_rows(logits)).values);
        NodeId logp = g.log_softmax_rows(logits);
        task_terms.push_back(task_loss_node(g, logp, ex->label, cfg.label_smoothing_alpha, head.out_dim()));
    }
    NodeId task_mean = mean_of(g, task_terms);
    g.count_forward_pass();

    std::vector<Tensor> deltas;
    deltas.reserve(batch.size());
    for (const Example* ex : batch)
        deltas.push_back(sample_noise(ex->tokens.size(), encoder.config.embed_dim, cfg, noise_rng));
    run_smart_ascent(encoder, head, batch, p_bars, deltas, cfg, totals);

    // Perturbed branch at the final delta. Its evaluation shares the step's
    // accounting with the ascent (the 1+S forward scheme); delta is a
    // constant in the final backward.
    std::vector<NodeId> kl_terms;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        NodeId rep = encode_graph(g, enc, encoder.config, batch[b]->tokens, g.constant(deltas[b]));
        NodeId logits = head_logits_graph(g, hd, rep);
        kl_terms.push_back(symmetric_kl_node(g, clean_logits[b], logits));
    }
    NodeId reg_mean = mean_of(g, kl_terms);

    LossReport report;
    report.task_term = g.scalar_value(task_mean);
    report.reg_term = g.scalar_value(reg_mean);
    NodeId loss = (cfg.lambda == 0.0) ? task_mean : g.add(task_mean, g.scale(reg_mean, cfg.lambda));
    report.total = g.scalar_value(loss);
    check_loss_finite(report.total, "smart_loss");
    g.backward(loss);
    if (totals) totals->add(1, 1);  // the clean pass + the final backward
    report.fp_used = 1 + cfg.ascent_steps;
    report.bp_used = 1 + cfg.ascent_steps;
    return report;
}

LossReport freelb_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                       const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals,
                       std::vector<std::vector<Tensor>>* trajectory) {
    if (cfg.ascent_steps < 1) throw ConfigError("freelb: ascent_steps must be >= 1");
    if (cfg.epsilon <= 0.0) throw ConfigError("freelb: epsilon must be > 0");
    if (trajectory) trajectory->clear();

    const std::size_t iterates = cfg.ascent_steps + 1;
    std::vector<Tensor> deltas;
    deltas.reserve(batch.size());
    for (const Example* ex : batch) {
        Tensor d = Tensor::zeros({ex->tokens.size(), encoder.config.embed_dim});
        for (double& v : d.values) v = noise_rng.uniform(-cfg.epsilon, cfg.epsilon);
        deltas.push_back(std::move(d));
    }

    double loss_sum = 0.0;
    for (std::size_t s = 0; s < iterates; ++s) {
        if (trajectory) {
            std::vector<Tensor> snapshot;
            for (const Tensor& d : deltas) {
                Tensor copy = d;
                copy.grad.reset();
                snapshot.push_back(std::move(copy));
            }
            trajectory->push_back(std::move(snapshot));
        }
        Graph g;
        EncoderNodes enc = bind_encoder(g, encoder, /*trainable=*/true);
        HeadNodes hd = bind_head(g, head, /*trainable=*/true);
        std::vector<NodeId> terms;
        std::vector<NodeId> delta_nodes;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            deltas[b].zero_grad();
            NodeId delta_node = g.param(deltas[b]);
            delta_nodes.push_back(delta_node);
            NodeId rep = encode_graph(g, enc, encoder.config, batch[b]->tokens, delta_node);
            NodeId logp = g.log_softmax_rows(head_logits_graph(g, hd, rep));
            terms.push_back(
                task_loss_node(g, logp, batch[b]->label, cfg.label_smoothing_alpha, head.out_dim()));
        }
        // Averaging over iterates happens in-graph so the accumulated
        // parameter gradients are exactly the gradient of the reported loss.
        NodeId loss = g.scale(mean_of(g, terms), 1.0 / static_cast<double>(iterates));
        g.count_forward_pass();
        const double value = g.scalar_value(loss) * static_cast<double>(iterates);
        check_loss_finite(value, "freelb_loss");
        loss_sum += value;
        g.backward(loss);
        if (totals) totals->add(1, 1);
        if (s + 1 < iterates) {
            const double ascent_scale = cfg.ascent_lr * static_cast<double>(iterates);
            for (std::size_t b = 0; b < batch.size(); ++b) {
                Tensor& d = deltas[b];
                for (std::size_t i = 0; i < d.values.size(); ++i)
                    d.values[i] += ascent_scale * (*d.grad)[i] * static_cast<double>(batch.size());
                project_delta(d, cfg);
            }
        }
        for (Tensor& d : deltas) d.zero_grad();
    }

    LossReport report;
    report.task_term = loss_sum / static_cast<double>(iterates);
    report.total = report.task_term;
    report.reg_term = 0.0;
    report.fp_used = iterates;
    report.bp_used = iterates;
    return report;
}

LossReport method_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                       const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals) {
    if (batch.empty()) throw ConfigError("empty batch");
    switch (cfg.method) {
        case Method::kStandard:
        case Method::kStandardPP:
            return standard_loss(encoder, head, batch, cfg, totals);
        case Method::kR3F:
        case Method::kR4F:
            return r3f_loss(encoder, head, batch, cfg, noise_rng, totals);
        case Method::kSmart:
            return smart_loss(encoder, head, batch, cfg, noise_rng, totals);
        case Method::kFreeLB:
            return freelb_loss(encoder, head, batch, cfg, noise_rng, totals);
    }
    throw Error("unreachable");
}

double evaluate_accuracy(EncoderParams& encoder, const HeadParams& head, const Split& split) {
    HeadParams eval_head = head;
    eval_head.refresh_spectral(25);
    std::size_t hits = 0;
    for (const Example& ex : split.examples) {
        Graph g;
        EncoderNodes enc = bind_encoder(g, encoder, /*trainable=*/false);
        HeadNodes hd = bind_head(g, eval_head, /*trainable=*/false);
        NodeId rep = encode_graph(g, enc, encoder.config, ex.tokens);
        const Tensor& probs = g.value(head_forward_graph(g, hd, rep));
        std::size_t best = 0;
        for (std::size_t j = 1; j < probs.size(); ++j)
            if (probs.values[j] > probs.values[best]) best = j;
        if (static_cast<int>(best) == ex.label) ++hits;
    }
    return split.examples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(split.examples.size());
}

}  // namespace trusttune
