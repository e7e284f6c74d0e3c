#include "trusttune/probes.hpp"

#include <algorithm>
#include <cmath>

#include "trusttune/errors.hpp"

namespace trusttune {

namespace {

std::vector<Tensor> cache_representations(EncoderParams& encoder, const Split& split) {
    std::vector<Tensor> reps;
    reps.reserve(split.examples.size());
    for (const Example& ex : split.examples) {
        Tensor rep = encode(encoder, ex.tokens);
        if (rep.shape.size() == 1) rep = Tensor({1, rep.shape[0]}, rep.values);
        reps.push_back(std::move(rep));
    }
    return reps;
}

double linear_probe_accuracy(const std::vector<Tensor>& feats, const Split& split, const Tensor& w,
                             const Tensor& b) {
    std::size_t hits = 0;
    const std::size_t q = b.shape[0];
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const Tensor& f = feats[i];
        std::size_t best = 0;
        double best_v = -1e300;
        for (std::size_t c = 0; c < q; ++c) {
            double logit = b.values[c];
            for (std::size_t j = 0; j < f.size(); ++j) logit += f.values[j] * w.values[j * q + c];
            if (logit > best_v) {
                best_v = logit;
                best = c;
            }
        }
        if (static_cast<int>(best) == split.examples[i].label) ++hits;
    }
    return feats.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(feats.size());
}

}  // namespace

ProbeResult probe(EncoderParams& frozen_encoder, const TaskData& probe_task, const ProbeConfig& cfg,
                  std::uint64_t seed) {
    const std::uint64_t fingerprint_before = frozen_encoder.fingerprint();

    const auto train_feats = cache_representations(frozen_encoder, probe_task.train);
    const auto dev_feats = cache_representations(frozen_encoder, probe_task.dev);

    Rng probe_rng(stream_seed(seed, "probe-init"));
    const std::size_t n = frozen_encoder.config.embed_dim;
    const std::size_t q = probe_task.spec.num_classes;
    Tensor w = Tensor::zeros({n, q});
    const double stddev = 1.0 / std::sqrt(static_cast<double>(n));
    for (double& v : w.values) v = probe_rng.normal(0.0, stddev);
    Tensor b = Tensor::zeros({q});

    AdamConfig adam_cfg;
    adam_cfg.weight_decay = 0.0;
    adam_cfg.bias_correction = true;
    AdamOptimizer opt({{"probe.weight", &w}, {"probe.bias", &b}}, adam_cfg);

    std::vector<std::size_t> order(train_feats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best = -1.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        probe_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            Graph g;
            NodeId wn = g.param(w);
            NodeId bn = g.param(b);
            std::vector<NodeId> terms;
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                NodeId logits = g.add_row_bias(g.matmul(g.constant(train_feats[i]), wn), bn);
                NodeId logp = g.log_softmax_rows(logits);
                terms.push_back(g.scale(
                    g.select(logp, static_cast<std::size_t>(probe_task.train.examples[i].label)), -1.0));
            }
            NodeId acc = terms[0];
            for (std::size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
            NodeId loss = g.scale(acc, 1.0 / static_cast<double>(terms.size()));
            g.count_forward_pass();
            w.zero_grad();
            b.zero_grad();
            g.backward(loss);
            opt.step(cfg.lr);
        }
        best = std::max(best, linear_probe_accuracy(dev_feats, probe_task.dev, w, b));
    }

    const std::uint64_t fingerprint_after = frozen_encoder.fingerprint();
    if (fingerprint_before != fingerprint_after)
        throw InvariantViolation("probe: frozen encoder changed during probing");

    ProbeResult result;
    result.probe_task = probe_task.spec.name;
    result.accuracy = best;
    result.encoder_fingerprint = fingerprint_after;
    result.probe_epochs = cfg.epochs;
    return result;
}

std::vector<ProbeMatrixCell> generalization_probe_matrix(
    const EncoderParams& pretrained, const TaskData& source, const std::vector<TaskData>& probe_tasks,
    const std::vector<Method>& methods, const std::vector<std::uint64_t>& seeds,
    const FineTuneConfig& ft_cfg, const ProbeConfig& probe_cfg) {
    std::vector<ProbeMatrixCell> cells;

    // Unfine-tuned baseline column.
    for (std::uint64_t seed : seeds) {
        EncoderParams base = pretrained;
        for (const TaskData& pt : probe_tasks) {
            ProbeResult pr = probe(base, pt, probe_cfg, seed);
            cells.push_back({"none", seed, pt.spec.name, pr.accuracy, false});
        }
    }

    for (Method method : methods) {
        FineTuneConfig cfg = ft_cfg;
        cfg.reg.method = method;
        for (std::uint64_t seed : seeds) {
            FineTuneResult ft = fine_tune(pretrained, source, cfg, seed);
            for (const TaskData& pt : probe_tasks) {
                ProbeMatrixCell cell;
                cell.method = method_name(method);
                cell.seed = seed;
                cell.probe_task = pt.spec.name;
                cell.failed = ft.failed;
                if (!ft.failed) {
                    ProbeResult pr = probe(ft.best_encoder, pt, probe_cfg, seed);
                    cell.accuracy = pr.accuracy;
                }
                cells.push_back(std::move(cell));
            }
        }
    }
    return cells;
}

ChainResult sequential_degradation(const EncoderParams& pretrained, const TaskData& source,
                                   const std::vector<TaskData>& chain, Method method,
                                   const FineTuneConfig& ft_cfg, const ProbeConfig& probe_cfg,
                                   std::uint64_t seed) {
    ChainResult result;
    result.method = method;
    result.seed = seed;

    FineTuneConfig cfg = ft_cfg;
    cfg.reg.method = method;

    FineTuneResult stage = fine_tune(pretrained, source, cfg, seed);
    if (stage.failed) {
        result.failed = true;
        return result;
    }
    EncoderParams current = stage.best_encoder;
    result.stages.push_back({0, source.spec.name, 0, probe(current, source, probe_cfg, seed)});

    for (std::size_t i = 0; i < chain.size(); ++i) {
        stage = fine_tune(current, chain[i], cfg, seed);
        if (stage.failed) {
            result.failed = true;
            return result;
        }
        current = stage.best_encoder;
        result.stages.push_back({i + 1, chain[i].spec.name, 0, probe(current, source, probe_cfg, seed)});
    }
    return result;
}

ChainResult cyclic_retention(const EncoderParams& pretrained, const std::vector<TaskData>& task_cycle,
                             std::size_t cycles, Method method, const FineTuneConfig& ft_cfg,
                             const ProbeConfig& probe_cfg, std::uint64_t seed) {
    if (cycles < 2) throw ConfigError("cyclic_retention: cycles must be >= 2");
    ChainResult result;
    result.method = method;
    result.seed = seed;

    FineTuneConfig cfg = ft_cfg;
    cfg.reg.method = method;

    EncoderParams current = pretrained;
    std::size_t stage_index = 0;
    for (std::size_t cycle = 1; cycle <= cycles; ++cycle) {
        for (const TaskData& task : task_cycle) {
            // Probe the stage task as the encoder arrives, then fine-tune it.
            result.stages.push_back({stage_index, task.spec.name, cycle, probe(current, task, probe_cfg, seed)});
            FineTuneResult stage = fine_tune(current, task, cfg, seed);
            if (stage.failed) {
                result.failed = true;
                return result;
            }
            current = stage.best_encoder;
            ++stage_index;
        }
    }
    return result;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ConfigError("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace trusttune
