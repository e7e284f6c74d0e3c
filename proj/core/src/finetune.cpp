#include "trusttune/finetune.hpp"

#include <cmath>

#include "trusttune/errors.hpp"

namespace trusttune {

FineTuneConfig default_finetune_config(Method method) {
    FineTuneConfig cfg;
    cfg.reg.method = method;
    cfg.schedule.peak_lr = 1e-3;
    cfg.schedule.total_updates = 2000;
    cfg.schedule.warmup_updates = 120;  // 0.06 * total
    cfg.adam.bias_correction = false;
    if (method == Method::kStandardPP) {
        cfg.adam.bias_correction = true;
        cfg.schedule.total_updates = 3000;
        cfg.schedule.warmup_updates = 180;
    }
    return cfg;
}

FineTuneResult fine_tune(const EncoderParams& start_encoder, const TaskData& task,
                         const FineTuneConfig& cfg, std::uint64_t seed) {
    if (task.train.examples.empty() || task.dev.examples.empty())
        throw ConfigError("fine_tune: task needs train and dev splits");
    if (cfg.batch_size == 0) throw ConfigError("fine_tune: batch_size must be positive");

    RngStreams streams(seed);
    EncoderParams encoder = start_encoder;
    const bool spectral = cfg.reg.method == Method::kR4F;
    HeadParams head = HeadParams::init(encoder.config.embed_dim, task.spec.num_classes,
                                       cfg.head_depth, spectral, streams.init);

    std::vector<std::pair<std::string, Tensor*>> named = encoder.named_params();
    for (auto& np : head.named_params()) named.push_back(np);
    std::vector<Tensor*> all_params;
    for (auto& [name, t] : named) all_params.push_back(t);
    AdamOptimizer opt(named, cfg.adam);

    FineTuneResult result;
    result.best_encoder = encoder;
    result.best_head = head;

    std::vector<std::size_t> order(task.train.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    streams.data.shuffle(order);
    std::size_t cursor = 0;
    std::size_t epoch = 0;

    auto run_eval = [&](std::uint64_t step) {
        const double acc = evaluate_accuracy(encoder, head, task.dev);
        result.history.push_back({epoch, step, acc});
        // strict > keeps the earliest step on ties
        if (result.history.size() == 1 || acc > result.best_dev_accuracy) {
            result.best_dev_accuracy = acc;
            result.best_step = step;
            result.best_encoder = encoder;
            result.best_head = head;
        }
    };

    const std::uint64_t total = cfg.schedule.total_updates;
    for (std::uint64_t step = 1; step <= total; ++step) {
        BatchView batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                ++epoch;
                run_eval(step - 1);
                streams.data.shuffle(order);
                cursor = 0;
            }
            batch.push_back(&task.train.examples[order[cursor++]]);
        }

        for (Tensor* t : all_params) t->zero_grad();
        if (spectral) head.refresh_spectral(1);

        try {
            LossReport report = method_loss(encoder, head, batch, cfg.reg, streams.noise, &result.totals);
            if (!std::isfinite(report.total)) throw NumericError("non-finite loss");
            if (cfg.clip_norm > 0.0) clip_gradients(all_params, cfg.clip_norm);
            opt.step(lr_at(cfg.schedule, step));
        } catch (const NumericError&) {
            result.failed = true;
            result.failed_step = step;
            return result;
        }
    }
    ++epoch;
    run_eval(total);
    return result;
}

}  // namespace trusttune
