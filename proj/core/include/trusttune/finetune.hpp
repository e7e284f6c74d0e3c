#pragma once

#include <cstdint>
#include <vector>

#include "trusttune/objectives.hpp"
#include "trusttune/optimizer.hpp"

namespace trusttune {

struct FineTuneConfig {
    RegularizerConfig reg;
    AdamConfig adam;
    Schedule schedule;
    std::size_t batch_size = 8;
    double clip_norm = 0.1;  // 0 disables clipping
    std::size_t head_depth = 2;
};

// Standard vs Standard++ presets: they differ only in bias correction and the
// update budget.
FineTuneConfig default_finetune_config(Method method);

struct EpochRecord {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    double dev_accuracy = 0.0;
};

struct FineTuneResult {
    std::vector<EpochRecord> history;
    double best_dev_accuracy = 0.0;
    std::uint64_t best_step = 0;
    EncoderParams best_encoder;
    HeadParams best_head;
    CostCounter totals;
    bool failed = false;
    std::uint64_t failed_step = 0;
};

// Full training loop with the configured objective. Deterministic given the
// seed: init/data-order/noise draws come from the per-run named streams, so
// methods that skip the noise stream leave data order untouched. A divergent
// step (non-finite loss or gradient) marks the run failed instead of throwing.
FineTuneResult fine_tune(const EncoderParams& start_encoder, const TaskData& task,
                         const FineTuneConfig& cfg, std::uint64_t seed);

}  // namespace trusttune
