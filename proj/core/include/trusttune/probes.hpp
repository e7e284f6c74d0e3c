#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trusttune/finetune.hpp"

namespace trusttune {

struct ProbeConfig {
    double lr = 1e-2;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
};

struct ProbeResult {
    std::string probe_task;
    double accuracy = 0.0;  // best dev accuracy over the probe epochs
    std::uint64_t encoder_fingerprint = 0;
    std::size_t probe_epochs = 0;
};

// Linear probing on frozen representations: caches one representation per
// example, then trains a fresh single linear layer + softmax on top. Only the
// linear layer updates; the encoder fingerprint is verified unchanged before
// and after (hard invariant, not an assumption).
ProbeResult probe(EncoderParams& frozen_encoder, const TaskData& probe_task, const ProbeConfig& cfg,
                  std::uint64_t seed);

struct ProbeStage {
    std::size_t stage_index = 0;  // execution order, 0-based
    std::string stage_task;       // task fine-tuned at this stage ("none" for baselines)
    std::size_t cycle = 0;        // 0 outside cyclic experiments
    ProbeResult probe;
};

// One chain run: stages in execution order, each fine-tune starting from the
// previous stage's best checkpoint.
struct ChainResult {
    Method method = Method::kStandard;
    std::uint64_t seed = 0;
    std::vector<ProbeStage> stages;
    bool failed = false;
};

struct ProbeMatrixCell {
    std::string method;  // method name or "none" for the pretrained baseline
    std::uint64_t seed = 0;
    std::string probe_task;
    double accuracy = 0.0;
    bool failed = false;
};

// Fig. 3 analog: fine-tune on the source per method and seed, then probe all
// targets on the frozen result. Includes the unfine-tuned "none" baseline.
std::vector<ProbeMatrixCell> generalization_probe_matrix(
    const EncoderParams& pretrained, const TaskData& source, const std::vector<TaskData>& probe_tasks,
    const std::vector<Method>& methods, const std::vector<std::uint64_t>& seeds,
    const FineTuneConfig& ft_cfg, const ProbeConfig& probe_cfg);

// Fig. 4 analog: fine-tune source, then each chain task in order, probing the
// source task after every stage. Result has 1 + |chain| stages.
ChainResult sequential_degradation(const EncoderParams& pretrained, const TaskData& source,
                                   const std::vector<TaskData>& chain, Method method,
                                   const FineTuneConfig& ft_cfg, const ProbeConfig& probe_cfg,
                                   std::uint64_t seed);

// Fig. 5 analog: walk the task cycle `cycles` times; at each stage the
// stage's task is probed on the incoming encoder, then fine-tuned. Each task
// is probed exactly `cycles` times.
ChainResult cyclic_retention(const EncoderParams& pretrained, const std::vector<TaskData>& task_cycle,
                             std::size_t cycles, Method method, const FineTuneConfig& ft_cfg,
                             const ProbeConfig& probe_cfg, std::uint64_t seed);

double median(std::vector<double> values);

}  // namespace trusttune
