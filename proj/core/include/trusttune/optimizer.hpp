#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trusttune/tensor.hpp"

namespace trusttune {

// Polynomial-decay learning-rate schedule with linear warmup.
struct Schedule {
    double peak_lr = 1e-3;
    std::uint64_t warmup_updates = 0;
    std::uint64_t total_updates = 2000;
    double power = 1.0;
    double end_lr = 0.0;
};

// lr at update t (1-based). Warmup ramps linearly to peak_lr at t == W, then
// decays as end + (peak-end)*((T-t)/(T-W))^power, holding end_lr past T.
double lr_at(const Schedule& s, std::uint64_t t);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    double weight_decay = 0.01;
    bool bias_correction = true;  // the Standard vs Standard++ lever
};

// One Adam state per parameter tensor, keyed by name for error reporting.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor*>> params, AdamConfig cfg);

    // Consumes the gradients accumulated in each param's grad buffer, then
    // zeroes them. Weight decay is decoupled (applied to the parameter
    // directly, not through the moments).
    void step(double lr);

    std::uint64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Slot {
        std::string name;
        Tensor* param;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    std::uint64_t step_ = 0;
};

// Global-L2-norm gradient clipping over a set of gradient buffers.
// Returns the pre-clip norm. Buffers are left untouched when under the limit.
double clip_gradients(const std::vector<Tensor*>& params, double max_norm);

}  // namespace trusttune
