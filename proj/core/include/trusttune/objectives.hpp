#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trusttune/encoder.hpp"
#include "trusttune/head.hpp"
#include "trusttune/rng.hpp"
#include "trusttune/tasks.hpp"

namespace trusttune {

enum class Method { kStandard, kStandardPP, kR3F, kR4F, kSmart, kFreeLB };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

enum class NoiseDist { kNormal, kUniform };
enum class AscentNorm { kL2, kLinf };

struct RegularizerConfig {
    Method method = Method::kStandard;
    double lambda = 1.0;
    NoiseDist noise_dist = NoiseDist::kUniform;
    double sigma = 1e-5;
    double epsilon = 1e-5;        // ascent ball radius (scaled by sqrt(m*n) for L2)
    std::size_t ascent_steps = 1; // S >= 1
    double ascent_lr = 1e-3;      // eta
    AscentNorm ascent_norm = AscentNorm::kL2;
    double label_smoothing_alpha = 0.0;
};

struct LossReport {
    double total = 0.0;
    double task_term = 0.0;
    double reg_term = 0.0;
    std::uint64_t fp_used = 0;
    std::uint64_t bp_used = 0;
};

struct CostCounter {
    std::uint64_t fp = 0;
    std::uint64_t bp = 0;
    std::uint64_t xfp() const { return fp + 2 * bp; }
    void add(std::uint64_t f, std::uint64_t b) {
        fp += f;
        bp += b;
    }
};

// ---- scalar primitives -----------------------------------------------------

inline constexpr double kProbFloor = 1e-12;

// -log probs[label] with the probability floor; validates the distribution.
double cross_entropy(const std::vector<double>& probs, std::size_t label);

// Cross entropy against (1-alpha)*onehot(label) + alpha*uniform.
double label_smoothing_loss(const std::vector<double>& probs, std::size_t label, double alpha);

// sum p_i ln(p_i/q_i), 0 ln 0 = 0. Errors when q carries (floored) zero mass
// where p is positive.
double kl(const std::vector<double>& p, const std::vector<double>& q);

// KL(p||q) + KL(q||p).
double symmetric_kl(const std::vector<double>& p, const std::vector<double>& q);

// i.i.d. (rows x cols) draw from the configured distribution, taken from the
// dedicated noise stream only.
Tensor sample_noise(std::size_t rows, std::size_t cols, const RegularizerConfig& cfg, Rng& noise_rng);

// ---- training objectives ---------------------------------------------------
//
// Each loss accumulates parameter gradients (callers zero grads beforehand),
// reports the per-step forward/backward pass counts it consumed, and adds
// them to `totals` when given.

using BatchView = std::vector<const Example*>;

LossReport standard_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                         const RegularizerConfig& cfg, CostCounter* totals = nullptr);

// R3F / R4F: mean CE + lambda * mean KL_S(clean, noise-perturbed); 2 forward
// passes, 1 backward pass. Gradient flows through both KL_S arguments.
LossReport r3f_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                    const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals = nullptr);

// S projected gradient-ascent steps on KL_S w.r.t. an embedding perturbation;
// returns the final delta. Each ascent step costs 1 FP + 1 BP.
Tensor smart_inner_ascent(EncoderParams& encoder, HeadParams& head, const Example& example,
                          const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals = nullptr);

LossReport smart_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                      const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals = nullptr);

// FreeLB-style: S+1 task-loss evaluations along the ascent trajectory with
// parameter gradients averaged across iterates. `trajectory`, when given,
// receives the per-iterate per-example perturbations actually used.
LossReport freelb_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                       const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals = nullptr,
                       std::vector<std::vector<Tensor>>* trajectory = nullptr);

// Dispatch on cfg.method.
LossReport method_loss(EncoderParams& encoder, HeadParams& head, const BatchView& batch,
                       const RegularizerConfig& cfg, Rng& noise_rng, CostCounter* totals = nullptr);

// Argmax accuracy on a split. Spectral heads are refreshed (25 rounds) on a
// copy so evaluation never mutates training state.
double evaluate_accuracy(EncoderParams& encoder, const HeadParams& head, const Split& split);

}  // namespace trusttune
