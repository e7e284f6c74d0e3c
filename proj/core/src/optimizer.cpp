#include "trusttune/optimizer.hpp"

#include <cmath>

#include "trusttune/errors.hpp"

namespace trusttune {

double lr_at(const Schedule& s, std::uint64_t t) {
    if (t == 0) throw ConfigError("lr_at: update index starts at 1");
    if (s.warmup_updates == 0 && s.total_updates == 0)
        throw ConfigError("lr_at: schedule with zero total updates");
    if (s.peak_lr <= 0.0) throw ConfigError("lr_at: peak_lr must be positive");
    if (s.warmup_updates > s.total_updates)
        throw ConfigError("lr_at: warmup_updates exceeds total_updates");
    if (t <= s.warmup_updates) {
        return s.peak_lr * static_cast<double>(t) / static_cast<double>(s.warmup_updates);
    }
    if (t >= s.total_updates) return s.end_lr;
    const double frac = static_cast<double>(s.total_updates - t) /
                        static_cast<double>(s.total_updates - s.warmup_updates);
    return s.end_lr + (s.peak_lr - s.end_lr) * std::pow(frac, s.power);
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor*>> params, AdamConfig cfg)
    : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        Slot s;
        s.name = name;
        s.param = p;
        s.m.assign(p->values.size(), 0.0);
        s.v.assign(p->values.size(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void AdamOptimizer::step(double lr) {
    if (lr < 0.0) throw ConfigError("adam_step: negative learning rate");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Slot& s : slots_) {
        Tensor& p = *s.param;
        if (!p.grad) continue;
        auto& g = *p.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("adam_step: non-finite gradient in parameter '" + s.name + "'");
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double mhat = s.m[i];
            double vhat = s.v[i];
            if (cfg_.bias_correction) {
                mhat /= bc1;
                vhat /= bc2;
            }
            p.values[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps) +
                           lr * cfg_.weight_decay * p.values[i];
        }
        p.zero_grad();
    }
}

double clip_gradients(const std::vector<Tensor*>& params, double max_norm) {
    if (max_norm <= 0.0) throw ConfigError("clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (const Tensor* p : params) {
        if (!p->grad) continue;
        for (double g : *p->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (Tensor* p : params) {
            if (!p->grad) continue;
            for (double& g : *p->grad) g *= scale;
        }
    }
    return norm;
}

}  // namespace trusttune
