#include "trusttune/grad_check.hpp"

#include <cmath>

#include "trusttune/errors.hpp"

namespace trusttune {

double check_gradients(const std::function<double(bool)>& loss_eval,
                       const std::vector<Tensor*>& params, double h) {
    if (h <= 0.0) throw ConfigError("check_gradients: step must be positive");

    for (Tensor* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    const double base = loss_eval(true);
    if (!std::isfinite(base)) throw NumericError("check_gradients: non-finite loss at base point");

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Tensor* p : params) analytic.push_back(*p->grad);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double saved = p.values[i];
            p.values[i] = saved + h;
            const double up = loss_eval(false);
            p.values[i] = saved - h;
            const double down = loss_eval(false);
            p.values[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("check_gradients: non-finite loss at perturbed point");
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({1e-8, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace trusttune
