#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trusttune/rng.hpp"

namespace trusttune {

struct GaussianDensity {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;  // symmetric positive-definite

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
    // Throws unless the covariance is symmetric (1e-12) and SPD.
    void validate() const;
};

// Closed form 0.5 * (tr(Sb^-1 Sa) + (mb-ma)^T Sb^-1 (mb-ma) - d + ln det(Sb)/det(Sa)).
double gaussian_kl(const GaussianDensity& a, const GaussianDensity& b);

// Linear image: mean Gm, covariance G S G^T. Errors when the image
// covariance is rank-deficient.
GaussianDensity pushforward(const Eigen::MatrixXd& g_matrix, const GaussianDensity& a);

struct LipschitzTrial {
    std::size_t trial = 0;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    double det_g = 0.0;      // 0 for rank-reducing maps
    double kl_repr = 0.0;    // KL between the original pair
    double kl_output = 0.0;  // KL between the pushforward pair
    bool invertible = false;
    std::string relation;    // "equal" or "decreased"
};

struct LipschitzReport {
    std::vector<LipschitzTrial> trials;
    double max_equality_gap = 0.0;   // worst |kl_out - kl_repr| over invertible trials
    double max_dpi_excess = 0.0;     // worst kl_out - kl_repr over rank-reducing trials
    bool ok = true;
};

// Per trial: draw a random SPD Gaussian pair (the before/after-update
// representation densities), push both through a random square G rescaled to
// spectral norm 1, and compare the KLs; invertible maps must preserve KL
// within 1e-8. An equal number of additional rank-reducing trials records the
// data-processing direction (never increases beyond 1e-10).
LipschitzReport lipschitz_bound_experiment(std::size_t dim, std::size_t trials, Rng& rng);

// Random SPD Gaussian with eigenvalues bounded away from zero.
GaussianDensity random_gaussian(std::size_t dim, Rng& rng);

}  // namespace trusttune
