#include "trusttune/gaussian.hpp"

#include <cmath>

#include "trusttune/errors.hpp"

namespace trusttune {

void GaussianDensity::validate() const {
    if (mean.size() == 0 || covariance.rows() != mean.size() || covariance.cols() != mean.size())
        throw ShapeError("gaussian: covariance must be d x d matching the mean");
    for (Eigen::Index i = 0; i < covariance.rows(); ++i)
        for (Eigen::Index j = 0; j < i; ++j)
            if (std::abs(covariance(i, j) - covariance(j, i)) > 1e-12)
                throw NumericError("gaussian: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw NumericError("gaussian: covariance not positive definite");
}

double gaussian_kl(const GaussianDensity& a, const GaussianDensity& b) {
    if (a.dim() != b.dim()) throw ShapeError("gaussian_kl: dimension mismatch");
    a.validate();
    b.validate();
    const auto d = static_cast<double>(a.dim());
    Eigen::LLT<Eigen::MatrixXd> llt_b(b.covariance);
    Eigen::LLT<Eigen::MatrixXd> llt_a(a.covariance);
    const Eigen::MatrixXd b_inv_a = llt_b.solve(a.covariance);
    const Eigen::VectorXd dm = b.mean - a.mean;
    const double maha = dm.dot(llt_b.solve(dm));
    auto log_det = [](const Eigen::LLT<Eigen::MatrixXd>& llt) {
        double s = 0.0;
        const Eigen::MatrixXd l = llt.matrixL();
        for (Eigen::Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
        return 2.0 * s;
    };
    return 0.5 * (b_inv_a.trace() + maha - d + log_det(llt_b) - log_det(llt_a));
}

GaussianDensity pushforward(const Eigen::MatrixXd& g_matrix, const GaussianDensity& a) {
    a.validate();
    if (g_matrix.cols() != a.mean.size())
        throw ShapeError("pushforward: map input dimension does not match the density");
    GaussianDensity out;
    out.mean = g_matrix * a.mean;
    out.covariance = g_matrix * a.covariance * g_matrix.transpose();
    // symmetrize away rounding
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.covariance);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw NumericError("pushforward: rank-deficient image covariance");
    return out;
}

GaussianDensity random_gaussian(std::size_t dim, Rng& rng) {
    Eigen::MatrixXd a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
    GaussianDensity g;
    g.covariance = a * a.transpose() + 0.25 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                                        static_cast<Eigen::Index>(dim));
    g.covariance = 0.5 * (g.covariance + g.covariance.transpose().eval());
    g.mean = Eigen::VectorXd(dim);
    for (std::size_t i = 0; i < dim; ++i) g.mean(static_cast<Eigen::Index>(i)) = rng.normal();
    return g;
}

namespace {

Eigen::MatrixXd random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
    return m;
}

}  // namespace

LipschitzReport lipschitz_bound_experiment(std::size_t dim, std::size_t trials, Rng& rng) {
    if (trials < 1) throw ConfigError("lipschitz_bound_experiment: trials must be >= 1");
    if (dim < 2) throw ConfigError("lipschitz_bound_experiment: dim must be >= 2");

    LipschitzReport report;
    std::size_t index = 0;

    for (std::size_t t = 0; t < trials; ++t) {
        GaussianDensity a = random_gaussian(dim, rng);
        GaussianDensity b = random_gaussian(dim, rng);
        const double kl_in = gaussian_kl(a, b);

        // Square map rescaled to spectral norm 1: KL is invariant under any
        // invertible affine change of variables.
        Eigen::MatrixXd g = random_matrix(dim, dim, rng);
        const double spectral = g.jacobiSvd().singularValues()(0);
        g /= spectral;
        const double kl_out = gaussian_kl(pushforward(g, a), pushforward(g, b));

        LipschitzTrial trial;
        trial.trial = index++;
        trial.in_dim = dim;
        trial.out_dim = dim;
        trial.det_g = g.determinant();
        trial.kl_repr = kl_in;
        trial.kl_output = kl_out;
        trial.invertible = true;
        const double gap = std::abs(kl_out - kl_in);
        report.max_equality_gap = std::max(report.max_equality_gap, gap);
        trial.relation = "equal";
        if (gap > 1e-8) {
            trial.relation = "violated";
            report.ok = false;
        }
        report.trials.push_back(std::move(trial));
    }

    for (std::size_t t = 0; t < trials; ++t) {
        GaussianDensity a = random_gaussian(dim, rng);
        GaussianDensity b = random_gaussian(dim, rng);
        const double kl_in = gaussian_kl(a, b);

        // Rank-reducing map: the data-processing inequality direction.
        const std::size_t out_dim = 1 + rng.uniform_index(dim - 1);
        Eigen::MatrixXd g = random_matrix(out_dim, dim, rng);
        const double spectral = g.jacobiSvd().singularValues()(0);
        g /= spectral;
        const double kl_out = gaussian_kl(pushforward(g, a), pushforward(g, b));

        LipschitzTrial trial;
        trial.trial = index++;
        trial.in_dim = dim;
        trial.out_dim = out_dim;
        trial.det_g = 0.0;
        trial.kl_repr = kl_in;
        trial.kl_output = kl_out;
        trial.invertible = false;
        const double excess = kl_out - kl_in;
        report.max_dpi_excess = std::max(report.max_dpi_excess, excess);
        trial.relation = "decreased";
        if (excess > 1e-10) {
            trial.relation = "violated";
            report.ok = false;
        }
        report.trials.push_back(std::move(trial));
    }
    return report;
}

}  // namespace trusttune
