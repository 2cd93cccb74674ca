#include "adattt/transport.hpp"

#include <cmath>
#include <stdexcept>

namespace adattt::transport {

Eigen::VectorXd prototype_variances(const Eigen::MatrixXd& prototypes) {
    if (prototypes.rows() < 1)
        throw std::invalid_argument("prototype_variances: empty prototype set");
    const Eigen::RowVectorXd mu = prototypes.colwise().mean();
    return (prototypes.rowwise() - mu)
        .array()
        .square()
        .colwise()
        .mean()
        .transpose()
        .matrix();
}

AugmentedSet augment(const Eigen::VectorXd& z, const Eigen::MatrixXd& prototypes,
                     Rng& rng) {
    const Eigen::Index k = prototypes.rows();
    if (k < 2) throw std::invalid_argument("augment: need k >= 2 prototypes");
    if (prototypes.cols() != z.rows())
        throw std::invalid_argument("augment: embedding/prototype dimension mismatch");
    const Eigen::VectorXd sigma = prototype_variances(prototypes).cwiseSqrt();
    AugmentedSet aug;
    aug.rows.resize(k, z.rows());
    aug.rows.row(0) = z.transpose();
    for (Eigen::Index i = 1; i < k; ++i)
        for (Eigen::Index d = 0; d < z.rows(); ++d)
            aug.rows(i, d) = z(d) + sigma(d) * rng.normal();
    return aug;
}

Eigen::MatrixXd cost_matrix(const AugmentedSet& aug, const Eigen::MatrixXd& prototypes) {
    if (aug.rows.cols() != prototypes.cols())
        throw std::invalid_argument("cost_matrix: dimension mismatch");
    Eigen::MatrixXd c(aug.rows.rows(), prototypes.rows());
    for (Eigen::Index i = 0; i < aug.rows.rows(); ++i)
        for (Eigen::Index j = 0; j < prototypes.rows(); ++j)
            c(i, j) = (aug.rows.row(i) - prototypes.row(j)).squaredNorm();
    return c;
}

namespace {

// log Σ_j exp(v_j), max-shifted
double log_sum_exp(const Eigen::ArrayXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v - m).exp().sum());
}

}  // namespace

TransportPlan sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                       const Eigen::VectorXd& b, double eps, int max_iter,
                       double tol) {
    const Eigen::Index n = cost.rows(), m = cost.cols();
    if (a.rows() != n || b.rows() != m)
        throw std::invalid_argument("sinkhorn: marginal sizes do not match cost");
    if (eps <= 0.0) throw std::invalid_argument("sinkhorn: eps must be positive");
    if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any())
        throw std::invalid_argument("sinkhorn: marginals must be strictly positive");
    if (std::abs(a.sum() - 1.0) > 1e-9 || std::abs(b.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("sinkhorn: marginals must each sum to 1");
    if (!cost.allFinite())
        throw std::invalid_argument("sinkhorn: non-finite cost matrix");

    const Eigen::ArrayXd log_a = a.array().log();
    const Eigen::ArrayXd log_b = b.array().log();
    // potentials f, g of the entropic dual; plan is exp((f_i + g_j − C_ij)/ε)
    Eigen::ArrayXd f = Eigen::ArrayXd::Zero(n);
    Eigen::ArrayXd g = Eigen::ArrayXd::Zero(m);
    Eigen::ArrayXd lse_rows(n);

    TransportPlan plan;
    plan.cost = cost;
    plan.eps = eps;

    // Each full iteration makes the column marginal exact (up to rounding);
    // the row residual of the current plan is available from the LSE that the
    // next f-update needs, so convergence costs no extra sweep.
    int it = 0;
    bool converged = false;
    while (it < max_iter) {
        for (Eigen::Index i = 0; i < n; ++i)
            lse_rows(i) = log_sum_exp((g - cost.row(i).transpose().array()) / eps);
        if (it > 0) {
            const double row_res =
                ((f / eps + lse_rows).exp() - a.array()).abs().sum();
            if (row_res < tol) {
                converged = true;
                break;
            }
        }
        f = eps * log_a - eps * lse_rows;
        for (Eigen::Index j = 0; j < m; ++j)
            g(j) = eps * log_b(j) - eps * log_sum_exp((f - cost.col(j).array()) / eps);
        if (!f.allFinite() || !g.allFinite())
            throw std::runtime_error("sinkhorn: non-finite potentials");
        ++it;
    }

    plan.gamma.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            plan.gamma(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / eps);
    if (!plan.gamma.allFinite())
        throw std::runtime_error("sinkhorn: non-finite transport plan");

    const double row_res = (plan.gamma.rowwise().sum() - a).cwiseAbs().sum();
    const double col_res = (plan.gamma.colwise().sum().transpose() - b).cwiseAbs().sum();
    plan.iterations_used = it;
    plan.converged = converged && row_res < tol && col_res < tol;
    return plan;
}

double ot_cost(const TransportPlan& plan) {
    return plan.gamma.cwiseProduct(plan.cost).sum();
}

}  // namespace adattt::transport
