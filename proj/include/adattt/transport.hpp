#pragma once

// Partial alignment between a test embedding and the prototype set, reduced
// to balanced entropic OT: the embedding is augmented with k−1 duplicates
// perturbed by per-dimension prototype variance, and the k×k problem is
// solved with log-domain Sinkhorn iteration.

#include "adattt/rng.hpp"

#include <Eigen/Dense>

namespace adattt::transport {

struct AugmentedSet {
    // k × d_z; row 0 is the original embedding, rows 1..k−1 add Gaussian
    // noise with per-dimension prototype variance
    Eigen::MatrixXd rows;
};

struct TransportPlan {
    Eigen::MatrixXd gamma;  // k × k, nonnegative, marginals a / b at convergence
    Eigen::MatrixXd cost;
    double eps = 0.0;
    int iterations_used = 0;
    bool converged = false;
};

// Population variance (divisor k) of each prototype dimension.
Eigen::VectorXd prototype_variances(const Eigen::MatrixXd& prototypes);

AugmentedSet augment(const Eigen::VectorXd& z, const Eigen::MatrixXd& prototypes,
                     Rng& rng);

// C_ij = ‖row_i − p_j‖²
Eigen::MatrixXd cost_matrix(const AugmentedSet& aug, const Eigen::MatrixXd& prototypes);

// Alternating diagonal scaling of exp(−C/ε) in the log domain until both
// marginal L1 residuals drop below tol or max_iter is reached. Non-convergence
// is reported via the flag, not an error.
TransportPlan sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                       const Eigen::VectorXd& b, double eps, int max_iter,
                       double tol);

double ot_cost(const TransportPlan& plan);

}  // namespace adattt::transport
