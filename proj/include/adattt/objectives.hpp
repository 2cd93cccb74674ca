#pragma once

// Loss terms and the two optimization objectives: the joint pretraining
// objective (main cross-entropy + SSL + prototype terms, averaged per batch)
// and the per-instance test-time objective (SSL + transport cost with the
// plan held constant, gradients restricted to the encoder and gating layer).

#include "adattt/data.hpp"
#include "adattt/masking.hpp"
#include "adattt/model.hpp"
#include "adattt/rng.hpp"
#include "adattt/transport.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace adattt::objectives {

struct LossWeights {
    double recon = 0.5;
    double proto = 0.5;
    double reg = 0.5;
    double ot = 0.5;
};

// soft-assignment temperature for the balance gradient; reported values use
// hard counts
inline constexpr double kBalanceTemperature = 1.0;

double loss_recon(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat);
double loss_mfm(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat,
                std::span<const int> masked);
double loss_ssl(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat,
                std::span<const int> masked, double lambda_recon);
// Binary cross-entropy with the probability clamped to [1e-7, 1−1e-7].
double loss_main(double probability, int label);
// ‖z − p_A(z)‖² with hard nearest assignment (assignment constant for grads).
double loss_proto(const Eigen::VectorXd& z, const Eigen::MatrixXd& prototypes);
// Σ_j (fraction assigned to j − 1/k)² over hard counts.
double loss_balance(std::span<const int> assignments, int k);

struct ParamGrads {
    Eigen::VectorXd tslm_raw;
    std::vector<Eigen::MatrixXd> enc_w;
    std::vector<Eigen::VectorXd> enc_b;
    Eigen::MatrixXd main_w;
    double main_b = 0.0;
    Eigen::MatrixXd ssl_w;
    Eigen::VectorXd ssl_b;
    Eigen::MatrixXd prototypes;
};

struct TrainEval {
    double total = 0.0;
    double main = 0.0;
    double ssl = 0.0;
    double proto = 0.0;
    double balance_hard = 0.0;
    ParamGrads grads;
};

// (1/B)·Σ_i [main + ssl + λ_proto·proto] + λ_reg·balance. The balance term
// is differentiated through a temperature-1 softmax over negative squared
// prototype distances; the reported value uses hard counts. Prototype terms
// are skipped while `prototypes_active` is false (prototypes not yet
// initialized from warm-up embeddings).
TrainEval objective_train(std::span<const Instance> batch, const model::ModelState& m,
                          const masking::MaskState& mask, const LossWeights& w,
                          Rng& rng, bool prototypes_active = true);

struct TestEval {
    double total = 0.0;
    double ssl = 0.0;
    double ot = 0.0;
    ParamGrads grads;  // only encoder and gating entries are nonzero
};

// L_ssl(x̃′) + λ_ot·Σ_ij γ_ij·C_ij with γ constant; the transport term flows
// through C via the clean embedding. Pass aug/plan as nullptr to drop the
// transport term. Plan marginals are validated against uniform within 1e-3.
TestEval objective_test(const Instance& inst, const model::ModelState& m,
                        const Eigen::VectorXd& mask_probs,
                        const transport::AugmentedSet* aug,
                        const transport::TransportPlan* plan, const LossWeights& w,
                        Rng& rng);

ParamGrads zero_grads(const model::ModelState& m);

}  // namespace adattt::objectives
