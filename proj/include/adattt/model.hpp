#pragma once

// Y-shaped network: a recency-gating layer (one learnable decay rate per
// feature), a feedforward encoder, a main classification head producing one
// logit, an SSL head reconstructing all features, and the learned prototype
// matrix. Frozen training statistics and the decision threshold travel with
// the model so deployment needs no source data.

#include "adattt/autodiff.hpp"
#include "adattt/rng.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace adattt::model {

inline constexpr int kReservoirCap = 4096;
inline constexpr double kLogitClamp = 30.0;

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd stdev;  // > 0 after fitting (degenerate features get 1)
    // standardized training values, uniformly subsampled to kReservoirCap
    std::vector<std::vector<double>> reservoirs;

    int dim() const { return static_cast<int>(mean.rows()); }
};

// Fit mean/std and fill replacement reservoirs from raw feature rows.
FeatureStats fit_stats(const std::vector<Eigen::VectorXd>& raw_rows, Rng& rng);

struct ModelState {
    // softplus(tslm_raw) is the per-feature decay rate; the gate on a value
    // with staleness Δt is exp(−rate·Δt)
    Eigen::VectorXd tslm_raw;
    std::vector<Eigen::MatrixXd> enc_w;  // rectifier between layers, last linear
    std::vector<Eigen::VectorXd> enc_b;
    Eigen::MatrixXd main_w;  // 1 × d_z
    double main_b = 0.0;
    Eigen::MatrixXd ssl_w;  // d × d_z
    Eigen::VectorXd ssl_b;
    Eigen::MatrixXd prototypes;  // k × d_z
    FeatureStats stats;
    double threshold = 0.5;   // decision threshold fit on the validation split
    double mask_prior = 0.5;  // warm-up masking probability
    // frozen pipeline statistics: raw-column means for >24h imputation and
    // the static-column count, so ingestion at deployment needs no source data
    Eigen::VectorXd impute_means;
    int n_static = 0;

    int input_dim() const { return static_cast<int>(tslm_raw.rows()); }
    int latent_dim() const { return static_cast<int>(prototypes.cols()); }
    int prototype_count() const { return static_cast<int>(prototypes.rows()); }
    Eigen::VectorXd tslm_rates() const;  // softplus(tslm_raw), always >= 0
};

// Glorot-uniform weights, zero biases, prototypes zero until initialized
// from warm-up embeddings.
ModelState init_model(int input_dim, const std::vector<int>& hidden, int latent_dim,
                      int prototype_count, Rng& rng);

struct Snapshot {
    ModelState state;
};

Snapshot snapshot(const ModelState& s);
// Bitwise restore; rejects shape mismatches.
void restore(ModelState& s, const Snapshot& snap);
bool bitwise_equal(const ModelState& a, const ModelState& b);

// --- graph staging -------------------------------------------------------

enum class Trainable { All, EncoderOnly, None };

struct ParamNodes {
    ad::NodeId tslm_raw = -1;
    std::vector<std::pair<ad::NodeId, ad::NodeId>> enc;
    ad::NodeId main_w = -1, main_b = -1;
    ad::NodeId ssl_w = -1, ssl_b = -1;
    ad::NodeId prototypes = -1;
};

ParamNodes stage_params(ad::Tape& tape, const ModelState& s, Trainable trainable);

ad::NodeId encode_node(ad::Tape& tape, const ParamNodes& p, ad::NodeId x,
                       const Eigen::VectorXd& dt);
ad::NodeId main_logit_node(ad::Tape& tape, const ParamNodes& p, ad::NodeId z);
ad::NodeId ssl_recon_node(ad::Tape& tape, const ParamNodes& p, ad::NodeId z);

// --- value-level forward (same kernels as the graph path) ----------------

Eigen::VectorXd standardize(const ModelState& s, const Eigen::VectorXd& raw);
Eigen::VectorXd encode(const ModelState& s, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& dt);
// (probability, raw logit); the logit is clamped to ±kLogitClamp before the
// sigmoid so the probability stays inside (0, 1)
std::pair<double, double> predict_main(const ModelState& s, const Eigen::VectorXd& z);
Eigen::VectorXd predict_ssl(const ModelState& s, const Eigen::VectorXd& z);
// Nearest prototype in squared Euclidean distance; ties break to the lowest
// index. Rejects an uninitialized (empty) prototype set.
int assign_prototype(const ModelState& s, const Eigen::VectorXd& z);

// --- persistence ----------------------------------------------------------

// Versioned little-endian binary dump; load round-trips bit-exactly.
void save_model(const ModelState& s, const std::string& path);
ModelState load_model(const std::string& path);

}  // namespace adattt::model
