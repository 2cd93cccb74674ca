#pragma once

// Dynamic feature-aware masking: gradient-times-input relevance of the main
// logit, min-max normalization to masking probabilities, Bernoulli corruption
// draws with empirical-reservoir replacement, and the warm-up/adaptive
// schedule.

#include "adattt/data.hpp"
#include "adattt/model.hpp"
#include "adattt/rng.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace adattt::masking {

enum class Phase { Warmup, Adaptive };

struct MaskState {
    Eigen::VectorXd relevance;  // I_j >= 0
    Eigen::VectorXd probs;      // in [0,1]; uniform prior during warm-up
    Phase phase = Phase::Warmup;
    double prior = 0.5;
};

struct MaskDraw {
    Eigen::VectorXd m;          // 0/1 per feature
    std::vector<int> indices;   // positions where m_j = 1, never empty
};

MaskState make_mask_state(int dim, double prior);

// I_j = (1/n)·Σ_n |∂logit/∂x_j · x_j| over the batch, differentiating the
// pre-sigmoid logit with respect to the standardized input. Labels are not
// used. Throws on a non-finite gradient, naming the instance index.
Eigen::VectorXd compute_relevance(const model::ModelState& m,
                                  std::span<const Instance> batch);

// Min-max normalization; a degenerate spread (max == min) maps every feature
// to the 0.5 prior.
Eigen::VectorXd relevance_to_probs(const Eigen::VectorXd& relevance);

// Independent Bernoulli draws. An empty mask is resampled up to 10 times,
// then the highest-probability feature is forced in (lowest index on ties).
MaskDraw sample_mask(const Eigen::VectorXd& probs, Rng& rng);

// Masked coordinates are replaced by a uniform draw from the feature's
// stored reservoir; unmasked coordinates are preserved bitwise.
Eigen::VectorXd corrupt(const Eigen::VectorXd& x, const MaskDraw& draw,
                        const model::FeatureStats& stats, Rng& rng);

// epoch <= warmup_epochs: warm-up, probs = prior; afterwards adaptive,
// probs = relevance_to_probs(latest_relevance).
MaskState advance_schedule(MaskState state, int epoch, int warmup_epochs,
                           const Eigen::VectorXd& latest_relevance);

}  // namespace adattt::masking
