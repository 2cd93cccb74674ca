#pragma once

// Orchestration: joint pretraining with the two-phase masking schedule,
// per-instance test-time adaptation with snapshot/restore, sequential
// streaming updates, and seeded multi-run evaluation. Method ablations:
//   TEST    no adaptation
//   TTT     fixed-prior masking, no transport term
//   PriTTT  dynamic masking, no transport term
//   DynTTT  fixed-prior masking with transport alignment
//   AdaTTT  dynamic masking with transport alignment

#include "adattt/datagen.hpp"
#include "adattt/masking.hpp"
#include "adattt/metrics.hpp"
#include "adattt/model.hpp"
#include "adattt/objectives.hpp"
#include "adattt/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adattt::engine {

enum class Method { TEST, TTT, PriTTT, DynTTT, AdaTTT };
enum class Mode { Reset, Sequential };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

inline bool uses_dynamic_masking(Method m) {
    return m == Method::AdaTTT || m == Method::PriTTT;
}
inline bool uses_transport(Method m) {
    return m == Method::AdaTTT || m == Method::DynTTT;
}

struct EngineConfig {
    Method method = Method::AdaTTT;
    int ttt_steps = 5;
    double ttt_lr = 1e-3;
    Mode mode = Mode::Reset;
    int warmup_epochs = 5;
    double prior = 0.5;
    int k = 4;
    objectives::LossWeights weights;
    std::uint64_t seed = 1;
    int epochs = 15;
    int batch_size = 64;
    double pretrain_lr = 0.05;
    double momentum = 0.9;
    double sinkhorn_eps = 0.1;
    int sinkhorn_max_iter = 1000;
    double sinkhorn_tol = 1e-6;
    bool freeze_duplicates = false;  // default: fresh duplicate noise per step
    int threads = 1;
    std::vector<int> hidden = {64, 64};
    int latent_dim = 32;
    int n_static = 3;
    int relevance_sample = 2048;  // per-epoch relevance subsample size

    // Sequential mode takes one gradient step at each new data point.
    void validate() const;
    int effective_steps() const { return mode == Mode::Sequential ? 1 : ttt_steps; }
};

struct TrainLogRecord {
    int epoch = 0;
    double total = 0.0, main = 0.0, ssl = 0.0, proto = 0.0, balance = 0.0;
    double val_auc = 0.0;
    double mask_min = 0.0, mask_mean = 0.0, mask_max = 0.0;
    bool warmup = true;
};

struct PretrainResult {
    model::ModelState model;
    masking::MaskState mask;
    std::vector<TrainLogRecord> log;
};

// Mini-batch gradient descent with momentum on the joint objective.
// Prototypes are initialized from the embeddings of k random training
// instances after the first epoch; the decision threshold is fit on the
// validation split at the end. Aborts on a non-finite loss with an
// epoch/batch report.
PretrainResult pretrain(std::span<const datagen::Encounter> train,
                        std::span<const datagen::Encounter> val,
                        const EngineConfig& cfg);

struct StepRecord {
    int step = 0;
    double objective = 0.0, ssl = 0.0, ot = 0.0;
    double risk = 0.0;
    double mask_min = 0.0, mask_mean = 0.0, mask_max = 0.0;
};

struct AdaptationTrace {
    double pre_risk = 0.0;                // entry 0: score before any update
    std::vector<StepRecord> steps;        // one entry per gradient step
    bool fallback = false;                // non-finite loss: restored, unadapted
};

struct AdaptResult {
    double probability = 0.0;
    double logit = 0.0;
    AdaptationTrace trace;
};

// Snapshot → effective_steps() gradient steps on the test objective
// (updating encoder and gating parameters only) → predict → restore when in
// reset mode. TEST returns the unadapted prediction with an empty-step trace.
AdaptResult adapt_instance(model::ModelState& m, const Instance& inst,
                           const EngineConfig& cfg, Rng& rng);

struct StreamPoint {
    std::string encounter_id;
    std::optional<double> cumulative_auc;  // after this encounter completes
};

struct StreamResult {
    std::vector<metrics::ScoredTimestamp> scored;
    std::vector<StreamPoint> trajectory;
};

// One gradient step per data point, parameters retained across the stream.
StreamResult adapt_stream(model::ModelState& m, std::span<const Instance> stream,
                          const EngineConfig& cfg);

struct RunMetrics {
    double auc = 0.0;
    double brier = 0.0;
    metrics::ConfusionReport confusion;
};

struct MethodReport {
    std::string method;
    std::string mode;
    std::string site;
    int runs = 0;
    metrics::Aggregate auc;
    metrics::Aggregate brier;
    // confusion counts averaged over runs at the model's stored threshold
    double tp = 0.0, fp = 0.0, fn = 0.0, tn = 0.0;
    double threshold = 0.5;
    std::vector<RunMetrics> per_run;
    std::vector<StreamPoint> trajectory;  // sequential mode only
};

// Standardized instances for every timestamp of every encounter, through the
// model's frozen pipeline statistics.
std::vector<Instance> prepare_instances(const model::ModelState& m,
                                        std::span<const datagen::Encounter> encounters);

// Runs `runs` independent seeded evaluations (seed varies mask draws,
// duplicate noise and, in sequential mode, nothing else — data order is
// fixed). Reset-mode evaluation parallelizes over encounters when
// cfg.threads > 1; per-instance seeds make the result identical to serial.
MethodReport evaluate_method(const model::ModelState& m,
                             std::span<const datagen::Encounter> encounters,
                             const EngineConfig& cfg, int runs,
                             const std::string& site = "");

}  // namespace adattt::engine
