#pragma once

// Evaluation: ROC AUC (Mann-Whitney with tie correction), Brier score,
// encounter-level confusion with a 24h prediction window before the event
// time T0, and mean ± standard-error aggregation across runs.

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adattt::metrics {

struct ScoredTimestamp {
    std::string encounter_id;
    double t = 0.0;                // hours since admission
    double score = 0.0;            // risk in [0, 1]
    int label = 0;                 // per-timestamp label
    std::optional<double> t0;      // event time; present for positive encounters
};

struct ConfusionReport {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double threshold = 0.5;
};

struct Aggregate {
    double mean = 0.0;
    double se = 0.0;
    int runs = 0;
    bool single_run = false;
};

// Mann-Whitney rank statistic; tied scores contribute 1/2.
// Throws std::invalid_argument when only one class is present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Mean squared difference between score and binary label.
double brier(std::span<const double> scores, std::span<const int> labels);

// Positive encounters (t0 present): TP when any score >= threshold inside
// (t0 − 24, t0], otherwise FN; alarms strictly outside the window add an FP.
// Negative encounters: FP when any score >= threshold, otherwise TN.
// The FP column therefore double-counts positive encounters whose alarms
// fall outside the window; sensitivity = TP/(TP+FN), specificity = TN/(TN+FP).
ConfusionReport encounter_confusion(std::span<const ScoredTimestamp> scored,
                                    double threshold);

// Threshold maximizing Youden's J (sensitivity + specificity − 1) over the
// given per-timestamp scores; lowest threshold wins ties.
double youden_threshold(std::span<const double> scores, std::span<const int> labels);

Aggregate aggregate(std::span<const double> values);

inline constexpr double kPredictionWindowHours = 24.0;

}  // namespace adattt::metrics
