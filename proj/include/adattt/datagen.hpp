#pragma once

// Data supply: a parameterized synthetic domain-shift generator and a CSV
// pipeline with hourly binning (median), carry-forward imputation bounded at
// 24h, mean fallback, and derived baseline/trend/staleness features.
//
// CSV schema: header `encounter_id,timestamp_h,label,t0_h,f_0,...,f_{d-1}`,
// empty cell = missing, `t0_h` empty for negative encounters, UTF-8, LF
// newlines, `.` decimal separator.

#include "adattt/data.hpp"
#include "adattt/rng.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adattt::datagen {

inline constexpr double kCarryForwardHours = 24.0;
inline constexpr double kStalenessCapHours = 72.0;
inline constexpr double kBaselineWindowHours = 72.0;

// Target-domain distortion applied on top of the source generative process.
struct ShiftSpec {
    Eigen::VectorXd scale;   // per raw feature, > 0
    Eigen::VectorXd offset;  // per raw feature
    double label_ratio = 1.0;    // multiplies the positive prevalence
    double missing_rate = 0.0;   // extra missingness in [0,1]
    double noise_scale = 0.0;    // stddev of additive observation noise
    std::uint64_t seed = 0;

    static ShiftSpec identity(int d_raw);
    void validate(int d_raw) const;
};

struct SynthConfig {
    int n_source = 2000;
    int n_target = 500;
    int d_raw = 8;    // time-varying features
    int n_static = 3; // one-hot static columns appended after the raw block
    double prevalence = 0.06;
    int len_min = 6;
    int len_max = 14;
    double base_missing = 0.25;

    int columns() const { return d_raw + n_static; }
};

// Two-class AR(1) features with a deterioration ramp toward T0 for positive
// encounters; the target set composes the same process with the ShiftSpec's
// covariate shift, extra noise, missingness, and label-prior reweighting.
std::pair<std::vector<Encounter>, std::vector<Encounter>> synth_generate(
    const SynthConfig& cfg, const ShiftSpec& shift, std::uint64_t seed);

void write_csv(const std::string& path, std::span<const Encounter> encounters,
               int columns);

struct IngestResult {
    std::vector<Encounter> encounters;
    std::vector<std::string> rejected;  // per-encounter diagnostics
    int columns = 0;
};

// Parses, bins same-hour rows by median, validates monotone timestamps.
// Malformed rows throw with the line number; encounters with decreasing
// timestamps or inconsistent label/t0 are dropped with a diagnostic.
IngestResult ingest_csv(const std::string& path);

// Mean of observed cells per column over a training split.
Eigen::VectorXd observed_means(std::span<const Encounter> encounters, int columns);

// Dense hourly grid: last value carried while staleness <= 24h, training
// mean beyond; dt is hours since the last actual measurement, capped at 72
// (never-measured features sit at the cap).
Grid impute(const Encounter& enc, const Eigen::VectorXd& train_means);

struct DerivedFeatures {
    Eigen::MatrixXd x;        // T × (4·d_tv + n_static)
    Eigen::MatrixXd dt_gate;  // staleness at current-value columns, else 0
    std::vector<double> hours;
};

// Per time-varying feature: [current, baseline over trailing 72h of the
// grid, change since the previous actual measurement, staleness]; static
// columns pass through.
DerivedFeatures derive_features(const Grid& grid, int n_static);

// Full pipeline for one encounter. Pass null mean/stdev for raw (unstandardized)
// instances, e.g. when fitting statistics.
std::vector<Instance> build_instances(const Encounter& enc,
                                      const Eigen::VectorXd& impute_means,
                                      int n_static,
                                      const Eigen::VectorXd* std_mean,
                                      const Eigen::VectorXd* std_stdev);

}  // namespace adattt::datagen
