#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace adattt {

// One feature vector at one timestamp of one encounter, in model space
// (standardized features). `dt` carries the gating staleness in hours; only
// current-value columns of time-varying features have nonzero entries.
struct Instance {
    Eigen::VectorXd x;
    Eigen::VectorXd dt;
    int label = 0;
    std::string encounter_id;
    double t = 0.0;
    std::optional<double> t0;
};

namespace datagen {

struct RawRow {
    double t = 0.0;  // hours since admission
    std::vector<std::optional<double>> values;
};

struct Encounter {
    std::string id;
    std::vector<RawRow> rows;  // strictly increasing t after binning
    int label = 0;
    std::optional<double> t0;  // event time, positives only
    std::string site;
};

// Dense hourly grid with per-feature staleness, produced by imputation.
struct Grid {
    std::vector<double> hours;
    Eigen::MatrixXd values;  // T × d
    Eigen::MatrixXd dt;      // T × d, hours since last actual measurement
};

}  // namespace datagen
}  // namespace adattt
