#pragma once

// Exhaustive verification of the error bounds on small discrete joints over
// (Y_s, Z, Y_m): entropies and mutual informations in bits, Bayes error,
// binary-entropy inversion, the data-processing inequality check, and the
// two-sided prediction-error bounds (binary and multi-class).

#include "adattt/rng.hpp"

#include <span>
#include <vector>

namespace adattt::bounds {

// p(y_s, z, y_m) with y_s in {0..s-1}, z in {0..r-1}, y_m in {0..m-1}.
// When `markov` is set the table must factor as p(y_s)·p(z|y_s)·p(y_m|z).
struct DiscreteJoint {
    int s = 0, r = 0, m = 0;
    std::vector<double> p;  // row-major over (y_s, z, y_m)
    bool markov = false;

    double& at(int ys, int z, int ym) { return p[(ys * r + z) * m + ym]; }
    double at(int ys, int z, int ym) const { return p[(ys * r + z) * m + ym]; }

    // Checks nonnegativity, normalization (1e-12) and, when flagged,
    // the Markov factorization (1e-10). Throws std::invalid_argument.
    void validate() const;
};

DiscreteJoint make_markov(std::span<const double> p_ys,
                          std::span<const double> p_z_given_ys,   // s×r row-major
                          std::span<const double> p_ym_given_z);  // r×m row-major

// Conditional rows drawn from a flat Dirichlet (normalized Exp(1) draws).
DiscreteJoint random_markov(int s, int r, int z_states_m, Rng& rng);

// Ideal chain: Z = Y_s (identity channel), so H(Ym|Z) = H(Ym|Ys) exactly.
DiscreteJoint random_ideal_chain(int classes, Rng& rng);

enum class Var { Ys, Z, Ym };

double entropy(std::span<const double> dist);  // bits; 0·log 0 := 0
double entropy(const DiscreteJoint& j, Var v);
double joint_entropy(const DiscreteJoint& j, Var a, Var b);
double cond_entropy(const DiscreteJoint& j, Var target, Var given);
double mutual_info(const DiscreteJoint& j, Var a, Var b);

// Binary: Σ_z p(z)·min(η(z), 1−η(z)); multi-class: 1 − Σ_z p(z)·max_c η_c(z).
double bayes_error(const DiscreteJoint& j);

double binary_entropy(double eta);  // bits
// Unique η in [0, 0.5] with H(η) = h, by bisection.
double binary_entropy_inverse(double h, double tol = 1e-10);

struct Lemma1Report {
    double i_z_ym = 0.0;
    double i_ys_ym = 0.0;
    bool holds = false;
};
// I(Z;Ym) >= I(Ys;Ym) − 1e-9 under the Markov assumption.
Lemma1Report check_lemma1(const DiscreteJoint& j);

struct Theorem1Report {
    double h_ym_given_ys = 0.0;
    double p_e = 0.0;
    double lower = 0.0;       // H⁻¹(H(Ym|Ys)); meaningful only when ideal
    double upper = 0.0;       // ½·H(Ym|Ys)
    bool lower_holds = false;
    bool upper_holds = false;
    double lower_vs_z = 0.0;  // H⁻¹(H(Ym|Z)) <= p(e), the unconditional form
    bool lower_vs_z_holds = false;
    bool ideal = false;
};
Theorem1Report check_theorem1(const DiscreteJoint& j, bool ideal);

struct MulticlassReport {
    int classes = 0;
    double h_ym_given_ys = 0.0;
    double p_e = 0.0;
    double lower = 0.0;  // (H(Ym|Ys) − 1) / log2(k), reported only for k >= 4
    double upper = 0.0;  // ½·H(Ym|Ys)
    bool lower_checked = false;
    bool lower_holds = true;
    bool upper_holds = false;
};
MulticlassReport check_theorem1_multiclass(const DiscreteJoint& j, int classes);

// Measures I(Z;Ym|Ys) − I(Z;Ys|Ym); a modeling postulate, reported but
// never asserted.
double postulate_gap(const DiscreteJoint& j);

inline constexpr double kBoundTol = 1e-9;

}  // namespace adattt::bounds
