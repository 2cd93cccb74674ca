#include "adattt/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adattt::bounds {

namespace {

double xlog2x(double x) { return x > 0.0 ? x * std::log2(x) : 0.0; }

std::vector<double> dirichlet_flat(int n, Rng& rng) {
    std::vector<double> v(n);
    double s = 0.0;
    for (double& x : v) {
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        x = -std::log(u);
        s += x;
    }
    for (double& x : v) x /= s;
    return v;
}

// marginal over one variable / pair of variables
std::vector<double> marginal(const DiscreteJoint& j, Var v) {
    const int n = v == Var::Ys ? j.s : v == Var::Z ? j.r : j.m;
    std::vector<double> out(n, 0.0);
    for (int a = 0; a < j.s; ++a)
        for (int b = 0; b < j.r; ++b)
            for (int c = 0; c < j.m; ++c) {
                const int idx = v == Var::Ys ? a : v == Var::Z ? b : c;
                out[idx] += j.at(a, b, c);
            }
    return out;
}

std::vector<double> marginal2(const DiscreteJoint& j, Var u, Var v, int& nu, int& nv) {
    auto dim = [&](Var x) { return x == Var::Ys ? j.s : x == Var::Z ? j.r : j.m; };
    auto pick = [&](Var x, int a, int b, int c) {
        return x == Var::Ys ? a : x == Var::Z ? b : c;
    };
    nu = dim(u);
    nv = dim(v);
    std::vector<double> out(static_cast<std::size_t>(nu) * nv, 0.0);
    for (int a = 0; a < j.s; ++a)
        for (int b = 0; b < j.r; ++b)
            for (int c = 0; c < j.m; ++c)
                out[pick(u, a, b, c) * nv + pick(v, a, b, c)] += j.at(a, b, c);
    return out;
}

}  // namespace

void DiscreteJoint::validate() const {
    if (s < 1 || r < 1 || m < 1 || p.size() != static_cast<std::size_t>(s) * r * m)
        throw std::invalid_argument("DiscreteJoint: inconsistent dimensions");
    double total = 0.0;
    for (double x : p) {
        if (x < 0.0) throw std::invalid_argument("DiscreteJoint: negative mass");
        total += x;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("DiscreteJoint: mass sums to " + std::to_string(total));
    if (!markov) return;

    // reconstruct p(y_s)·p(z|y_s)·p(y_m|z) and compare
    DiscreteJoint self = *this;
    auto p_ys = marginal(self, Var::Ys);
    int nzs, nz2;
    auto p_ysz = marginal2(self, Var::Ys, Var::Z, nzs, nz2);
    auto p_z = marginal(self, Var::Z);
    int nz3, nym;
    auto p_zym = marginal2(self, Var::Z, Var::Ym, nz3, nym);
    for (int a = 0; a < s; ++a)
        for (int b = 0; b < r; ++b)
            for (int c = 0; c < m; ++c) {
                const double pz_ys = p_ys[a] > 0.0 ? p_ysz[a * r + b] / p_ys[a] : 0.0;
                const double pym_z = p_z[b] > 0.0 ? p_zym[b * m + c] / p_z[b] : 0.0;
                const double rebuilt = p_ys[a] * pz_ys * pym_z;
                if (std::abs(rebuilt - at(a, b, c)) > 1e-10)
                    throw std::invalid_argument(
                        "DiscreteJoint: markov flag set but table does not factor");
            }
}

DiscreteJoint make_markov(std::span<const double> p_ys,
                          std::span<const double> p_z_given_ys,
                          std::span<const double> p_ym_given_z) {
    DiscreteJoint j;
    j.s = static_cast<int>(p_ys.size());
    if (j.s == 0 || p_z_given_ys.size() % j.s != 0)
        throw std::invalid_argument("make_markov: bad conditional shapes");
    j.r = static_cast<int>(p_z_given_ys.size()) / j.s;
    if (j.r == 0 || p_ym_given_z.size() % j.r != 0)
        throw std::invalid_argument("make_markov: bad conditional shapes");
    j.m = static_cast<int>(p_ym_given_z.size()) / j.r;
    j.markov = true;
    j.p.assign(static_cast<std::size_t>(j.s) * j.r * j.m, 0.0);
    for (int a = 0; a < j.s; ++a)
        for (int b = 0; b < j.r; ++b)
            for (int c = 0; c < j.m; ++c)
                j.at(a, b, c) = p_ys[a] * p_z_given_ys[a * j.r + b] *
                                p_ym_given_z[b * j.m + c];
    j.validate();
    return j;
}

DiscreteJoint random_markov(int s, int r, int z_states_m, Rng& rng) {
    std::vector<double> p_ys = dirichlet_flat(s, rng);
    std::vector<double> p_z_ys;
    for (int a = 0; a < s; ++a) {
        auto row = dirichlet_flat(r, rng);
        p_z_ys.insert(p_z_ys.end(), row.begin(), row.end());
    }
    std::vector<double> p_ym_z;
    for (int b = 0; b < r; ++b) {
        auto row = dirichlet_flat(z_states_m, rng);
        p_ym_z.insert(p_ym_z.end(), row.begin(), row.end());
    }
    return make_markov(p_ys, p_z_ys, p_ym_z);
}

DiscreteJoint random_ideal_chain(int classes, Rng& rng) {
    const int s = classes;
    std::vector<double> p_ys = dirichlet_flat(s, rng);
    std::vector<double> identity(static_cast<std::size_t>(s) * s, 0.0);
    for (int a = 0; a < s; ++a) identity[a * s + a] = 1.0;
    std::vector<double> p_ym_z;
    for (int b = 0; b < s; ++b) {
        auto row = dirichlet_flat(classes, rng);
        p_ym_z.insert(p_ym_z.end(), row.begin(), row.end());
    }
    return make_markov(p_ys, identity, p_ym_z);
}

double entropy(std::span<const double> dist) {
    double h = 0.0;
    for (double x : dist) {
        if (x < 0.0) throw std::invalid_argument("entropy: negative mass");
        h -= xlog2x(x);
    }
    return h;
}

double entropy(const DiscreteJoint& j, Var v) { return entropy(marginal(j, v)); }

double joint_entropy(const DiscreteJoint& j, Var a, Var b) {
    int nu, nv;
    return entropy(marginal2(j, a, b, nu, nv));
}

double cond_entropy(const DiscreteJoint& j, Var target, Var given) {
    return joint_entropy(j, target, given) - entropy(j, given);
}

double mutual_info(const DiscreteJoint& j, Var a, Var b) {
    return entropy(j, a) + entropy(j, b) - joint_entropy(j, a, b);
}

double bayes_error(const DiscreteJoint& j) {
    int nz, nym;
    auto p_zym = marginal2(j, Var::Z, Var::Ym, nz, nym);
    double err = 0.0;
    for (int b = 0; b < nz; ++b) {
        double pz = 0.0, best = 0.0;
        for (int c = 0; c < nym; ++c) {
            pz += p_zym[b * nym + c];
            best = std::max(best, p_zym[b * nym + c]);
        }
        err += pz - best;  // pz·(1 − max_c η_c(z))
    }
    return err;
}

double binary_entropy(double eta) {
    if (eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("binary_entropy: eta outside [0,1]");
    return -xlog2x(eta) - xlog2x(1.0 - eta);
}

double binary_entropy_inverse(double h, double tol) {
    if (h < 0.0 || h > 1.0)
        throw std::invalid_argument("binary_entropy_inverse: h outside [0,1] bits");
    if (h == 0.0) return 0.0;
    if (h == 1.0) return 0.5;
    double lo = 0.0, hi = 0.5;
    // H is strictly increasing on [0, 0.5]
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (binary_entropy(mid) < h ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Lemma1Report check_lemma1(const DiscreteJoint& j) {
    if (!j.markov)
        throw std::invalid_argument("check_lemma1: joint is not flagged Markov");
    j.validate();
    Lemma1Report rep;
    rep.i_z_ym = mutual_info(j, Var::Z, Var::Ym);
    rep.i_ys_ym = mutual_info(j, Var::Ys, Var::Ym);
    rep.holds = rep.i_z_ym >= rep.i_ys_ym - kBoundTol;
    return rep;
}

Theorem1Report check_theorem1(const DiscreteJoint& j, bool ideal) {
    if (!j.markov)
        throw std::invalid_argument("check_theorem1: joint is not flagged Markov");
    if (j.m != 2)
        throw std::invalid_argument("check_theorem1: Y_m must be binary");
    j.validate();

    Theorem1Report rep;
    rep.ideal = ideal;
    rep.h_ym_given_ys = cond_entropy(j, Var::Ym, Var::Ys);
    rep.p_e = bayes_error(j);
    rep.upper = 0.5 * rep.h_ym_given_ys;
    rep.upper_holds = rep.p_e <= rep.upper + kBoundTol;

    const double h_ym_given_z = cond_entropy(j, Var::Ym, Var::Z);
    rep.lower_vs_z = binary_entropy_inverse(std::min(h_ym_given_z, 1.0));
    rep.lower_vs_z_holds = rep.p_e >= rep.lower_vs_z - kBoundTol;

    if (ideal) {
        if (std::abs(h_ym_given_z - rep.h_ym_given_ys) > 1e-8)
            throw std::invalid_argument(
                "check_theorem1: ideal flag set but H(Ym|Z) != H(Ym|Ys)");
        rep.lower = binary_entropy_inverse(std::min(rep.h_ym_given_ys, 1.0));
        rep.lower_holds = rep.p_e >= rep.lower - kBoundTol;
    }
    return rep;
}

MulticlassReport check_theorem1_multiclass(const DiscreteJoint& j, int classes) {
    if (!j.markov)
        throw std::invalid_argument("check_theorem1_multiclass: joint is not Markov");
    if (j.m != classes)
        throw std::invalid_argument("check_theorem1_multiclass: class count mismatch");
    j.validate();

    MulticlassReport rep;
    rep.classes = classes;
    rep.h_ym_given_ys = cond_entropy(j, Var::Ym, Var::Ys);
    rep.p_e = bayes_error(j);
    rep.upper = 0.5 * rep.h_ym_given_ys;
    rep.upper_holds = rep.p_e <= rep.upper + kBoundTol;
    if (classes >= 4) {
        rep.lower = (rep.h_ym_given_ys - 1.0) / std::log2(static_cast<double>(classes));
        rep.lower_checked = true;
        rep.lower_holds = rep.p_e >= rep.lower - kBoundTol;
    }
    return rep;
}

double postulate_gap(const DiscreteJoint& j) {
    // I(A;B|C) = H(A,C) + H(B,C) − H(C) − H(A,B,C)
    const double h_full = entropy(std::span<const double>(j.p));
    const double i_z_ym_given_ys = joint_entropy(j, Var::Z, Var::Ys) +
                                   joint_entropy(j, Var::Ym, Var::Ys) -
                                   entropy(j, Var::Ys) - h_full;
    const double i_z_ys_given_ym = joint_entropy(j, Var::Z, Var::Ym) +
                                   joint_entropy(j, Var::Ys, Var::Ym) -
                                   entropy(j, Var::Ym) - h_full;
    return i_z_ym_given_ys - i_z_ys_given_ym;
}

}  // namespace adattt::bounds
