#include "adattt/objectives.hpp"
#include "adattt/rng.hpp"
#include "oracles.hpp"

#include "doctest.h"

#include <cmath>

using namespace adattt;
using objectives::LossWeights;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) x(i++) = d;
    return x;
}

model::ModelState small_model(int d, Rng& rng, int k = 3, int d_z = 4) {
    auto m = model::init_model(d, {5}, d_z, k, rng);
    for (auto& b : m.enc_b)
        for (Eigen::Index i = 0; i < b.rows(); ++i) b(i) = 0.1 * rng.normal();
    m.prototypes = 0.5 * Eigen::MatrixXd::Random(k, d_z);
    m.stats.mean = Eigen::VectorXd::Zero(d);
    m.stats.stdev = Eigen::VectorXd::Ones(d);
    m.stats.reservoirs.assign(static_cast<std::size_t>(d), {-0.7, 0.0, 0.4, 1.1});
    m.tslm_raw = Eigen::VectorXd::Constant(d, -2.0);
    return m;
}

Instance rand_instance(int d, Rng& rng, int label) {
    Instance inst;
    inst.x = Eigen::VectorXd::NullaryExpr(d, [&](Eigen::Index) { return rng.normal(); });
    inst.dt = Eigen::VectorXd::NullaryExpr(d, [&](Eigen::Index) {
        return rng.bernoulli(0.5) ? 0.0 : 10.0 * rng.uniform();
    });
    inst.label = label;
    return inst;
}

// flatten/unflatten all model parameters for finite differencing
Eigen::VectorXd flatten_params(const model::ModelState& m) {
    std::vector<double> v;
    auto push = [&](const Eigen::MatrixXd& t) {
        v.insert(v.end(), t.data(), t.data() + t.size());
    };
    push(m.tslm_raw);
    for (std::size_t i = 0; i < m.enc_w.size(); ++i) {
        push(m.enc_w[i]);
        push(m.enc_b[i]);
    }
    push(m.main_w);
    v.push_back(m.main_b);
    push(m.ssl_w);
    push(m.ssl_b);
    push(m.prototypes);
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void unflatten_params(model::ModelState& m, const Eigen::VectorXd& v) {
    Eigen::Index off = 0;
    auto pull = [&](Eigen::MatrixXd& t) {
        std::copy(v.data() + off, v.data() + off + t.size(), t.data());
        off += t.size();
    };
    auto pull_vec = [&](Eigen::VectorXd& t) {
        std::copy(v.data() + off, v.data() + off + t.size(), t.data());
        off += t.size();
    };
    pull_vec(m.tslm_raw);
    for (std::size_t i = 0; i < m.enc_w.size(); ++i) {
        pull(m.enc_w[i]);
        pull_vec(m.enc_b[i]);
    }
    pull(m.main_w);
    m.main_b = v(off++);
    pull(m.ssl_w);
    pull_vec(m.ssl_b);
    pull(m.prototypes);
}

Eigen::VectorXd flatten_grads(const objectives::ParamGrads& g) {
    std::vector<double> v;
    auto push = [&](const Eigen::MatrixXd& t) {
        v.insert(v.end(), t.data(), t.data() + t.size());
    };
    push(g.tslm_raw);
    for (std::size_t i = 0; i < g.enc_w.size(); ++i) {
        push(g.enc_w[i]);
        push(g.enc_b[i]);
    }
    push(g.main_w);
    v.push_back(g.main_b);
    push(g.ssl_w);
    push(g.ssl_b);
    push(g.prototypes);
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("loss_recon pinned values") {
    CHECK(objectives::loss_recon(vec({1, 2, 3}), vec({1, 2, 3})) == 0.0);
    CHECK(objectives::loss_recon(vec({1, 2, 3}), vec({1, 0, 3})) ==
          doctest::Approx(4.0 / 3.0));
    // residual scaling by c multiplies the loss by c²
    const double base = objectives::loss_recon(vec({1, 2}), vec({0, 0}));
    const double scaled = objectives::loss_recon(vec({3, 6}), vec({0, 0}));
    CHECK(scaled == doctest::Approx(9.0 * base));
}

TEST_CASE("loss_mfm pinned values and edge cases") {
    const std::vector<int> m1{1};
    CHECK(objectives::loss_mfm(vec({1, 2, 3}), vec({1, 0, 3}), m1) == doctest::Approx(4.0));
    const std::vector<int> all{0, 1, 2};
    CHECK(objectives::loss_mfm(vec({1, 2, 3}), vec({1, 0, 3}), all) ==
          doctest::Approx(objectives::loss_recon(vec({1, 2, 3}), vec({1, 0, 3}))));
    CHECK(objectives::loss_mfm(vec({1, 2}), vec({1, 2}), std::vector<int>{0}) == 0.0);
    CHECK_THROWS_AS(objectives::loss_mfm(vec({1, 2}), vec({1, 2}), std::vector<int>{}),
                    std::invalid_argument);
}

TEST_CASE("loss_ssl composition") {
    const std::vector<int> m1{1};
    const double mfm = objectives::loss_mfm(vec({1, 2, 3}), vec({1, 0, 3}), m1);
    CHECK(objectives::loss_ssl(vec({1, 2, 3}), vec({1, 0, 3}), m1, 0.0) ==
          doctest::Approx(mfm));
    CHECK(objectives::loss_ssl(vec({1, 2, 3}), vec({1, 0, 3}), m1, 0.5) ==
          doctest::Approx(0.5 * 4.0 / 3.0 + 4.0));
    CHECK(objectives::loss_ssl(vec({1, 2}), vec({1, 2}), std::vector<int>{0}, 0.5) == 0.0);
}

TEST_CASE("loss_main pinned values") {
    CHECK(objectives::loss_main(0.5, 0) == doctest::Approx(std::log(2.0)));
    CHECK(objectives::loss_main(0.5, 1) == doctest::Approx(std::log(2.0)));
    CHECK(objectives::loss_main(0.9, 1) == doctest::Approx(0.105360515657826));
    CHECK(objectives::loss_main(1.0, 1) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(objectives::loss_main(1.0, 0) > 10.0);  // clamped, finite
}

TEST_CASE("loss_proto pinned values and descent") {
    Eigen::MatrixXd p(2, 2);
    p << 0, 0, 10, 10;
    CHECK(objectives::loss_proto(vec({0, 0}), p) == 0.0);
    CHECK(objectives::loss_proto(vec({1, 1}), p) == doctest::Approx(2.0));

    // one explicit gradient step on the assigned prototype decreases the loss
    const Eigen::VectorXd z = vec({1, 1});
    const double before = objectives::loss_proto(z, p);
    // d/dp_A ‖z − p_A‖² = −2(z − p_A); step size 0.1
    p.row(0) += 0.1 * 2.0 * (z.transpose() - p.row(0));
    CHECK(objectives::loss_proto(z, p) < before);
}

TEST_CASE("loss_balance pinned values") {
    // perfectly balanced
    const std::vector<int> balanced{0, 1, 0, 1};
    CHECK(objectives::loss_balance(balanced, 2) == doctest::Approx(0.0));
    // all mass on prototype 1 of 2, n=4 → (1−½)² + (0−½)² = ½
    const std::vector<int> collapsed{1, 1, 1, 1};
    CHECK(objectives::loss_balance(collapsed, 2) == doctest::Approx(0.5));
    // permutation invariant
    const std::vector<int> perm{1, 0, 1, 0};
    CHECK(objectives::loss_balance(perm, 2) ==
          doctest::Approx(objectives::loss_balance(balanced, 2)));
    CHECK_THROWS_AS(objectives::loss_balance(balanced, 1), std::invalid_argument);
}

TEST_CASE("objective_train: gradient matches finite differences") {
    Rng rng(51);
    const int d = 3;
    for (int rep = 0; rep < 5; ++rep) {
        auto m = small_model(d, rng);
        std::vector<Instance> batch;
        for (int i = 0; i < 4; ++i) batch.push_back(rand_instance(d, rng, i % 2));
        const LossWeights w{0.5, 0.5, 0.5, 0.5};

        // frozen rng per evaluation so mask draws are identical
        const std::uint64_t mask_seed = rng.next_u64();
        auto eval = [&](const model::ModelState& mm) {
            Rng r(mask_seed);
            model::ModelState copy = mm;
            return objectives::objective_train(batch, copy, masking::make_mask_state(d, 0.5),
                                               w, r, true);
        };
        const auto ev = eval(m);
        const Eigen::VectorXd g_ad = flatten_grads(ev.grads);

        const Eigen::VectorXd theta0 = flatten_params(m);
        auto value_at = [&](const Eigen::VectorXd& theta) {
            model::ModelState mm = m;
            unflatten_params(mm, theta);
            return eval(mm).total;
        };
        const Eigen::VectorXd g_fd = oracles::fd_gradient(value_at, theta0);
        CHECK(oracles::max_rel_err(g_ad, g_fd) < 1e-4);
    }
}

TEST_CASE("objective_train: term dropout reduces to the SSL+main value") {
    Rng rng(52);
    const int d = 3;
    auto m = small_model(d, rng);
    std::vector<Instance> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(rand_instance(d, rng, i % 2));
    const std::uint64_t mask_seed = rng.next_u64();

    LossWeights w{0.5, 0.0, 0.0, 0.5};
    Rng r1(mask_seed);
    const auto with_zero_proto = objectives::objective_train(
        batch, m, masking::make_mask_state(d, 0.5), w, r1, true);
    Rng r2(mask_seed);
    const auto without_proto = objectives::objective_train(
        batch, m, masking::make_mask_state(d, 0.5), w, r2, false);
    CHECK(with_zero_proto.total ==
          doctest::Approx(without_proto.total).epsilon(1e-12));
}

TEST_CASE("objective_test: gradient matches finite differences, heads frozen") {
    Rng rng(53);
    const int d = 3;
    for (int rep = 0; rep < 5; ++rep) {
        auto m = small_model(d, rng);
        const Instance inst = rand_instance(d, rng, 1);
        const LossWeights w{0.5, 0.5, 0.5, 0.5};
        const Eigen::VectorXd probs = Eigen::VectorXd::Constant(d, 0.5);

        // fixed augmentation + plan (constant during differentiation)
        Rng aug_rng(rep + 100);
        const Eigen::VectorXd z = model::encode(m, inst.x, inst.dt);
        const auto aug = transport::augment(z, m.prototypes, aug_rng);
        const int k = m.prototype_count();
        const Eigen::VectorXd uni = Eigen::VectorXd::Constant(k, 1.0 / k);
        const auto plan = transport::sinkhorn(transport::cost_matrix(aug, m.prototypes),
                                              uni, uni, 0.1, 1000, 1e-6);

        const std::uint64_t mask_seed = rng.next_u64();
        auto eval = [&](const model::ModelState& mm) {
            Rng r(mask_seed);
            return objectives::objective_test(inst, mm, probs, &aug, &plan, w, r);
        };
        const auto ev = eval(m);

        // heads and prototypes receive no gradient
        CHECK(ev.grads.main_w.cwiseAbs().maxCoeff() == 0.0);
        CHECK(ev.grads.ssl_w.cwiseAbs().maxCoeff() == 0.0);
        CHECK(ev.grads.prototypes.cwiseAbs().maxCoeff() == 0.0);

        // finite differences over encoder + gating parameters only
        const Eigen::VectorXd g_ad = flatten_grads(ev.grads);
        const Eigen::VectorXd theta0 = flatten_params(m);
        auto value_at = [&](const Eigen::VectorXd& theta) {
            model::ModelState mm = m;
            unflatten_params(mm, theta);
            return eval(mm).total;
        };
        const Eigen::VectorXd g_fd = oracles::fd_gradient(value_at, theta0);
        // compare only encoder coordinates (heads are frozen in the AD path;
        // FD over head coordinates would see the λ_ot·C dependence on P)
        const Eigen::Index enc_len = m.tslm_raw.size() + m.enc_w[0].size() +
                                     m.enc_b[0].size() + m.enc_w[1].size() +
                                     m.enc_b[1].size();
        CHECK(oracles::max_rel_err(g_ad.head(enc_len), g_fd.head(enc_len)) < 1e-4);
    }
}

TEST_CASE("objective_test: λ_ot = 0 equals the SSL loss; descent step") {
    Rng rng(54);
    const int d = 4;
    auto m = small_model(d, rng);
    const Instance inst = rand_instance(d, rng, 0);
    const Eigen::VectorXd probs = Eigen::VectorXd::Constant(d, 0.5);
    const std::uint64_t mask_seed = rng.next_u64();

    LossWeights w{0.5, 0.5, 0.5, 0.0};
    Rng r1(mask_seed);
    const auto ev = objectives::objective_test(inst, m, probs, nullptr, nullptr, w, r1);
    CHECK(ev.total == doctest::Approx(ev.ssl));
    CHECK(ev.ot == 0.0);

    // a small step along the negative gradient decreases the objective
    model::ModelState m2 = m;
    m2.tslm_raw -= 1e-3 * ev.grads.tslm_raw;
    for (std::size_t i = 0; i < m2.enc_w.size(); ++i) {
        m2.enc_w[i] -= 1e-3 * ev.grads.enc_w[i];
        m2.enc_b[i] -= 1e-3 * ev.grads.enc_b[i];
    }
    Rng r2(mask_seed);
    const auto ev2 = objectives::objective_test(inst, m2, probs, nullptr, nullptr, w, r2);
    CHECK(ev2.total < ev.total);
}

TEST_CASE("objective_test: zero OT cost on exact match, infeasible plan rejected") {
    Rng rng(55);
    const int d = 3;
    auto m = small_model(d, rng, 2, 2);
    const Instance inst = rand_instance(d, rng, 0);
    const Eigen::VectorXd z = model::encode(m, inst.x, inst.dt);
    const Eigen::VectorXd probs = Eigen::VectorXd::Constant(d, 0.5);

    // both prototypes at z', duplicates at z' → every cost entry is zero
    m.prototypes.resize(2, 2);
    m.prototypes.row(0) = z.transpose();
    m.prototypes.row(1) = z.transpose();
    transport::AugmentedSet aug;
    aug.rows.resize(2, 2);
    aug.rows.row(0) = z.transpose();
    aug.rows.row(1) = z.transpose();

    transport::TransportPlan plan;
    plan.cost = transport::cost_matrix(aug, m.prototypes);
    plan.gamma.resize(2, 2);
    plan.gamma << 0.25, 0.25, 0.25, 0.25;
    Rng r1(1);
    const auto ev = objectives::objective_test(inst, m, probs, &aug, &plan,
                                               LossWeights{}, r1);
    CHECK(ev.ot == doctest::Approx(0.0));
    CHECK(ev.total == doctest::Approx(ev.ssl));

    // marginals far from uniform are rejected
    plan.gamma << 0.5, 0.0, 0.5, 0.0;
    Rng r2(1);
    CHECK_THROWS_AS(objectives::objective_test(inst, m, probs, &aug, &plan,
                                               LossWeights{}, r2),
                    std::invalid_argument);
}

TEST_CASE("losses are nonnegative at random configurations") {
    Rng rng(56);
    for (int rep = 0; rep < 100; ++rep) {
        const int d = 2 + rng.uniform_int(5);
        const Eigen::VectorXd x = Eigen::VectorXd::Random(d);
        const Eigen::VectorXd xh = Eigen::VectorXd::Random(d);
        CHECK(objectives::loss_recon(x, xh) >= 0.0);
        const std::vector<int> m1{rng.uniform_int(d)};
        CHECK(objectives::loss_mfm(x, xh, m1) >= 0.0);
        CHECK(objectives::loss_main(rng.uniform(), rng.bernoulli(0.5)) >= 0.0);
    }
}

}  // TEST_SUITE
