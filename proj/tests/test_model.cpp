#include "adattt/model.hpp"
#include "adattt/rng.hpp"

#include "doctest.h"

#include <cstdio>
#include <filesystem>

using namespace adattt;
using model::ModelState;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) x(i++) = d;
    return x;
}

// single linear layer = identity, inert stats
ModelState identity_model(int d) {
    Rng rng(1);
    ModelState s = model::init_model(d, {}, d, 2, rng);
    s.enc_w[0] = Eigen::MatrixXd::Identity(d, d);
    s.enc_b[0] = Eigen::VectorXd::Zero(d);
    s.tslm_raw = Eigen::VectorXd::Constant(d, -1e4);  // softplus underflows to 0
    return s;
}

ModelState random_model(int d, Rng& rng) {
    ModelState s = model::init_model(d, {6, 5}, 4, 3, rng);
    for (auto& b : s.enc_b)
        for (Eigen::Index i = 0; i < b.rows(); ++i) b(i) = 0.1 * rng.normal();
    s.prototypes = Eigen::MatrixXd::Random(3, 4);
    s.stats.mean = Eigen::VectorXd::Zero(d);
    s.stats.stdev = Eigen::VectorXd::Ones(d);
    s.stats.reservoirs.assign(static_cast<std::size_t>(d), {0.0, 0.5, 1.0});
    s.impute_means = Eigen::VectorXd::Zero(d);
    return s;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("gating: zero staleness and zero rate are neutral") {
    auto s = identity_model(2);
    const Eigen::VectorXd x = vec({1.0, -1.0});

    // Δt = 0 → gate 1 regardless of rates
    s.tslm_raw = vec({0.3, 2.0});
    Eigen::VectorXd z = model::encode(s, x, vec({0.0, 0.0}));
    CHECK(z(0) == 1.0);
    CHECK(z(1) == -1.0);

    // rate = 0 (softplus underflow) → gate independent of Δt, bitwise
    s.tslm_raw = Eigen::VectorXd::Constant(2, -1e4);
    CHECK(s.tslm_rates().cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXd z0 = model::encode(s, x, vec({0.0, 0.0}));
    const Eigen::VectorXd z72 = model::encode(s, x, vec({72.0, 5.0}));
    CHECK(std::memcmp(z0.data(), z72.data(), 2 * sizeof(double)) == 0);
}

TEST_CASE("identity encoder passes the input through") {
    const auto s = identity_model(2);
    const Eigen::VectorXd z = model::encode(s, vec({1.0, -1.0}), vec({0.0, 0.0}));
    CHECK(z(0) == 1.0);
    CHECK(z(1) == -1.0);
    // SSL head with identity weights reconstructs exactly
    auto s2 = s;
    s2.ssl_w = Eigen::MatrixXd::Identity(2, 2);
    s2.ssl_b = Eigen::VectorXd::Zero(2);
    const Eigen::VectorXd xhat = model::predict_ssl(s2, z);
    CHECK(xhat(0) == 1.0);
    CHECK(xhat(1) == -1.0);
}

TEST_CASE("predict_main") {
    auto s = identity_model(1);
    s.main_w = Eigen::MatrixXd::Zero(1, 1);
    s.main_b = 0.0;
    CHECK(model::predict_main(s, vec({3.0})).first == doctest::Approx(0.5));

    s.main_w(0, 0) = 1.0;
    const auto [p, logit] = model::predict_main(s, vec({2.0}));
    CHECK(logit == doctest::Approx(2.0));
    CHECK(p == doctest::Approx(0.8807970779778823));

    // clamp keeps the probability inside (0,1)
    s.main_w(0, 0) = 100.0;
    const auto [p2, logit2] = model::predict_main(s, vec({10.0}));
    CHECK(logit2 == doctest::Approx(1000.0));
    CHECK(p2 < 1.0);
    CHECK(p2 == doctest::Approx(1.0 / (1.0 + std::exp(-30.0))));
}

TEST_CASE("assign_prototype: nearest, ties to lowest index") {
    Rng rng(2);
    auto s = random_model(3, rng);
    s.prototypes.resize(3, 4);
    s.prototypes << 0, 0, 0, 0, 10, 10, 10, 10, 1, 1, 1, 1;
    CHECK(model::assign_prototype(s, vec({1, 1, 0, 0})) == 0);
    CHECK(model::assign_prototype(s, vec({1, 1, 1, 1})) == 2);

    // exactly equidistant pair → lowest index wins
    s.prototypes.resize(2, 4);
    s.prototypes << 0, 0, 0, 0, 10, 10, 10, 10;
    CHECK(model::assign_prototype(s, vec({5, 5, 5, 5})) == 0);

    s.prototypes.resize(0, 4);
    CHECK_THROWS_AS(model::assign_prototype(s, vec({1, 1, 1, 1})), std::invalid_argument);
}

TEST_CASE("assign_prototype minimizes distance (exhaustive check)") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        auto s = random_model(3, rng);
        const int k = 2 + rng.uniform_int(15);
        s.prototypes = Eigen::MatrixXd::Random(k, 4);
        Eigen::VectorXd z(4);
        for (int i = 0; i < 4; ++i) z(i) = rng.normal();
        const int a = model::assign_prototype(s, z);
        for (int j = 0; j < k; ++j)
            CHECK((z.transpose() - s.prototypes.row(a)).squaredNorm() <=
                  (z.transpose() - s.prototypes.row(j)).squaredNorm() + 1e-15);
    }
}

TEST_CASE("snapshot/restore round-trip is bitwise") {
    Rng rng(4);
    auto s = random_model(5, rng);
    const auto snap = model::snapshot(s);
    const auto before = s;

    // perturb everything
    s.tslm_raw.array() += 0.25;
    for (auto& w : s.enc_w) w.array() *= 1.5;
    s.main_b = 9.0;
    s.prototypes.array() -= 2.0;
    CHECK_FALSE(model::bitwise_equal(s, before));

    model::restore(s, snap);
    CHECK(model::bitwise_equal(s, before));

    // restore onto a fresh same-shape state
    Rng rng2(99);
    auto fresh = random_model(5, rng2);
    model::restore(fresh, snap);
    CHECK(model::bitwise_equal(fresh, before));

    // two snapshots of identical state are equal
    const auto snap2 = model::snapshot(s);
    CHECK(model::bitwise_equal(snap.state, snap2.state));

    // shape mismatch rejected
    Rng rng3(5);
    auto other = random_model(7, rng3);
    CHECK_THROWS_AS(model::restore(other, snap), std::invalid_argument);
}

TEST_CASE("graph forward agrees with value forward") {
    Rng rng(6);
    const auto s = random_model(5, rng);
    const Eigen::VectorXd x = Eigen::VectorXd::Random(5);
    const Eigen::VectorXd dt = (Eigen::VectorXd::Random(5).array() + 1.0) * 10.0;

    ad::Tape tape;
    const auto params = model::stage_params(tape, s, model::Trainable::None);
    const auto z_node = model::encode_node(tape, params, tape.constant(x), dt);
    const Eigen::VectorXd z_graph = tape.value(z_node);
    const Eigen::VectorXd z_direct = model::encode(s, x, dt);
    CHECK((z_graph - z_direct).cwiseAbs().maxCoeff() < 1e-12);

    const double logit_graph =
        tape.value_scalar(model::main_logit_node(tape, params, z_node));
    CHECK(logit_graph == doctest::Approx(model::predict_main(s, z_direct).second));
}

TEST_CASE("persistence round-trip is bit-exact") {
    Rng rng(7);
    auto s = random_model(4, rng);
    s.threshold = 0.37;
    s.mask_prior = 0.5;
    s.n_static = 3;
    s.stats.reservoirs[1] = {1.0, -0.123456789123456789, 3.5e-17};

    const std::string path = "test_model_roundtrip.bin";
    model::save_model(s, path);
    const auto loaded = model::load_model(path);
    CHECK(model::bitwise_equal(s, loaded));
    std::filesystem::remove(path);
}

TEST_CASE("fit_stats: standardization and reservoirs") {
    Rng rng(8);
    std::vector<Eigen::VectorXd> rows;
    for (int i = 0; i < 500; ++i) rows.push_back(vec({2.0 + rng.normal() * 3.0, 7.0}));
    auto st = model::fit_stats(rows, rng);
    CHECK(st.mean(0) == doctest::Approx(2.0).epsilon(0.2));
    CHECK(st.stdev(0) == doctest::Approx(3.0).epsilon(0.2));
    // constant feature: stdev floored to 1
    CHECK(st.stdev(1) == 1.0);
    CHECK(st.reservoirs[0].size() == 500);
}

}  // TEST_SUITE
