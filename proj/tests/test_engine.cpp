#include "adattt/engine.hpp"
#include "adattt/rng.hpp"

#include "doctest.h"

#include <cmath>

using namespace adattt;
using engine::EngineConfig;
using engine::Method;
using engine::Mode;

namespace {

// hand-built separable two-feature dataset: class means ±2, fully observed
std::vector<datagen::Encounter> separable_encounters(int n, double prevalence,
                                                     std::uint64_t seed) {
    Rng rng(seed);
    std::vector<datagen::Encounter> out;
    for (int i = 0; i < n; ++i) {
        datagen::Encounter e;
        e.id = "sep-" + std::to_string(i);
        e.label = rng.bernoulli(prevalence) ? 1 : 0;
        const double mu = e.label ? 2.0 : -2.0;
        const int len = 3 + rng.uniform_int(3);
        for (int t = 1; t <= len; ++t) {
            datagen::RawRow row;
            row.t = t;
            row.values = {mu + 0.5 * rng.normal(), -mu + 0.5 * rng.normal()};
            e.rows.push_back(row);
        }
        if (e.label) e.t0 = static_cast<double>(len);
        out.push_back(std::move(e));
    }
    // guarantee both classes
    out[0].label = 1;
    out[0].t0 = out[0].rows.back().t;
    out[1].label = 0;
    out[1].t0.reset();
    return out;
}

EngineConfig tiny_config() {
    EngineConfig cfg;
    cfg.hidden = {8};
    cfg.latent_dim = 4;
    cfg.k = 2;
    cfg.epochs = 20;
    cfg.batch_size = 16;
    cfg.warmup_epochs = 3;
    cfg.pretrain_lr = 0.05;
    cfg.n_static = 0;
    cfg.seed = 42;
    cfg.relevance_sample = 256;
    return cfg;
}

engine::PretrainResult pretrain_tiny(Method method = Method::AdaTTT) {
    auto train = separable_encounters(120, 0.3, 1);
    auto val = separable_encounters(60, 0.3, 2);
    EngineConfig cfg = tiny_config();
    cfg.method = method;
    return engine::pretrain(train, val, cfg);
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("pretrain reaches high AUC on a separable dataset") {
    const auto res = pretrain_tiny();
    CHECK(res.log.size() == 20);
    CHECK(res.log.back().val_auc > 0.95);
    // warm-up epochs log the prior, adaptive epochs span [0,1]
    CHECK(res.log[0].warmup);
    CHECK(res.log[0].mask_min == 0.5);
    CHECK(res.log[0].mask_max == 0.5);
    CHECK_FALSE(res.log.back().warmup);
    CHECK(res.log.back().mask_min == 0.0);
    CHECK(res.log.back().mask_max == 1.0);
}

TEST_CASE("warm-up covering all epochs keeps the prior throughout") {
    auto train = separable_encounters(60, 0.3, 3);
    auto val = separable_encounters(40, 0.3, 4);
    EngineConfig cfg = tiny_config();
    cfg.epochs = 4;
    cfg.warmup_epochs = 10;
    const auto res = engine::pretrain(train, val, cfg);
    for (const auto& rec : res.log) {
        CHECK(rec.warmup);
        CHECK(rec.mask_min == 0.5);
        CHECK(rec.mask_max == 0.5);
    }
}

TEST_CASE("DynTTT pretraining disables dynamic masking") {
    auto train = separable_encounters(60, 0.3, 5);
    auto val = separable_encounters(40, 0.3, 6);
    EngineConfig cfg = tiny_config();
    cfg.epochs = 6;
    cfg.warmup_epochs = 2;
    cfg.method = Method::DynTTT;
    const auto res = engine::pretrain(train, val, cfg);
    for (const auto& rec : res.log) {
        CHECK(rec.mask_min == 0.5);
        CHECK(rec.mask_max == 0.5);
    }
}

TEST_CASE("pretrain is deterministic given the seed") {
    const auto r1 = pretrain_tiny();
    const auto r2 = pretrain_tiny();
    CHECK(model::bitwise_equal(r1.model, r2.model));
}

TEST_CASE("TEST method returns the unadapted prediction with a bare trace") {
    auto res = pretrain_tiny();
    const auto insts = engine::prepare_instances(res.model, separable_encounters(10, 0.3, 7));
    EngineConfig cfg = tiny_config();
    cfg.method = Method::TEST;
    Rng rng(9);
    const auto before = model::snapshot(res.model);
    const auto ar = engine::adapt_instance(res.model, insts[0], cfg, rng);
    CHECK(ar.trace.steps.empty());
    CHECK(ar.probability == ar.trace.pre_risk);
    CHECK(model::bitwise_equal(res.model, before.state));
}

TEST_CASE("reset mode restores the model bitwise; heads and prototypes frozen") {
    auto res = pretrain_tiny();
    const auto insts = engine::prepare_instances(res.model, separable_encounters(20, 0.3, 8));
    const auto before = model::snapshot(res.model);

    for (Method method : {Method::TTT, Method::PriTTT, Method::DynTTT, Method::AdaTTT}) {
        EngineConfig cfg = tiny_config();
        cfg.method = method;
        cfg.ttt_steps = 3;
        for (std::size_t i = 0; i < 10 && i < insts.size(); ++i) {
            Rng rng(instance_seed(1, insts[i].encounter_id, insts[i].t));
            const auto ar = engine::adapt_instance(res.model, insts[i], cfg, rng);
            CHECK_FALSE(ar.trace.fallback);
            CHECK(ar.trace.steps.size() == 3);
        }
        CHECK(model::bitwise_equal(res.model, before.state));
    }
}

TEST_CASE("adaptation changes the prediction but not the heads") {
    auto res = pretrain_tiny();
    auto insts = engine::prepare_instances(res.model, separable_encounters(10, 0.5, 10));
    EngineConfig cfg = tiny_config();
    cfg.method = Method::AdaTTT;
    cfg.mode = Mode::Sequential;  // keep the adapted state to inspect it
    cfg.ttt_steps = 1;
    model::ModelState m = res.model;
    std::vector<Instance> one{insts[0]};
    const auto sr = engine::adapt_stream(m, one, cfg);
    // heads and prototypes bitwise untouched even without restore
    CHECK(std::memcmp(m.main_w.data(), res.model.main_w.data(),
                      sizeof(double) * m.main_w.size()) == 0);
    CHECK(std::memcmp(m.ssl_w.data(), res.model.ssl_w.data(),
                      sizeof(double) * m.ssl_w.size()) == 0);
    CHECK(std::memcmp(m.prototypes.data(), res.model.prototypes.data(),
                      sizeof(double) * m.prototypes.size()) == 0);
    // encoder did move
    CHECK(std::memcmp(m.enc_w[0].data(), res.model.enc_w[0].data(),
                      sizeof(double) * m.enc_w[0].size()) != 0);
}

TEST_CASE("zero step size leaves predictions unadapted") {
    auto res = pretrain_tiny();
    const auto insts = engine::prepare_instances(res.model, separable_encounters(10, 0.3, 11));
    EngineConfig cfg = tiny_config();
    cfg.method = Method::AdaTTT;
    cfg.ttt_lr = 0.0;
    cfg.ttt_steps = 5;
    for (std::size_t i = 0; i < 5; ++i) {
        Rng rng(instance_seed(2, insts[i].encounter_id, insts[i].t));
        const auto ar = engine::adapt_instance(res.model, insts[i], cfg, rng);
        CHECK(ar.probability == ar.trace.pre_risk);
    }
}

TEST_CASE("single-point stream equals adapt_instance minus the restore") {
    auto res = pretrain_tiny();
    const auto insts = engine::prepare_instances(res.model, separable_encounters(6, 0.5, 12));
    EngineConfig cfg = tiny_config();
    cfg.method = Method::AdaTTT;
    cfg.seed = 77;

    // reset-path prediction with one step
    EngineConfig cfg_reset = cfg;
    cfg_reset.ttt_steps = 1;
    model::ModelState m1 = res.model;
    Rng rng(instance_seed(cfg.seed, insts[0].encounter_id, insts[0].t));
    const auto ar = engine::adapt_instance(m1, insts[0], cfg_reset, rng);

    EngineConfig cfg_seq = cfg;
    cfg_seq.mode = Mode::Sequential;
    model::ModelState m2 = res.model;
    std::vector<Instance> one{insts[0]};
    const auto sr = engine::adapt_stream(m2, one, cfg_seq);
    CHECK(sr.scored[0].score == ar.probability);
    // stream retains the adapted weights, reset path does not
    CHECK(model::bitwise_equal(m1, res.model));
    CHECK_FALSE(model::bitwise_equal(m2, res.model));
}

TEST_CASE("stream with zero step size reproduces TEST predictions") {
    auto res = pretrain_tiny();
    const auto insts = engine::prepare_instances(res.model, separable_encounters(20, 0.3, 13));
    EngineConfig cfg = tiny_config();
    cfg.method = Method::AdaTTT;
    cfg.mode = Mode::Sequential;
    cfg.ttt_lr = 0.0;
    model::ModelState m = res.model;
    const auto sr = engine::adapt_stream(m, insts, cfg);
    for (std::size_t i = 0; i < insts.size(); ++i) {
        const double test_pred =
            model::predict_main(res.model,
                                model::encode(res.model, insts[i].x, insts[i].dt))
                .first;
        CHECK(sr.scored[i].score == test_pred);
    }
}

TEST_CASE("stream of identical instances: objective non-increasing") {
    auto res = pretrain_tiny();
    const auto insts = engine::prepare_instances(res.model, separable_encounters(6, 0.5, 14));
    EngineConfig cfg = tiny_config();
    cfg.method = Method::TTT;  // fixed-prior masking, no OT: smooth fixed objective
    cfg.mode = Mode::Sequential;
    cfg.ttt_lr = 1e-3;

    // same instance repeated; freeze the mask draw via identical seeds by
    // reusing one encounter_id/timestamp
    std::vector<Instance> stream(12, insts[0]);
    model::ModelState m = res.model;

    // manual descent check on the smooth full-mask surrogate: run the stream
    // and confirm the recorded SSL objective trend is non-increasing overall
    std::vector<double> objs;
    for (int i = 0; i < 12; ++i) {
        Rng rng(instance_seed(cfg.seed, stream[0].encounter_id, stream[0].t));
        const Eigen::VectorXd probs = Eigen::VectorXd::Constant(m.input_dim(), 1.0);
        const auto ev = objectives::objective_test(stream[0], m, probs, nullptr,
                                                   nullptr, cfg.weights, rng);
        objs.push_back(ev.total);
        engine::EngineConfig step_cfg = cfg;
        model::ModelState tmp = m;
        // apply the gradient step directly
        m.tslm_raw -= cfg.ttt_lr * ev.grads.tslm_raw;
        for (std::size_t l = 0; l < m.enc_w.size(); ++l) {
            m.enc_w[l] -= cfg.ttt_lr * ev.grads.enc_w[l];
            m.enc_b[l] -= cfg.ttt_lr * ev.grads.enc_b[l];
        }
        (void)step_cfg;
        (void)tmp;
    }
    for (std::size_t i = 1; i < objs.size(); ++i) CHECK(objs[i] <= objs[i - 1] + 1e-12);
}

TEST_CASE("evaluate_method: TEST identical across runs, seeds irrelevant") {
    auto res = pretrain_tiny();
    const auto encs = separable_encounters(40, 0.3, 15);
    EngineConfig cfg = tiny_config();
    cfg.method = Method::TEST;
    const auto rep1 = engine::evaluate_method(res.model, encs, cfg, 3, "siteX");
    cfg.seed = 999;
    cfg.ttt_steps = 4;
    const auto rep2 = engine::evaluate_method(res.model, encs, cfg, 3, "siteX");
    CHECK(rep1.auc.mean == rep2.auc.mean);
    CHECK(rep1.auc.se == 0.0);
    CHECK(rep1.brier.mean == rep2.brier.mean);
    CHECK(rep1.runs == 3);
}

TEST_CASE("evaluate_method: parallel equals serial bitwise") {
    auto res = pretrain_tiny();
    const auto encs = separable_encounters(30, 0.3, 16);
    EngineConfig cfg = tiny_config();
    cfg.method = Method::AdaTTT;
    cfg.ttt_steps = 2;

    cfg.threads = 1;
    const auto serial = engine::evaluate_method(res.model, encs, cfg, 2, "s");
    cfg.threads = 4;
    const auto parallel = engine::evaluate_method(res.model, encs, cfg, 2, "s");
    REQUIRE(serial.per_run.size() == parallel.per_run.size());
    for (std::size_t r = 0; r < serial.per_run.size(); ++r) {
        CHECK(serial.per_run[r].auc == parallel.per_run[r].auc);
        CHECK(serial.per_run[r].brier == parallel.per_run[r].brier);
        CHECK(serial.per_run[r].confusion.tp == parallel.per_run[r].confusion.tp);
    }
}

TEST_CASE("sequential evaluation emits a cumulative trajectory") {
    auto res = pretrain_tiny();
    const auto encs = separable_encounters(25, 0.4, 17);
    EngineConfig cfg = tiny_config();
    cfg.method = Method::AdaTTT;
    cfg.mode = Mode::Sequential;
    const auto rep = engine::evaluate_method(res.model, encs, cfg, 1, "s");
    CHECK(rep.trajectory.size() == encs.size());
    // once both classes have streamed past, the cumulative AUC exists
    CHECK(rep.trajectory.back().cumulative_auc.has_value());
}

TEST_CASE("null shift sanity: source-trained model transfers to identical target") {
    datagen::SynthConfig scfg;
    scfg.n_source = 260;
    scfg.n_target = 200;
    scfg.d_raw = 4;
    scfg.n_static = 3;
    scfg.prevalence = 0.2;
    scfg.len_min = 4;
    scfg.len_max = 8;
    scfg.base_missing = 0.2;
    const auto [src, tgt] =
        datagen::synth_generate(scfg, datagen::ShiftSpec::identity(scfg.d_raw), 21);

    EngineConfig cfg = tiny_config();
    cfg.n_static = 3;
    cfg.epochs = 12;
    cfg.hidden = {16};
    cfg.latent_dim = 8;
    const std::size_t n_val = src.size() / 5;
    std::vector<datagen::Encounter> train(src.begin(), src.end() - n_val);
    std::vector<datagen::Encounter> val(src.end() - n_val, src.end());
    const auto res = engine::pretrain(train, val, cfg);

    EngineConfig test_cfg = cfg;
    test_cfg.method = Method::TEST;
    const auto rep_src = engine::evaluate_method(res.model, val, test_cfg, 1, "src");
    const auto rep_tgt = engine::evaluate_method(res.model, tgt, test_cfg, 1, "tgt");
    CHECK(std::abs(rep_src.auc.mean - rep_tgt.auc.mean) < 0.05);
}

}  // TEST_SUITE
