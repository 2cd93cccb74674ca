#include "adattt/engine.hpp"

#include "adattt/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace adattt::engine {

Method method_from_string(const std::string& s) {
    if (s == "TEST") return Method::TEST;
    if (s == "TTT") return Method::TTT;
    if (s == "PriTTT") return Method::PriTTT;
    if (s == "DynTTT") return Method::DynTTT;
    if (s == "AdaTTT") return Method::AdaTTT;
    throw std::invalid_argument("unknown method '" + s + "'");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::TEST: return "TEST";
        case Method::TTT: return "TTT";
        case Method::PriTTT: return "PriTTT";
        case Method::DynTTT: return "DynTTT";
        case Method::AdaTTT: return "AdaTTT";
    }
    return "?";
}

void EngineConfig::validate() const {
    if (ttt_steps < 1) throw std::invalid_argument("config: ttt_steps must be >= 1");
    if (ttt_lr < 0.0) throw std::invalid_argument("config: negative ttt_lr");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (warmup_epochs < 0) throw std::invalid_argument("config: negative warmup_epochs");
    if (prior < 0.0 || prior > 1.0) throw std::invalid_argument("config: prior outside [0,1]");
    if (k < 2) throw std::invalid_argument("config: k must be >= 2");
    if (latent_dim < 1) throw std::invalid_argument("config: latent_dim must be >= 1");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (sinkhorn_eps <= 0.0) throw std::invalid_argument("config: sinkhorn_eps must be > 0");
}

namespace {

struct Momentum {
    objectives::ParamGrads v;
    explicit Momentum(const model::ModelState& m) : v(objectives::zero_grads(m)) {}

    void step(model::ModelState& m, const objectives::ParamGrads& g, double lr,
              double beta) {
        v.tslm_raw = beta * v.tslm_raw + g.tslm_raw;
        m.tslm_raw -= lr * v.tslm_raw;
        for (std::size_t i = 0; i < m.enc_w.size(); ++i) {
            v.enc_w[i] = beta * v.enc_w[i] + g.enc_w[i];
            v.enc_b[i] = beta * v.enc_b[i] + g.enc_b[i];
            m.enc_w[i] -= lr * v.enc_w[i];
            m.enc_b[i] -= lr * v.enc_b[i];
        }
        v.main_w = beta * v.main_w + g.main_w;
        v.main_b = beta * v.main_b + g.main_b;
        m.main_w -= lr * v.main_w;
        m.main_b -= lr * v.main_b;
        v.ssl_w = beta * v.ssl_w + g.ssl_w;
        v.ssl_b = beta * v.ssl_b + g.ssl_b;
        m.ssl_w -= lr * v.ssl_w;
        m.ssl_b -= lr * v.ssl_b;
        v.prototypes = beta * v.prototypes + g.prototypes;
        m.prototypes -= lr * v.prototypes;
    }
};

bool encoder_grads_finite(const objectives::ParamGrads& g) {
    if (!g.tslm_raw.allFinite()) return false;
    for (std::size_t i = 0; i < g.enc_w.size(); ++i)
        if (!g.enc_w[i].allFinite() || !g.enc_b[i].allFinite()) return false;
    return true;
}

void apply_encoder_update(model::ModelState& m, const objectives::ParamGrads& g,
                          double lr) {
    m.tslm_raw -= lr * g.tslm_raw;
    for (std::size_t i = 0; i < m.enc_w.size(); ++i) {
        m.enc_w[i] -= lr * g.enc_w[i];
        m.enc_b[i] -= lr * g.enc_b[i];
    }
}

double predict_risk(const model::ModelState& m, const Instance& inst) {
    return model::predict_main(m, model::encode(m, inst.x, inst.dt)).first;
}

void mask_digest(const Eigen::VectorXd& probs, StepRecord& rec) {
    rec.mask_min = probs.minCoeff();
    rec.mask_mean = probs.mean();
    rec.mask_max = probs.maxCoeff();
}

// One test-time gradient step. Throws std::runtime_error on non-finite
// intermediates; the caller decides the fallback.
StepRecord adapt_step(model::ModelState& m, const Instance& inst,
                      const EngineConfig& cfg, int step_idx, Rng& rng,
                      Eigen::MatrixXd* frozen_offsets) {
    Eigen::VectorXd probs;
    if (uses_dynamic_masking(cfg.method)) {
        const Instance* one = &inst;
        probs = masking::relevance_to_probs(
            masking::compute_relevance(m, std::span<const Instance>(one, 1)));
    } else {
        probs = Eigen::VectorXd::Constant(m.input_dim(), cfg.prior);
    }

    transport::AugmentedSet aug;
    transport::TransportPlan plan;
    const bool with_ot = uses_transport(cfg.method);
    if (with_ot) {
        const Eigen::VectorXd z = model::encode(m, inst.x, inst.dt);
        if (cfg.freeze_duplicates) {
            if (step_idx == 1 || frozen_offsets->size() == 0) {
                aug = transport::augment(z, m.prototypes, rng);
                *frozen_offsets = aug.rows.rowwise() - aug.rows.row(0);
            } else {
                aug.rows = frozen_offsets->rowwise() + z.transpose();
            }
        } else {
            aug = transport::augment(z, m.prototypes, rng);
        }
        const int k = m.prototype_count();
        const Eigen::VectorXd uniform =
            Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
        plan = transport::sinkhorn(transport::cost_matrix(aug, m.prototypes), uniform,
                                   uniform, cfg.sinkhorn_eps, cfg.sinkhorn_max_iter,
                                   cfg.sinkhorn_tol);
    }

    const auto ev = objectives::objective_test(inst, m, probs, with_ot ? &aug : nullptr,
                                               with_ot ? &plan : nullptr, cfg.weights,
                                               rng);
    if (!std::isfinite(ev.total) || !encoder_grads_finite(ev.grads))
        throw std::runtime_error("adapt_step: non-finite test objective");
    apply_encoder_update(m, ev.grads, cfg.ttt_lr);

    StepRecord rec;
    rec.step = step_idx;
    rec.objective = ev.total;
    rec.ssl = ev.ssl;
    rec.ot = ev.ot;
    rec.risk = predict_risk(m, inst);
    mask_digest(probs, rec);
    return rec;
}

}  // namespace

AdaptResult adapt_instance(model::ModelState& m, const Instance& inst,
                           const EngineConfig& cfg, Rng& rng) {
    AdaptResult res;
    {
        const auto [p, logit] = model::predict_main(m, model::encode(m, inst.x, inst.dt));
        res.trace.pre_risk = p;
        res.probability = p;
        res.logit = logit;
    }
    if (cfg.method == Method::TEST) return res;
    if (m.prototype_count() < 2 && uses_transport(cfg.method))
        throw std::invalid_argument("adapt_instance: prototypes not initialized");

    const auto snap = model::snapshot(m);
    Eigen::MatrixXd frozen_offsets;
    bool failed = false;
    for (int step = 1; step <= cfg.effective_steps(); ++step) {
        try {
            res.trace.steps.push_back(adapt_step(m, inst, cfg, step, rng, &frozen_offsets));
        } catch (const std::runtime_error&) {
            failed = true;
            break;
        }
    }
    if (failed) {
        model::restore(m, snap);
        res.trace.fallback = true;
        res.trace.steps.clear();
        return res;  // unadapted prediction already filled in
    }

    const auto [p, logit] = model::predict_main(m, model::encode(m, inst.x, inst.dt));
    res.probability = p;
    res.logit = logit;
    if (cfg.mode == Mode::Reset) model::restore(m, snap);
    return res;
}

StreamResult adapt_stream(model::ModelState& m, std::span<const Instance> stream,
                          const EngineConfig& cfg) {
    if (cfg.mode != Mode::Sequential)
        throw std::invalid_argument("adapt_stream: config must be sequential");
    StreamResult out;
    out.scored.reserve(stream.size());

    long pos_seen = 0, neg_seen = 0;
    auto cum_auc = [&]() -> std::optional<double> {
        if (pos_seen == 0 || neg_seen == 0) return std::nullopt;
        std::vector<double> s;
        std::vector<int> y;
        s.reserve(out.scored.size());
        for (const auto& st : out.scored) {
            s.push_back(st.score);
            y.push_back(st.label);
        }
        return metrics::auc(s, y);
    };

    const std::string* current = nullptr;
    for (const Instance& inst : stream) {
        if (current != nullptr && inst.encounter_id != *current)
            out.trajectory.push_back({*current, cum_auc()});
        current = &inst.encounter_id;

        Rng rng(instance_seed(cfg.seed, inst.encounter_id, inst.t));
        double prob;
        if (cfg.method == Method::TEST || cfg.ttt_lr == 0.0) {
            // still take the (zero) step in the non-TEST case for trace parity
            if (cfg.method != Method::TEST) {
                Eigen::MatrixXd offsets;
                try {
                    adapt_step(m, inst, cfg, 1, rng, &offsets);
                } catch (const std::runtime_error&) {
                }
            }
            prob = predict_risk(m, inst);
        } else {
            Eigen::MatrixXd offsets;
            const auto snap = model::snapshot(m);
            try {
                adapt_step(m, inst, cfg, 1, rng, &offsets);
            } catch (const std::runtime_error&) {
                model::restore(m, snap);
            }
            prob = predict_risk(m, inst);
        }
        out.scored.push_back({inst.encounter_id, inst.t, prob, inst.label, inst.t0});
        if (inst.label != 0)
            ++pos_seen;
        else
            ++neg_seen;
    }
    if (current != nullptr) out.trajectory.push_back({*current, cum_auc()});
    return out;
}

std::vector<Instance> prepare_instances(const model::ModelState& m,
                                        std::span<const datagen::Encounter> encounters) {
    if (m.impute_means.rows() == 0)
        throw std::invalid_argument("prepare_instances: model carries no pipeline statistics");
    std::vector<Instance> out;
    for (const auto& enc : encounters) {
        auto insts = datagen::build_instances(enc, m.impute_means, m.n_static,
                                              &m.stats.mean, &m.stats.stdev);
        out.insert(out.end(), std::make_move_iterator(insts.begin()),
                   std::make_move_iterator(insts.end()));
    }
    return out;
}

PretrainResult pretrain(std::span<const datagen::Encounter> train,
                        std::span<const datagen::Encounter> val,
                        const EngineConfig& cfg) {
    cfg.validate();
    if (train.empty() || val.empty())
        throw std::invalid_argument("pretrain: empty train or validation set");

    const int columns = static_cast<int>(train.front().rows.front().values.size());
    const Eigen::VectorXd impute_means = datagen::observed_means(train, columns);

    // raw derived rows for statistics, then standardized instances
    std::vector<Eigen::VectorXd> raw_rows;
    for (const auto& enc : train)
        for (auto& inst :
             datagen::build_instances(enc, impute_means, cfg.n_static, nullptr, nullptr))
            raw_rows.push_back(std::move(inst.x));
    Rng stats_rng(hash_combine(cfg.seed, 0x57A75));
    model::FeatureStats stats = model::fit_stats(raw_rows, stats_rng);

    Rng init_rng(hash_combine(cfg.seed, 0x1217));
    model::ModelState m = model::init_model(static_cast<int>(stats.mean.rows()),
                                            cfg.hidden, cfg.latent_dim, cfg.k, init_rng);
    m.stats = std::move(stats);
    m.impute_means = impute_means;
    m.n_static = cfg.n_static;
    m.mask_prior = cfg.prior;

    std::vector<Instance> train_inst;
    for (const auto& enc : train)
        for (auto& inst : datagen::build_instances(enc, impute_means, cfg.n_static,
                                                   &m.stats.mean, &m.stats.stdev))
            train_inst.push_back(std::move(inst));
    std::vector<Instance> val_inst;
    for (const auto& enc : val)
        for (auto& inst : datagen::build_instances(enc, impute_means, cfg.n_static,
                                                   &m.stats.mean, &m.stats.stdev))
            val_inst.push_back(std::move(inst));

    const int n = static_cast<int>(train_inst.size());
    const bool dynamic = uses_dynamic_masking(cfg.method);
    masking::MaskState mask = masking::make_mask_state(m.input_dim(), cfg.prior);
    Eigen::VectorXd latest_relevance = Eigen::VectorXd::Zero(m.input_dim());

    auto relevance_on_sample = [&](int epoch) {
        Rng r(hash_combine(hash_combine(cfg.seed, 0x4E1), epoch));
        const int take = std::min(cfg.relevance_sample, n);
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < take; ++i)
            std::swap(idx[i], idx[i + r.uniform_int(n - i)]);
        std::vector<Instance> sample;
        sample.reserve(static_cast<std::size_t>(take));
        for (int i = 0; i < take; ++i) sample.push_back(train_inst[static_cast<std::size_t>(idx[i])]);
        return masking::compute_relevance(m, sample);
    };

    Momentum momentum(m);
    PretrainResult out;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (dynamic) {
            if (epoch > cfg.warmup_epochs && epoch == 1)
                latest_relevance = relevance_on_sample(0);  // adaptive from the start
            mask = masking::advance_schedule(mask, epoch, cfg.warmup_epochs,
                                             latest_relevance);
        }  // non-dynamic methods keep the fixed prior throughout

        Rng shuffle_rng(hash_combine(hash_combine(cfg.seed, 0x5FF1), epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(i + 1))]);

        Rng batch_rng(hash_combine(hash_combine(cfg.seed, 0xBA7C), epoch));
        const bool protos_active = epoch > 1;
        double total = 0.0, main = 0.0, ssl = 0.0, proto = 0.0, balance = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int stop = std::min(n, start + cfg.batch_size);
            std::vector<Instance> batch;
            batch.reserve(static_cast<std::size_t>(stop - start));
            for (int i = start; i < stop; ++i)
                batch.push_back(train_inst[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            objectives::TrainEval ev;
            try {
                ev = objectives::objective_train(batch, m, mask, cfg.weights, batch_rng,
                                                 protos_active);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("pretrain: epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(batches) + ": " +
                                         e.what());
            }
            momentum.step(m, ev.grads, cfg.pretrain_lr, cfg.momentum);
            total += ev.total;
            main += ev.main;
            ssl += ev.ssl;
            proto += ev.proto;
            balance += ev.balance_hard;
            ++batches;
        }

        if (epoch == 1) {
            // prototypes: embeddings of k random training instances
            Rng proto_rng(hash_combine(cfg.seed, 0x9207));
            for (int j = 0; j < cfg.k; ++j) {
                const Instance& inst =
                    train_inst[static_cast<std::size_t>(proto_rng.uniform_int(n))];
                m.prototypes.row(j) =
                    model::encode(m, inst.x, inst.dt).transpose();
            }
        }

        latest_relevance = relevance_on_sample(epoch);

        std::vector<double> val_scores;
        std::vector<int> val_labels;
        val_scores.reserve(val_inst.size());
        for (const auto& inst : val_inst) {
            val_scores.push_back(predict_risk(m, inst));
            val_labels.push_back(inst.label);
        }

        TrainLogRecord rec;
        rec.epoch = epoch;
        rec.total = total / batches;
        rec.main = main / batches;
        rec.ssl = ssl / batches;
        rec.proto = proto / batches;
        rec.balance = balance / batches;
        rec.val_auc = metrics::auc(val_scores, val_labels);
        rec.warmup = mask.phase == masking::Phase::Warmup;
        rec.mask_min = mask.probs.minCoeff();
        rec.mask_mean = mask.probs.mean();
        rec.mask_max = mask.probs.maxCoeff();
        out.log.push_back(rec);

        if (epoch == cfg.epochs) {
            m.threshold = metrics::youden_threshold(val_scores, val_labels);
        }
    }

    out.model = std::move(m);
    out.mask = mask;
    return out;
}

namespace {

struct GroupedInstances {
    std::vector<std::vector<Instance>> groups;  // one per encounter, order kept
    std::vector<std::size_t> offsets;           // slot of each group's first instance
    std::size_t total = 0;
};

GroupedInstances group_by_encounter(const model::ModelState& m,
                                    std::span<const datagen::Encounter> encounters) {
    GroupedInstances g;
    for (const auto& enc : encounters) {
        auto insts = datagen::build_instances(enc, m.impute_means, m.n_static,
                                              &m.stats.mean, &m.stats.stdev);
        g.offsets.push_back(g.total);
        g.total += insts.size();
        g.groups.push_back(std::move(insts));
    }
    return g;
}

RunMetrics run_metrics(const std::vector<metrics::ScoredTimestamp>& scored,
                       double threshold) {
    std::vector<double> s;
    std::vector<int> y;
    s.reserve(scored.size());
    for (const auto& st : scored) {
        s.push_back(st.score);
        y.push_back(st.label);
    }
    RunMetrics rm;
    rm.auc = metrics::auc(s, y);
    rm.brier = metrics::brier(s, y);
    rm.confusion = metrics::encounter_confusion(scored, threshold);
    return rm;
}

}  // namespace

MethodReport evaluate_method(const model::ModelState& m,
                             std::span<const datagen::Encounter> encounters,
                             const EngineConfig& cfg, int runs,
                             const std::string& site) {
    cfg.validate();
    if (runs < 1) throw std::invalid_argument("evaluate_method: runs must be >= 1");
    const GroupedInstances grouped = group_by_encounter(m, encounters);
    if (grouped.total == 0)
        throw std::invalid_argument("evaluate_method: no instances to evaluate");

    MethodReport report;
    report.method = to_string(cfg.method);
    report.mode = cfg.mode == Mode::Reset ? "reset" : "sequential";
    report.site = site;
    report.runs = runs;
    report.threshold = m.threshold;

    // TEST ignores seeds entirely; evaluate once and replicate
    const int distinct_runs = cfg.method == Method::TEST ? 1 : runs;

    for (int r = 0; r < distinct_runs; ++r) {
        const std::uint64_t run_seed = hash_combine(cfg.seed, static_cast<std::uint64_t>(r));

        if (cfg.mode == Mode::Sequential) {
            std::vector<Instance> stream;
            stream.reserve(grouped.total);
            for (const auto& g : grouped.groups)
                stream.insert(stream.end(), g.begin(), g.end());
            model::ModelState local = m;
            EngineConfig run_cfg = cfg;
            run_cfg.seed = run_seed;
            StreamResult sr = adapt_stream(local, stream, run_cfg);
            if (r == 0) report.trajectory = sr.trajectory;
            report.per_run.push_back(run_metrics(sr.scored, m.threshold));
            continue;
        }

        std::vector<metrics::ScoredTimestamp> scored(grouped.total);
        auto worker = [&](std::size_t begin, std::size_t end) {
            model::ModelState local = m;
            for (std::size_t gi = begin; gi < end; ++gi) {
                std::size_t slot = grouped.offsets[gi];
                for (const Instance& inst : grouped.groups[gi]) {
                    Rng rng(instance_seed(run_seed, inst.encounter_id, inst.t));
                    const AdaptResult ar = adapt_instance(local, inst, cfg, rng);
                    scored[slot++] = {inst.encounter_id, inst.t, ar.probability,
                                      inst.label, inst.t0};
                }
            }
        };

        const std::size_t n_groups = grouped.groups.size();
        const int threads = std::min<int>(cfg.threads, static_cast<int>(n_groups));
        if (threads <= 1) {
            worker(0, n_groups);
        } else {
            std::vector<std::thread> pool;
            const std::size_t chunk = (n_groups + threads - 1) / threads;
            for (int t = 0; t < threads; ++t) {
                const std::size_t b = t * chunk;
                const std::size_t e = std::min(n_groups, b + chunk);
                if (b < e) pool.emplace_back(worker, b, e);
            }
            for (auto& th : pool) th.join();
        }
        report.per_run.push_back(run_metrics(scored, m.threshold));
    }

    while (static_cast<int>(report.per_run.size()) < runs)
        report.per_run.push_back(report.per_run.front());

    std::vector<double> aucs, briers;
    for (const auto& rm : report.per_run) {
        aucs.push_back(rm.auc);
        briers.push_back(rm.brier);
        report.tp += rm.confusion.tp;
        report.fp += rm.confusion.fp;
        report.fn += rm.confusion.fn;
        report.tn += rm.confusion.tn;
    }
    const double inv = 1.0 / static_cast<double>(runs);
    report.tp *= inv;
    report.fp *= inv;
    report.fn *= inv;
    report.tn *= inv;
    report.auc = metrics::aggregate(aucs);
    report.brier = metrics::aggregate(briers);
    return report;
}

}  // namespace adattt::engine
