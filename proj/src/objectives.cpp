#include "adattt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adattt::objectives {

double loss_recon(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat) {
    if (x.rows() != xhat.rows())
        throw std::invalid_argument("loss_recon: dimension mismatch");
    return (x - xhat).squaredNorm() / static_cast<double>(x.rows());
}

double loss_mfm(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat,
                std::span<const int> masked) {
    if (x.rows() != xhat.rows())
        throw std::invalid_argument("loss_mfm: dimension mismatch");
    if (masked.empty()) throw std::invalid_argument("loss_mfm: empty mask set");
    double s = 0.0;
    for (int j : masked) {
        if (j < 0 || j >= x.rows())
            throw std::invalid_argument("loss_mfm: mask index out of range");
        const double d = x(j) - xhat(j);
        s += d * d;
    }
    return s / static_cast<double>(masked.size());
}

double loss_ssl(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat,
                std::span<const int> masked, double lambda_recon) {
    return lambda_recon * loss_recon(x, xhat) + loss_mfm(x, xhat, masked);
}

double loss_main(double probability, int label) {
    const double p = std::clamp(probability, 1e-7, 1.0 - 1e-7);
    return label != 0 ? -std::log(p) : -std::log(1.0 - p);
}

double loss_proto(const Eigen::VectorXd& z, const Eigen::MatrixXd& prototypes) {
    if (prototypes.rows() == 0)
        throw std::invalid_argument("loss_proto: empty prototype set");
    double best = (z.transpose() - prototypes.row(0)).squaredNorm();
    for (Eigen::Index j = 1; j < prototypes.rows(); ++j)
        best = std::min(best, (z.transpose() - prototypes.row(j)).squaredNorm());
    return best;
}

double loss_balance(std::span<const int> assignments, int k) {
    if (k < 2) throw std::invalid_argument("loss_balance: k < 2");
    if (assignments.empty()) throw std::invalid_argument("loss_balance: empty batch");
    std::vector<double> frac(static_cast<std::size_t>(k), 0.0);
    for (int a : assignments) {
        if (a < 0 || a >= k)
            throw std::invalid_argument("loss_balance: assignment out of range");
        frac[static_cast<std::size_t>(a)] += 1.0;
    }
    const double n = static_cast<double>(assignments.size());
    double s = 0.0;
    for (double f : frac) {
        const double d = f / n - 1.0 / static_cast<double>(k);
        s += d * d;
    }
    return s;
}

ParamGrads zero_grads(const model::ModelState& m) {
    ParamGrads g;
    g.tslm_raw = Eigen::VectorXd::Zero(m.tslm_raw.rows());
    for (std::size_t i = 0; i < m.enc_w.size(); ++i) {
        g.enc_w.push_back(Eigen::MatrixXd::Zero(m.enc_w[i].rows(), m.enc_w[i].cols()));
        g.enc_b.push_back(Eigen::VectorXd::Zero(m.enc_b[i].rows()));
    }
    g.main_w = Eigen::MatrixXd::Zero(1, m.latent_dim());
    g.main_b = 0.0;
    g.ssl_w = Eigen::MatrixXd::Zero(m.input_dim(), m.latent_dim());
    g.ssl_b = Eigen::VectorXd::Zero(m.input_dim());
    g.prototypes = Eigen::MatrixXd::Zero(m.prototypes.rows(), m.prototypes.cols());
    return g;
}

namespace {

ParamGrads collect_grads(const ad::Tape& tape, const model::ParamNodes& p,
                         const model::ModelState& m) {
    ParamGrads g = zero_grads(m);
    if (tape.requires_grad(p.tslm_raw)) g.tslm_raw = tape.adjoint(p.tslm_raw);
    for (std::size_t i = 0; i < p.enc.size(); ++i) {
        if (tape.requires_grad(p.enc[i].first)) {
            g.enc_w[i] = tape.adjoint(p.enc[i].first);
            g.enc_b[i] = tape.adjoint(p.enc[i].second);
        }
    }
    if (tape.requires_grad(p.main_w)) {
        g.main_w = tape.adjoint(p.main_w);
        g.main_b = tape.adjoint(p.main_b)(0, 0);
    }
    if (tape.requires_grad(p.ssl_w)) {
        g.ssl_w = tape.adjoint(p.ssl_w);
        g.ssl_b = tape.adjoint(p.ssl_b);
    }
    if (tape.requires_grad(p.prototypes)) g.prototypes = tape.adjoint(p.prototypes);
    return g;
}

// λ_recon·mean((x̂−x)²) + (1/|M|)·Σ_M (x̂−x)² against the clean input
ad::NodeId ssl_loss_node(ad::Tape& tape, ad::NodeId xhat, ad::NodeId x_clean,
                         const masking::MaskDraw& draw, double lambda_recon) {
    const ad::NodeId sq = tape.sqdiff(xhat, x_clean);
    const ad::NodeId recon = tape.mean(sq);
    const ad::NodeId mfm = tape.scale(
        tape.dot_const(sq, draw.m), 1.0 / static_cast<double>(draw.indices.size()));
    return tape.add(tape.scale(recon, lambda_recon), mfm);
}

}  // namespace

TrainEval objective_train(std::span<const Instance> batch, const model::ModelState& m,
                          const masking::MaskState& mask, const LossWeights& w,
                          Rng& rng, bool prototypes_active) {
    if (batch.empty()) throw std::invalid_argument("objective_train: empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const int k = m.prototype_count();

    ad::Tape tape;
    tape.reserve(static_cast<int>(batch.size()) * 24 + 16);
    const auto params = model::stage_params(tape, m, model::Trainable::All);

    TrainEval ev;
    ad::NodeId total = tape.constant(ad::Tensor::Zero(1, 1));
    ad::NodeId soft_sum = -1;
    std::vector<int> hard_assign;

    for (const Instance& inst : batch) {
        const ad::NodeId x = tape.constant(inst.x);
        const ad::NodeId z = model::encode_node(tape, params, x, inst.dt);
        const ad::NodeId logit = model::main_logit_node(tape, params, z);
        const ad::NodeId main = tape.bce_with_logit(logit, inst.label != 0 ? 1.0 : 0.0);

        const auto draw = masking::sample_mask(mask.probs, rng);
        const Eigen::VectorXd corrupted = masking::corrupt(inst.x, draw, m.stats, rng);
        const ad::NodeId zt = model::encode_node(tape, params, tape.constant(corrupted),
                                                 inst.dt);
        const ad::NodeId xhat = model::ssl_recon_node(tape, params, zt);
        const ad::NodeId ssl = ssl_loss_node(tape, xhat, x, draw, w.recon);

        ad::NodeId inst_loss = tape.add(main, ssl);
        if (prototypes_active) {
            const ad::NodeId dists = tape.sqdist_rows(z, params.prototypes);
            Eigen::Index nearest = 0;
            tape.value(dists).col(0).minCoeff(&nearest);
            hard_assign.push_back(static_cast<int>(nearest));
            const ad::NodeId proto = tape.select(dists, static_cast<int>(nearest));
            inst_loss = tape.add(inst_loss, tape.scale(proto, w.proto));
            const ad::NodeId soft =
                tape.softmax(tape.scale(dists, -1.0 / kBalanceTemperature));
            soft_sum = soft_sum < 0 ? soft : tape.add(soft_sum, soft);
            ev.proto += tape.value_scalar(proto);
        }
        total = tape.add(total, inst_loss);
        ev.main += tape.value_scalar(main);
        ev.ssl += tape.value_scalar(ssl);
    }

    total = tape.scale(total, inv_b);
    if (prototypes_active) {
        const ad::NodeId mean_soft = tape.scale(soft_sum, inv_b);
        const ad::NodeId target =
            tape.constant(ad::Tensor::Constant(k, 1, 1.0 / static_cast<double>(k)));
        const ad::NodeId balance = tape.sum(tape.sqdiff(mean_soft, target));
        total = tape.add(total, tape.scale(balance, w.reg));
        ev.balance_hard = loss_balance(hard_assign, k);
    }

    ev.total = tape.value_scalar(total);
    if (!std::isfinite(ev.total))
        throw std::runtime_error("objective_train: non-finite loss");
    tape.backward(total);
    ev.grads = collect_grads(tape, params, m);
    ev.main *= inv_b;
    ev.ssl *= inv_b;
    ev.proto *= inv_b;
    return ev;
}

TestEval objective_test(const Instance& inst, const model::ModelState& m,
                        const Eigen::VectorXd& mask_probs,
                        const transport::AugmentedSet* aug,
                        const transport::TransportPlan* plan, const LossWeights& w,
                        Rng& rng) {
    ad::Tape tape;
    tape.reserve(96);
    const auto params = model::stage_params(tape, m, model::Trainable::EncoderOnly);

    const ad::NodeId x = tape.constant(inst.x);
    const auto draw = masking::sample_mask(mask_probs, rng);
    const Eigen::VectorXd corrupted = masking::corrupt(inst.x, draw, m.stats, rng);
    const ad::NodeId zt =
        model::encode_node(tape, params, tape.constant(corrupted), inst.dt);
    const ad::NodeId xhat = model::ssl_recon_node(tape, params, zt);
    const ad::NodeId ssl = ssl_loss_node(tape, xhat, x, draw, w.recon);

    TestEval ev;
    ad::NodeId total = ssl;
    if (aug != nullptr && plan != nullptr) {
        const Eigen::Index k = plan->gamma.rows();
        if (plan->gamma.cols() != m.prototypes.rows() || aug->rows.rows() != k)
            throw std::invalid_argument("objective_test: plan/augmentation shape mismatch");
        const Eigen::VectorXd uniform =
            Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
        const double row_res = (plan->gamma.rowwise().sum() - uniform).cwiseAbs().sum();
        const double col_res =
            (plan->gamma.colwise().sum().transpose() - uniform).cwiseAbs().sum();
        if (row_res > 1e-2 || col_res > 1e-2)
            throw std::invalid_argument("objective_test: transport plan marginals infeasible");

        const ad::NodeId z = model::encode_node(tape, params, x, inst.dt);
        ad::NodeId ot = -1;
        for (Eigen::Index i = 0; i < k; ++i) {
            // duplicates differ from z' by the frozen noise offsets
            const Eigen::VectorXd noise =
                (aug->rows.row(i) - aug->rows.row(0)).transpose();
            const ad::NodeId zi = i == 0 ? z : tape.add_const(z, noise);
            const ad::NodeId dists = tape.sqdist_rows(zi, params.prototypes);
            const ad::NodeId term =
                tape.dot_const(dists, plan->gamma.row(i).transpose());
            ot = ot < 0 ? term : tape.add(ot, term);
        }
        ev.ot = tape.value_scalar(ot);
        total = tape.add(total, tape.scale(ot, w.ot));
    }

    ev.ssl = tape.value_scalar(ssl);
    ev.total = tape.value_scalar(total);
    tape.backward(total);
    ev.grads = collect_grads(tape, params, m);
    return ev;
}

}  // namespace adattt::objectives
