#include "adattt/masking.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace adattt::masking {

MaskState make_mask_state(int dim, double prior) {
    if (dim < 1) throw std::invalid_argument("make_mask_state: dim < 1");
    if (prior < 0.0 || prior > 1.0)
        throw std::invalid_argument("make_mask_state: prior outside [0,1]");
    MaskState st;
    st.relevance = Eigen::VectorXd::Zero(dim);
    st.probs = Eigen::VectorXd::Constant(dim, prior);
    st.phase = Phase::Warmup;
    st.prior = prior;
    return st;
}

Eigen::VectorXd compute_relevance(const model::ModelState& m,
                                  std::span<const Instance> batch) {
    if (batch.empty()) throw std::invalid_argument("compute_relevance: empty batch");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(m.input_dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ad::Tape tape;
        // only the input collects a gradient here
        const auto params = model::stage_params(tape, m, model::Trainable::None);
        const ad::NodeId x = tape.input(batch[i].x);
        const ad::NodeId z = model::encode_node(tape, params, x, batch[i].dt);
        const ad::NodeId logit = model::main_logit_node(tape, params, z);
        tape.backward(logit);
        const ad::Tensor& g = tape.adjoint(x);
        if (!g.allFinite())
            throw std::runtime_error("compute_relevance: non-finite gradient at instance " +
                                     std::to_string(i));
        acc += g.cwiseProduct(batch[i].x).cwiseAbs();
    }
    return acc / static_cast<double>(batch.size());
}

Eigen::VectorXd relevance_to_probs(const Eigen::VectorXd& relevance) {
    if (relevance.rows() < 1)
        throw std::invalid_argument("relevance_to_probs: empty relevance");
    if (!relevance.allFinite())
        throw std::invalid_argument("relevance_to_probs: non-finite relevance");
    const double lo = relevance.minCoeff();
    const double hi = relevance.maxCoeff();
    if (hi - lo <= 0.0) return Eigen::VectorXd::Constant(relevance.rows(), 0.5);
    return ((relevance.array() - lo) / (hi - lo)).matrix();
}

MaskDraw sample_mask(const Eigen::VectorXd& probs, Rng& rng) {
    if ((probs.array() < 0.0).any() || (probs.array() > 1.0).any())
        throw std::invalid_argument("sample_mask: probabilities outside [0,1]");
    const Eigen::Index d = probs.rows();
    MaskDraw draw;
    for (int attempt = 0; attempt < 10; ++attempt) {
        draw.m = Eigen::VectorXd::Zero(d);
        draw.indices.clear();
        for (Eigen::Index j = 0; j < d; ++j) {
            if (rng.bernoulli(probs(j))) {
                draw.m(j) = 1.0;
                draw.indices.push_back(static_cast<int>(j));
            }
        }
        if (!draw.indices.empty()) return draw;
    }
    // the masked-feature loss divides by |M|, so an empty mask is not allowed
    Eigen::Index forced = 0;
    probs.maxCoeff(&forced);
    draw.m = Eigen::VectorXd::Zero(d);
    draw.m(forced) = 1.0;
    draw.indices = {static_cast<int>(forced)};
    return draw;
}

Eigen::VectorXd corrupt(const Eigen::VectorXd& x, const MaskDraw& draw,
                        const model::FeatureStats& stats, Rng& rng) {
    if (x.rows() != static_cast<Eigen::Index>(stats.reservoirs.size()) ||
        x.rows() != draw.m.rows())
        throw std::invalid_argument("corrupt: dimension mismatch");
    Eigen::VectorXd out = x;
    for (int j : draw.indices) {
        const auto& res = stats.reservoirs[static_cast<std::size_t>(j)];
        if (res.empty())
            throw std::invalid_argument("corrupt: empty reservoir for feature " +
                                        std::to_string(j));
        out(j) = res[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(res.size())))];
    }
    return out;
}

MaskState advance_schedule(MaskState state, int epoch, int warmup_epochs,
                           const Eigen::VectorXd& latest_relevance) {
    if (epoch < 1) throw std::invalid_argument("advance_schedule: epoch < 1");
    if (epoch <= warmup_epochs) {
        state.phase = Phase::Warmup;
        state.probs = Eigen::VectorXd::Constant(state.relevance.rows(), state.prior);
        return state;
    }
    state.phase = Phase::Adaptive;
    state.relevance = latest_relevance;
    state.probs = relevance_to_probs(latest_relevance);
    return state;
}

}  // namespace adattt::masking
