#include "adattt/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adattt::model {

namespace {

Eigen::MatrixXd glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    return w;
}

}  // namespace

FeatureStats fit_stats(const std::vector<Eigen::VectorXd>& raw_rows, Rng& rng) {
    if (raw_rows.empty()) throw std::invalid_argument("fit_stats: no rows");
    const Eigen::Index d = raw_rows.front().rows();
    FeatureStats st;
    st.mean = Eigen::VectorXd::Zero(d);
    for (const auto& r : raw_rows) {
        if (r.rows() != d) throw std::invalid_argument("fit_stats: ragged rows");
        st.mean += r;
    }
    st.mean /= static_cast<double>(raw_rows.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    for (const auto& r : raw_rows) var += (r - st.mean).array().square().matrix();
    var /= static_cast<double>(raw_rows.size());
    st.stdev = var.cwiseSqrt();
    for (Eigen::Index j = 0; j < d; ++j)
        if (st.stdev(j) < 1e-9) st.stdev(j) = 1.0;  // constant feature

    // reservoir sampling per feature over standardized values
    st.reservoirs.assign(d, {});
    for (auto& r : st.reservoirs) r.reserve(std::min<std::size_t>(raw_rows.size(), kReservoirCap));
    std::size_t seen = 0;
    for (const auto& row : raw_rows) {
        ++seen;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double v = (row(j) - st.mean(j)) / st.stdev(j);
            auto& res = st.reservoirs[j];
            if (res.size() < kReservoirCap) {
                res.push_back(v);
            } else {
                const int slot = rng.uniform_int(static_cast<int>(seen));
                if (slot < kReservoirCap) res[slot] = v;
            }
        }
    }
    return st;
}

Eigen::VectorXd ModelState::tslm_rates() const {
    return ad::kernels::softplus(tslm_raw);
}

ModelState init_model(int input_dim, const std::vector<int>& hidden, int latent_dim,
                      int prototype_count, Rng& rng) {
    if (input_dim < 1 || latent_dim < 1 || prototype_count < 2)
        throw std::invalid_argument("init_model: need input_dim, d_z >= 1 and k >= 2");
    ModelState s;
    // softplus(−3.9) ≈ 0.02/h: mild decay, roughly 0.6 gate at 24h staleness
    s.tslm_raw = Eigen::VectorXd::Constant(input_dim, -3.9);
    int in = input_dim;
    for (int h : hidden) {
        s.enc_w.push_back(glorot(h, in, rng));
        s.enc_b.push_back(Eigen::VectorXd::Zero(h));
        in = h;
    }
    s.enc_w.push_back(glorot(latent_dim, in, rng));
    s.enc_b.push_back(Eigen::VectorXd::Zero(latent_dim));
    s.main_w = glorot(1, latent_dim, rng);
    s.main_b = 0.0;
    s.ssl_w = glorot(input_dim, latent_dim, rng);
    s.ssl_b = Eigen::VectorXd::Zero(input_dim);
    s.prototypes = Eigen::MatrixXd::Zero(prototype_count, latent_dim);
    return s;
}

Snapshot snapshot(const ModelState& s) { return Snapshot{s}; }

namespace {

void require_same_shape(const ModelState& a, const ModelState& b) {
    bool ok = a.tslm_raw.rows() == b.tslm_raw.rows() &&
              a.enc_w.size() == b.enc_w.size() &&
              a.main_w.cols() == b.main_w.cols() &&
              a.ssl_w.rows() == b.ssl_w.rows() && a.ssl_w.cols() == b.ssl_w.cols() &&
              a.prototypes.rows() == b.prototypes.rows() &&
              a.prototypes.cols() == b.prototypes.cols();
    for (std::size_t i = 0; ok && i < a.enc_w.size(); ++i)
        ok = a.enc_w[i].rows() == b.enc_w[i].rows() &&
             a.enc_w[i].cols() == b.enc_w[i].cols();
    if (!ok) throw std::invalid_argument("restore: snapshot/state shape mismatch");
}

}  // namespace

void restore(ModelState& s, const Snapshot& snap) {
    require_same_shape(s, snap.state);
    s = snap.state;
}

bool bitwise_equal(const ModelState& a, const ModelState& b) {
    auto eq = [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
        return x.rows() == y.rows() && x.cols() == y.cols() &&
               std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0;
    };
    if (!eq(a.tslm_raw, b.tslm_raw)) return false;
    if (a.enc_w.size() != b.enc_w.size()) return false;
    for (std::size_t i = 0; i < a.enc_w.size(); ++i)
        if (!eq(a.enc_w[i], b.enc_w[i]) || !eq(a.enc_b[i], b.enc_b[i])) return false;
    if (!eq(a.main_w, b.main_w) || a.main_b != b.main_b) return false;
    if (!eq(a.ssl_w, b.ssl_w) || !eq(a.ssl_b, b.ssl_b)) return false;
    if (!eq(a.prototypes, b.prototypes)) return false;
    if (!eq(a.stats.mean, b.stats.mean) || !eq(a.stats.stdev, b.stats.stdev)) return false;
    if (a.stats.reservoirs != b.stats.reservoirs) return false;
    if (!eq(a.impute_means, b.impute_means) || a.n_static != b.n_static) return false;
    return a.threshold == b.threshold && a.mask_prior == b.mask_prior;
}

ParamNodes stage_params(ad::Tape& tape, const ModelState& s, Trainable trainable) {
    const bool enc_grad = trainable != Trainable::None;
    const bool head_grad = trainable == Trainable::All;
    auto stage = [&](const Eigen::MatrixXd& v, bool grad) {
        return grad ? tape.input(v) : tape.constant(v);
    };
    ParamNodes p;
    p.tslm_raw = stage(s.tslm_raw, enc_grad);
    for (std::size_t i = 0; i < s.enc_w.size(); ++i)
        p.enc.emplace_back(stage(s.enc_w[i], enc_grad), stage(s.enc_b[i], enc_grad));
    p.main_w = stage(s.main_w, head_grad);
    p.main_b = stage(Eigen::MatrixXd::Constant(1, 1, s.main_b), head_grad);
    p.ssl_w = stage(s.ssl_w, head_grad);
    p.ssl_b = stage(s.ssl_b, head_grad);
    p.prototypes = stage(s.prototypes, head_grad);
    return p;
}

ad::NodeId encode_node(ad::Tape& tape, const ParamNodes& p, ad::NodeId x,
                       const Eigen::VectorXd& dt) {
    const ad::NodeId rates = tape.softplus(p.tslm_raw);
    const ad::NodeId gate = tape.decay(rates, dt);
    ad::NodeId h = tape.mul(x, gate);
    for (std::size_t i = 0; i < p.enc.size(); ++i) {
        h = tape.add(tape.matvec(p.enc[i].first, h), p.enc[i].second);
        if (i + 1 < p.enc.size()) h = tape.relu(h);
    }
    return h;
}

ad::NodeId main_logit_node(ad::Tape& tape, const ParamNodes& p, ad::NodeId z) {
    return tape.add(tape.matvec(p.main_w, z), p.main_b);
}

ad::NodeId ssl_recon_node(ad::Tape& tape, const ParamNodes& p, ad::NodeId z) {
    return tape.add(tape.matvec(p.ssl_w, z), p.ssl_b);
}

Eigen::VectorXd standardize(const ModelState& s, const Eigen::VectorXd& raw) {
    if (raw.rows() != s.stats.mean.rows())
        throw std::invalid_argument("standardize: dimension mismatch");
    return (raw - s.stats.mean).cwiseQuotient(s.stats.stdev);
}

Eigen::VectorXd encode(const ModelState& s, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& dt) {
    if (x.rows() != s.input_dim() || dt.rows() != s.input_dim())
        throw std::invalid_argument("encode: dimension mismatch");
    const Eigen::MatrixXd gate = ad::kernels::decay_gate(s.tslm_rates(), dt);
    Eigen::MatrixXd h = x.cwiseProduct(gate);
    for (std::size_t i = 0; i < s.enc_w.size(); ++i) {
        h = s.enc_w[i] * h + s.enc_b[i];
        if (i + 1 < s.enc_w.size()) h = ad::kernels::relu(h);
    }
    if (!h.allFinite()) throw std::runtime_error("encode: non-finite embedding");
    return h;
}

std::pair<double, double> predict_main(const ModelState& s, const Eigen::VectorXd& z) {
    const double logit = (s.main_w * z)(0, 0) + s.main_b;
    const double clamped = std::clamp(logit, -kLogitClamp, kLogitClamp);
    return {1.0 / (1.0 + std::exp(-clamped)), logit};
}

Eigen::VectorXd predict_ssl(const ModelState& s, const Eigen::VectorXd& z) {
    return s.ssl_w * z + s.ssl_b;
}

int assign_prototype(const ModelState& s, const Eigen::VectorXd& z) {
    if (s.prototypes.rows() == 0)
        throw std::invalid_argument("assign_prototype: empty prototype set");
    if (s.prototypes.cols() != z.rows())
        throw std::invalid_argument("assign_prototype: dimension mismatch");
    int best = 0;
    double best_d = (z.transpose() - s.prototypes.row(0)).squaredNorm();
    for (int j = 1; j < s.prototypes.rows(); ++j) {
        const double d = (z.transpose() - s.prototypes.row(j)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

// --- persistence -----------------------------------------------------------

namespace {

constexpr std::uint32_t kMagic = 0x41445454;  // "ADTT"
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
}

void write_mat(std::ostream& os, const Eigen::MatrixXd& m) {
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) write_f64(os, m(i, j));
}

Eigen::MatrixXd read_mat(std::istream& is) {
    const auto rows = read_u32(is), cols = read_u32(is);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = read_f64(is);
    return m;
}

}  // namespace

void save_model(const ModelState& s, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_model: cannot open " + path);
    write_u32(os, kMagic);
    write_u32(os, kVersion);
    write_mat(os, s.tslm_raw);
    write_u32(os, static_cast<std::uint32_t>(s.enc_w.size()));
    for (std::size_t i = 0; i < s.enc_w.size(); ++i) {
        write_mat(os, s.enc_w[i]);
        write_mat(os, s.enc_b[i]);
    }
    write_mat(os, s.main_w);
    write_f64(os, s.main_b);
    write_mat(os, s.ssl_w);
    write_mat(os, s.ssl_b);
    write_mat(os, s.prototypes);
    write_mat(os, s.stats.mean);
    write_mat(os, s.stats.stdev);
    write_u32(os, static_cast<std::uint32_t>(s.stats.reservoirs.size()));
    for (const auto& res : s.stats.reservoirs) {
        write_u32(os, static_cast<std::uint32_t>(res.size()));
        for (double v : res) write_f64(os, v);
    }
    write_f64(os, s.threshold);
    write_f64(os, s.mask_prior);
    write_mat(os, s.impute_means);
    write_u32(os, static_cast<std::uint32_t>(s.n_static));
    if (!os) throw std::runtime_error("save_model: write failed for " + path);
}

ModelState load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_model: cannot open " + path);
    if (read_u32(is) != kMagic) throw std::runtime_error("load_model: bad magic");
    if (read_u32(is) != kVersion) throw std::runtime_error("load_model: unknown version");
    ModelState s;
    s.tslm_raw = read_mat(is);
    const auto layers = read_u32(is);
    for (std::uint32_t i = 0; i < layers; ++i) {
        s.enc_w.push_back(read_mat(is));
        s.enc_b.push_back(read_mat(is));
    }
    s.main_w = read_mat(is);
    s.main_b = read_f64(is);
    s.ssl_w = read_mat(is);
    s.ssl_b = read_mat(is);
    s.prototypes = read_mat(is);
    s.stats.mean = read_mat(is);
    s.stats.stdev = read_mat(is);
    const auto d = read_u32(is);
    s.stats.reservoirs.resize(d);
    for (std::uint32_t j = 0; j < d; ++j) {
        const auto n = read_u32(is);
        s.stats.reservoirs[j].resize(n);
        for (std::uint32_t i = 0; i < n; ++i) s.stats.reservoirs[j][i] = read_f64(is);
    }
    s.threshold = read_f64(is);
    s.mask_prior = read_f64(is);
    s.impute_means = read_mat(is);
    s.n_static = static_cast<int>(read_u32(is));
    if (!is) throw std::runtime_error("load_model: truncated file " + path);
    return s;
}

}  // namespace adattt::model
