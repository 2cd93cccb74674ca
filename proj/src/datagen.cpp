#include "adattt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace adattt::datagen {

ShiftSpec ShiftSpec::identity(int d_raw) {
    ShiftSpec s;
    s.scale = Eigen::VectorXd::Ones(d_raw);
    s.offset = Eigen::VectorXd::Zero(d_raw);
    return s;
}

void ShiftSpec::validate(int d_raw) const {
    if (scale.rows() != d_raw || offset.rows() != d_raw)
        throw std::invalid_argument("ShiftSpec: scale/offset must have one entry per raw feature");
    if ((scale.array() <= 0.0).any())
        throw std::invalid_argument("ShiftSpec: scale must be positive");
    if (missing_rate < 0.0 || missing_rate > 1.0)
        throw std::invalid_argument("ShiftSpec: missing_rate outside [0,1]");
    if (label_ratio <= 0.0) throw std::invalid_argument("ShiftSpec: label_ratio must be positive");
    if (noise_scale < 0.0) throw std::invalid_argument("ShiftSpec: negative noise_scale");
}

namespace {

constexpr double kAr1Phi = 0.8;
constexpr int kDriftWindowHours = 12;
constexpr int kStaticLevels = 3;

// deterioration direction: magnitude decays across features, alternating
// sign, so relevance has structure for the masking module to pick up
double drift_coeff(int j, int d_raw) {
    const double mag = 2.0 * static_cast<double>(d_raw - j) / static_cast<double>(d_raw);
    return (j % 2 == 0) ? mag : -mag;
}

// static category priors, mildly label-dependent
const double kStaticPrior[2][kStaticLevels] = {{0.5, 0.3, 0.2}, {0.3, 0.4, 0.3}};

Encounter generate_encounter(const SynthConfig& cfg, const ShiftSpec* shift,
                             const std::string& id, const std::string& site,
                             double prevalence, Rng& rng) {
    Encounter enc;
    enc.id = id;
    enc.site = site;
    enc.label = rng.bernoulli(prevalence) ? 1 : 0;

    const int len = cfg.len_min + rng.uniform_int(cfg.len_max - cfg.len_min + 1);
    if (enc.label) enc.t0 = static_cast<double>(len);

    int category = 0;
    {
        const double u = rng.uniform();
        double acc = 0.0;
        for (int c = 0; c < kStaticLevels; ++c) {
            acc += kStaticPrior[enc.label][c];
            if (u < acc) {
                category = c;
                break;
            }
        }
    }

    Eigen::VectorXd patient_offset(cfg.d_raw);
    Eigen::VectorXd ar(cfg.d_raw);
    const double ar_noise = std::sqrt(1.0 - kAr1Phi * kAr1Phi);
    for (int j = 0; j < cfg.d_raw; ++j) {
        patient_offset(j) = 0.5 * rng.normal();
        ar(j) = rng.normal();
    }

    for (int t = 1; t <= len; ++t) {
        RawRow row;
        row.t = static_cast<double>(t);
        row.values.assign(static_cast<std::size_t>(cfg.columns()), std::nullopt);
        const double ramp =
            enc.label ? std::max(0.0, 1.0 - static_cast<double>(len - t) /
                                                static_cast<double>(kDriftWindowHours))
                      : 0.0;
        for (int j = 0; j < cfg.d_raw; ++j) {
            if (t > 1) ar(j) = kAr1Phi * ar(j) + ar_noise * rng.normal();
            double v = patient_offset(j) + ar(j) + ramp * drift_coeff(j, cfg.d_raw);
            bool missing = rng.bernoulli(cfg.base_missing);
            if (shift != nullptr) {
                v = shift->scale(j) * v + shift->offset(j);
                if (shift->noise_scale > 0.0) v += shift->noise_scale * rng.normal();
                if (!missing && shift->missing_rate > 0.0)
                    missing = rng.bernoulli(shift->missing_rate);
            }
            if (!missing) row.values[static_cast<std::size_t>(j)] = v;
        }
        for (int c = 0; c < kStaticLevels; ++c)
            row.values[static_cast<std::size_t>(cfg.d_raw + c)] = c == category ? 1.0 : 0.0;
        enc.rows.push_back(std::move(row));
    }
    return enc;
}

}  // namespace

std::pair<std::vector<Encounter>, std::vector<Encounter>> synth_generate(
    const SynthConfig& cfg, const ShiftSpec& shift, std::uint64_t seed) {
    if (cfg.d_raw < 1 || cfg.n_static < 0 || cfg.len_min < 1 || cfg.len_max < cfg.len_min)
        throw std::invalid_argument("synth_generate: bad SynthConfig");
    if (cfg.n_static != kStaticLevels && cfg.n_static != 0)
        throw std::invalid_argument("synth_generate: n_static must be 0 or 3");
    if (cfg.prevalence <= 0.0 || cfg.prevalence >= 1.0)
        throw std::invalid_argument("synth_generate: prevalence outside (0,1)");
    shift.validate(cfg.d_raw);

    const double target_prev = std::min(0.5, cfg.prevalence * shift.label_ratio);

    // at least two encounters per class, in expectation and by construction
    auto generate_split = [&](int n, const std::string& site, const ShiftSpec* sh,
                              double prev, Rng& rng) {
        if (n < 4) throw std::invalid_argument("synth_generate: need at least 4 encounters");
        std::vector<Encounter> out;
        out.reserve(static_cast<std::size_t>(n));
        int n_pos = 0;
        for (int i = 0; i < n; ++i) {
            Encounter e = generate_encounter(cfg, sh, site + "-" + std::to_string(i),
                                             site, prev, rng);
            n_pos += e.label;
            out.push_back(std::move(e));
        }
        if (n_pos < 2 || n - n_pos < 2)
            throw std::invalid_argument("synth_generate: fewer than 2 encounters in a class; "
                                        "increase n or prevalence");
        return out;
    };

    Rng src_rng(hash_combine(seed, 0x5343u));  // source stream
    Rng tgt_rng(hash_combine(hash_combine(seed, shift.seed), 0x5447u));
    auto source = generate_split(cfg.n_source, "source", nullptr, cfg.prevalence, src_rng);
    auto target = generate_split(cfg.n_target, "target", &shift, target_prev, tgt_rng);
    return {std::move(source), std::move(target)};
}

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_csv(const std::string& path, std::span<const Encounter> encounters,
               int columns) {
    std::ofstream os(path, std::ios::binary);  // LF newlines on every platform
    if (!os) throw std::runtime_error("write_csv: cannot open " + path);
    os << "encounter_id,timestamp_h,label,t0_h";
    for (int j = 0; j < columns; ++j) os << ",f_" << j;
    os << "\n";
    for (const Encounter& enc : encounters) {
        for (const RawRow& row : enc.rows) {
            os << enc.id << "," << format_double(row.t) << "," << enc.label << ",";
            if (enc.t0) os << format_double(*enc.t0);
            for (int j = 0; j < columns; ++j) {
                os << ",";
                const auto& v = row.values[static_cast<std::size_t>(j)];
                if (v) os << format_double(*v);
            }
            os << "\n";
        }
    }
    if (!os) throw std::runtime_error("write_csv: write failed for " + path);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, int line_no, const char* what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("ingest_csv: line " + std::to_string(line_no) +
                                 ": bad " + what + " '" + s + "'");
    }
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

IngestResult ingest_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("ingest_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("ingest_csv: empty file");
    const auto header = split_line(line);
    if (header.size() < 5 || header[0] != "encounter_id" || header[1] != "timestamp_h" ||
        header[2] != "label" || header[3] != "t0_h")
        throw std::runtime_error("ingest_csv: unexpected header");
    const int columns = static_cast<int>(header.size()) - 4;
    for (int j = 0; j < columns; ++j)
        if (header[static_cast<std::size_t>(4 + j)] != "f_" + std::to_string(j))
            throw std::runtime_error("ingest_csv: unexpected feature header at column " +
                                     std::to_string(4 + j));

    struct Pending {
        Encounter enc;
        // per hour-bin accumulator
        std::vector<std::pair<double, std::vector<std::vector<double>>>> bins;
        double last_raw_t = -1.0;
        bool bad = false;
        std::string diag;
    };
    std::deque<Pending> order;
    std::unordered_map<std::string, Pending*> by_id;
    auto find_pending = [&](const std::string& id) -> Pending& {
        auto it = by_id.find(id);
        if (it != by_id.end()) return *it->second;
        order.emplace_back();
        order.back().enc.id = id;
        by_id.emplace(id, &order.back());
        return order.back();
    };

    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (static_cast<int>(cells.size()) != 4 + columns)
            throw std::runtime_error("ingest_csv: line " + std::to_string(line_no) +
                                     ": expected " + std::to_string(4 + columns) +
                                     " cells, got " + std::to_string(cells.size()));
        const std::string& id = cells[0];
        if (id.empty())
            throw std::runtime_error("ingest_csv: line " + std::to_string(line_no) +
                                     ": empty encounter_id");
        const double t = parse_double(cells[1], line_no, "timestamp_h");
        const double label = parse_double(cells[2], line_no, "label");
        if (label != 0.0 && label != 1.0)
            throw std::runtime_error("ingest_csv: line " + std::to_string(line_no) +
                                     ": label must be 0 or 1");

        Pending& p = find_pending(id);
        if (p.bad) continue;
        if (p.bins.empty()) {
            p.enc.label = static_cast<int>(label);
            if (!cells[3].empty()) p.enc.t0 = parse_double(cells[3], line_no, "t0_h");
        } else {
            const bool t0_matches =
                cells[3].empty() ? !p.enc.t0.has_value()
                                 : (p.enc.t0.has_value() &&
                                    *p.enc.t0 == parse_double(cells[3], line_no, "t0_h"));
            if (static_cast<int>(label) != p.enc.label || !t0_matches) {
                p.bad = true;
                p.diag = "encounter " + id + ": inconsistent label/t0 at line " +
                         std::to_string(line_no);
                continue;
            }
        }
        if (t < p.last_raw_t) {
            p.bad = true;
            p.diag = "encounter " + id + ": out-of-order timestamp at line " +
                     std::to_string(line_no);
            continue;
        }
        p.last_raw_t = t;

        const double hour = std::floor(t);
        if (p.bins.empty() || p.bins.back().first != hour)
            p.bins.emplace_back(hour, std::vector<std::vector<double>>(
                                          static_cast<std::size_t>(columns)));
        auto& bin = p.bins.back().second;
        for (int j = 0; j < columns; ++j) {
            const std::string& cell = cells[static_cast<std::size_t>(4 + j)];
            if (!cell.empty())
                bin[static_cast<std::size_t>(j)].push_back(
                    parse_double(cell, line_no, "feature"));
        }
    }

    IngestResult res;
    res.columns = columns;
    for (auto& p : order) {
        if (p.bad) {
            res.rejected.push_back(p.diag);
            continue;
        }
        if (p.enc.label == 1 && !p.enc.t0) {
            res.rejected.push_back("encounter " + p.enc.id + ": positive without t0");
            continue;
        }
        for (auto& [hour, cells] : p.bins) {
            RawRow row;
            row.t = hour;
            row.values.assign(static_cast<std::size_t>(columns), std::nullopt);
            for (int j = 0; j < columns; ++j)
                if (!cells[static_cast<std::size_t>(j)].empty())
                    row.values[static_cast<std::size_t>(j)] =
                        median(cells[static_cast<std::size_t>(j)]);
            p.enc.rows.push_back(std::move(row));
        }
        if (!p.enc.rows.empty()) res.encounters.push_back(std::move(p.enc));
    }
    return res;
}

Eigen::VectorXd observed_means(std::span<const Encounter> encounters, int columns) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(columns);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(columns);
    for (const auto& enc : encounters)
        for (const auto& row : enc.rows)
            for (int j = 0; j < columns; ++j)
                if (row.values[static_cast<std::size_t>(j)]) {
                    sum(j) += *row.values[static_cast<std::size_t>(j)];
                    count(j) += 1.0;
                }
    for (int j = 0; j < columns; ++j) sum(j) = count(j) > 0.0 ? sum(j) / count(j) : 0.0;
    return sum;
}

Grid impute(const Encounter& enc, const Eigen::VectorXd& train_means) {
    if (enc.rows.empty()) throw std::invalid_argument("impute: empty encounter");
    const int columns = static_cast<int>(enc.rows.front().values.size());
    if (train_means.rows() != columns)
        throw std::invalid_argument("impute: train_means dimension mismatch");

    const double first = enc.rows.front().t;
    const double last = enc.rows.back().t;
    const int horizon = static_cast<int>(std::llround(last - first)) + 1;

    Grid grid;
    grid.hours.reserve(static_cast<std::size_t>(horizon));
    grid.values.resize(horizon, columns);
    grid.dt.resize(horizon, columns);

    std::vector<double> last_value(static_cast<std::size_t>(columns), 0.0);
    std::vector<double> last_time(static_cast<std::size_t>(columns), -1.0);
    std::size_t row_idx = 0;
    for (int h = 0; h < horizon; ++h) {
        const double t = first + h;
        grid.hours.push_back(t);
        const RawRow* row = nullptr;
        if (row_idx < enc.rows.size() && enc.rows[row_idx].t == t)
            row = &enc.rows[row_idx++];
        for (int j = 0; j < columns; ++j) {
            const auto sj = static_cast<std::size_t>(j);
            if (row != nullptr && row->values[sj]) {
                last_value[sj] = *row->values[sj];
                last_time[sj] = t;
            }
            double staleness = last_time[sj] < 0.0 ? kStalenessCapHours : t - last_time[sj];
            staleness = std::min(staleness, kStalenessCapHours);
            grid.dt(h, j) = staleness;
            if (last_time[sj] < 0.0 || t - last_time[sj] > kCarryForwardHours)
                grid.values(h, j) = train_means(j);
            else
                grid.values(h, j) = last_value[sj];
        }
    }
    return grid;
}

DerivedFeatures derive_features(const Grid& grid, int n_static) {
    const int t_len = static_cast<int>(grid.values.rows());
    const int columns = static_cast<int>(grid.values.cols());
    if (n_static < 0 || n_static > columns)
        throw std::invalid_argument("derive_features: bad n_static");
    const int d_tv = columns - n_static;
    const int out_dim = 4 * d_tv + n_static;

    DerivedFeatures out;
    out.hours = grid.hours;
    out.x = Eigen::MatrixXd::Zero(t_len, out_dim);
    out.dt_gate = Eigen::MatrixXd::Zero(t_len, out_dim);

    const int window = static_cast<int>(kBaselineWindowHours);
    for (int j = 0; j < d_tv; ++j) {
        double prev_meas = 0.0, last_meas = 0.0;
        bool has_prev = false, has_last = false;
        for (int t = 0; t < t_len; ++t) {
            const double v = grid.values(t, j);
            const bool measured = grid.dt(t, j) == 0.0;
            if (measured) {
                if (has_last) {
                    prev_meas = last_meas;
                    has_prev = true;
                }
                last_meas = v;
                has_last = true;
            }
            const int lo = std::max(0, t - window + 1);
            const double baseline =
                grid.values.col(j).segment(lo, t - lo + 1).mean();
            double trend = 0.0;
            if (measured && has_prev)
                trend = v - prev_meas;
            else if (!measured && has_last)
                trend = v - last_meas;  // carried value minus source = 0; mean-filled differs
            out.x(t, 4 * j + 0) = v;
            out.x(t, 4 * j + 1) = baseline;
            out.x(t, 4 * j + 2) = trend;
            out.x(t, 4 * j + 3) = grid.dt(t, j);
            out.dt_gate(t, 4 * j + 0) = grid.dt(t, j);
        }
    }
    for (int c = 0; c < n_static; ++c)
        out.x.col(4 * d_tv + c) = grid.values.col(d_tv + c);
    return out;
}

std::vector<Instance> build_instances(const Encounter& enc,
                                      const Eigen::VectorXd& impute_means,
                                      int n_static, const Eigen::VectorXd* std_mean,
                                      const Eigen::VectorXd* std_stdev) {
    const Grid grid = impute(enc, impute_means);
    const DerivedFeatures der = derive_features(grid, n_static);
    std::vector<Instance> out;
    out.reserve(der.hours.size());
    for (std::size_t t = 0; t < der.hours.size(); ++t) {
        Instance inst;
        inst.encounter_id = enc.id;
        inst.t = der.hours[t];
        inst.t0 = enc.t0;
        inst.label = enc.label != 0 && enc.t0 &&
                             inst.t > *enc.t0 - 24.0 && inst.t <= *enc.t0
                         ? 1
                         : 0;
        inst.x = der.x.row(static_cast<Eigen::Index>(t)).transpose();
        inst.dt = der.dt_gate.row(static_cast<Eigen::Index>(t)).transpose();
        if (std_mean != nullptr && std_stdev != nullptr)
            inst.x = (inst.x - *std_mean).cwiseQuotient(*std_stdev);
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace adattt::datagen
