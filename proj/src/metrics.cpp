#include "adattt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace adattt::metrics {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("auc: scores/labels length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auc: need both classes, got " +
                                    std::to_string(n_pos) + " positives of " +
                                    std::to_string(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks over tie groups, then the Mann-Whitney U statistic
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k] != 0) rank_sum_pos += rank[k];
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                        static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double brier(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("brier: bad input sizes");
    double s = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        const double d = scores[k] - static_cast<double>(labels[k] != 0);
        s += d * d;
    }
    return s / static_cast<double>(scores.size());
}

ConfusionReport encounter_confusion(std::span<const ScoredTimestamp> scored,
                                    double threshold) {
    struct Enc {
        bool positive = false;
        std::optional<double> t0;
        bool alarm_in_window = false;
        bool alarm_outside = false;
        bool alarm_any = false;
        bool any_positive_label = false;
    };
    std::map<std::string, Enc> encs;
    for (const auto& st : scored) {
        Enc& e = encs[st.encounter_id];
        if (st.t0) {
            e.positive = true;
            e.t0 = st.t0;
        }
        if (st.label != 0) e.any_positive_label = true;
        const bool alarm = st.score >= threshold;
        if (alarm) {
            e.alarm_any = true;
            if (st.t0) {
                const bool in_window = st.t > *st.t0 - kPredictionWindowHours &&
                                       st.t <= *st.t0;
                (in_window ? e.alarm_in_window : e.alarm_outside) = true;
            }
        }
    }

    ConfusionReport rep;
    rep.threshold = threshold;
    for (const auto& [id, e] : encs) {
        if (e.any_positive_label && !e.positive)
            throw std::invalid_argument("encounter_confusion: positive encounter " + id +
                                        " has no T0");
        if (e.positive) {
            if (e.alarm_in_window)
                ++rep.tp;
            else
                ++rep.fn;
            if (e.alarm_outside) ++rep.fp;
        } else {
            if (e.alarm_any)
                ++rep.fp;
            else
                ++rep.tn;
        }
    }
    rep.sensitivity = rep.tp + rep.fn > 0
                          ? static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fn)
                          : 0.0;
    rep.specificity = rep.tn + rep.fp > 0
                          ? static_cast<double>(rep.tn) / static_cast<double>(rep.tn + rep.fp)
                          : 0.0;
    return rep;
}

double youden_threshold(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("youden_threshold: bad input sizes");
    std::vector<double> uniq(scores.begin(), scores.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    double n_pos = 0, n_neg = 0;
    for (int y : labels) (y != 0 ? n_pos : n_neg) += 1.0;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("youden_threshold: need both classes");

    double best_j = -2.0, best_t = 0.5;
    for (double t : uniq) {
        double tp = 0, tn = 0;
        for (std::size_t k = 0; k < scores.size(); ++k) {
            if (labels[k] != 0 && scores[k] >= t) tp += 1.0;
            if (labels[k] == 0 && scores[k] < t) tn += 1.0;
        }
        const double j = tp / n_pos + tn / n_neg - 1.0;
        if (j > best_j + 1e-12) {
            best_j = j;
            best_t = t;
        }
    }
    return best_t;
}

Aggregate aggregate(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("aggregate: empty input");
    Aggregate a;
    a.runs = static_cast<int>(values.size());
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
    if (values.size() == 1) {
        a.se = 0.0;
        a.single_run = true;
        return a;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    a.se = sd / std::sqrt(static_cast<double>(values.size()));
    return a;
}

}  // namespace adattt::metrics
