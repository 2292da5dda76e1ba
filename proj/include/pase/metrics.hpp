#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pase/dataset.hpp"
#include "pase/tensor.hpp"

namespace pase {

/// Full evaluation record. Fields that a task kind cannot produce stay NaN
/// (e.g. acc2 for a classification run without continuous scores).
struct MetricsReport {
    double acc2_nonneg = std::numeric_limits<double>::quiet_NaN();
    double acc2_pos = std::numeric_limits<double>::quiet_NaN();
    double acc7 = std::numeric_limits<double>::quiet_NaN();
    double f1_nonneg = std::numeric_limits<double>::quiet_NaN();
    double f1_pos = std::numeric_limits<double>::quiet_NaN();
    double mae = std::numeric_limits<double>::quiet_NaN();
    double corr = std::numeric_limits<double>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double weighted_f1 = std::numeric_limits<double>::quiet_NaN();
    double wa = std::numeric_limits<double>::quiet_NaN();
    std::map<std::uint32_t, double> per_class_f1;
    std::size_t n_total = 0;
    std::size_t n_nonneg = 0;  // samples under the zero-kept convention
    std::size_t n_pos = 0;     // samples left after dropping zeros
    bool corr_defined = true;  // false when an input had zero variance
};

// Named scalar fields, used by aggregation and report serialization.
struct MetricField {
    const char* name;
    double MetricsReport::* member;
};

inline const std::vector<MetricField>& metric_fields() {
    static const std::vector<MetricField> fields = {
        {"acc2_nonneg", &MetricsReport::acc2_nonneg},
        {"acc2_pos", &MetricsReport::acc2_pos},
        {"acc7", &MetricsReport::acc7},
        {"f1_nonneg", &MetricsReport::f1_nonneg},
        {"f1_pos", &MetricsReport::f1_pos},
        {"mae", &MetricsReport::mae},
        {"corr", &MetricsReport::corr},
        {"accuracy", &MetricsReport::accuracy},
        {"weighted_f1", &MetricsReport::weighted_f1},
        {"wa", &MetricsReport::wa},
    };
    return fields;
}

namespace detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y,
                      bool* defined) {
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        *defined = false;
        return 0.0;
    }
    *defined = true;
    return sxy / std::sqrt(sxx * syy);
}

/// Support-weighted F1 over integer class labels; also fills per-class F1.
inline double weighted_f1(const std::vector<int>& pred,
                          const std::vector<int>& truth,
                          std::map<std::uint32_t, double>* per_class = nullptr) {
    std::map<int, std::size_t> support, tp, fp, fn;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++support[truth[i]];
        if (pred[i] == truth[i])
            ++tp[truth[i]];
        else {
            ++fp[pred[i]];
            ++fn[truth[i]];
        }
    }
    double total = 0.0, weighted = 0.0;
    for (const auto& [cls, sup] : support) {
        const double p_den = static_cast<double>(tp[cls] + fp[cls]);
        const double r_den = static_cast<double>(tp[cls] + fn[cls]);
        const double prec = p_den > 0.0 ? static_cast<double>(tp[cls]) / p_den : 0.0;
        const double rec = r_den > 0.0 ? static_cast<double>(tp[cls]) / r_den : 0.0;
        const double f1 =
            prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        if (per_class) (*per_class)[static_cast<std::uint32_t>(cls)] = f1;
        weighted += static_cast<double>(sup) * f1;
        total += static_cast<double>(sup);
    }
    return total > 0.0 ? weighted / total : 0.0;
}

}  // namespace detail

/// Regression-style evaluation: continuous predictions against continuous
/// targets on the [-3, 3] scale. Predictions are clamped into range for
/// binning only; MAE and correlation use them as given.
inline MetricsReport compute_regression_metrics(
    const std::vector<double>& pred_scores,
    const std::vector<double>& true_scores) {
    if (pred_scores.size() != true_scores.size())
        throw std::invalid_argument("compute_metrics: length mismatch");
    if (pred_scores.empty())
        throw std::invalid_argument("compute_metrics: empty input");

    MetricsReport rep;
    rep.n_total = pred_scores.size();

    std::vector<double> clamped(pred_scores.size());
    for (std::size_t i = 0; i < pred_scores.size(); ++i)
        clamped[i] = std::max(-3.0, std::min(3.0, pred_scores[i]));

    const auto true7 = bin_labels7(true_scores);
    const auto pred7 = bin_labels7(clamped);
    std::size_t hit7 = 0;
    for (std::size_t i = 0; i < true7.size(); ++i)
        hit7 += pred7[i] == true7[i] ? 1 : 0;
    rep.acc7 = static_cast<double>(hit7) / static_cast<double>(true7.size());

    {  // zero counted as non-negative
        const auto t = bin_labels2(true_scores, BinaryConvention::NonNegative);
        std::vector<int> p(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) p[i] = clamped[i] >= 0.0 ? 1 : 0;
        std::size_t hit = 0;
        for (std::size_t i = 0; i < t.size(); ++i) hit += p[i] == t[i] ? 1 : 0;
        rep.n_nonneg = t.size();
        rep.acc2_nonneg = static_cast<double>(hit) / static_cast<double>(t.size());
        rep.f1_nonneg = detail::weighted_f1(p, t);
    }
    {  // zero targets excluded
        const auto t_all = bin_labels2(true_scores, BinaryConvention::Positive);
        std::vector<int> t, p;
        for (std::size_t i = 0; i < t_all.size(); ++i) {
            if (t_all[i] < 0) continue;
            t.push_back(t_all[i]);
            p.push_back(clamped[i] > 0.0 ? 1 : 0);
        }
        rep.n_pos = t.size();
        if (!t.empty()) {
            std::size_t hit = 0;
            for (std::size_t i = 0; i < t.size(); ++i) hit += p[i] == t[i] ? 1 : 0;
            rep.acc2_pos = static_cast<double>(hit) / static_cast<double>(t.size());
            rep.f1_pos = detail::weighted_f1(p, t);
        }
    }

    double mae = 0.0;
    for (std::size_t i = 0; i < pred_scores.size(); ++i)
        mae += std::abs(pred_scores[i] - true_scores[i]);
    rep.mae = mae / static_cast<double>(pred_scores.size());
    rep.corr = detail::pearson(pred_scores, true_scores, &rep.corr_defined);
    return rep;
}

/// Expected score of a class distribution row under the class-center map.
inline double expected_score(const Tensor2& dist, std::size_t row,
                             std::uint32_t k) {
    double s = 0.0;
    for (std::uint32_t c = 0; c < k; ++c)
        s += dist.at(row, c) * class_center(c, k);
    return s;
}

/// Classification evaluation from per-sample class distributions. When
/// continuous targets are supplied, the regression family is also filled
/// using the expected class value mapped back to the [-3, 3] scale.
inline MetricsReport compute_classification_metrics(
    const Tensor2& pred_dist, const std::vector<std::uint32_t>& labels,
    const std::vector<double>* true_scores = nullptr) {
    if (pred_dist.rows != labels.size())
        throw std::invalid_argument("compute_metrics: length mismatch");
    if (labels.empty()) throw std::invalid_argument("compute_metrics: empty input");
    const auto k = static_cast<std::uint32_t>(pred_dist.cols);

    std::vector<int> pred(labels.size()), truth(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < k; ++c)
            if (pred_dist.at(i, c) > pred_dist.at(i, best)) best = c;
        pred[i] = static_cast<int>(best);
        truth[i] = static_cast<int>(labels[i]);
    }

    MetricsReport rep;
    if (true_scores) {
        std::vector<double> pred_scores(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            pred_scores[i] = expected_score(pred_dist, i, k);
        rep = compute_regression_metrics(pred_scores, *true_scores);
    }
    rep.n_total = labels.size();

    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        hit += pred[i] == truth[i] ? 1 : 0;
    rep.accuracy = static_cast<double>(hit) / static_cast<double>(labels.size());
    rep.weighted_f1 = detail::weighted_f1(pred, truth, &rep.per_class_f1);

    // WA: class-support-weighted recall, which the support weighting
    // collapses to overall accuracy; computed literally regardless.
    std::map<int, std::size_t> support, correct;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++support[truth[i]];
        if (pred[i] == truth[i]) ++correct[truth[i]];
    }
    double wa = 0.0;
    for (const auto& [cls, sup] : support)
        wa += static_cast<double>(sup) / static_cast<double>(labels.size()) *
              (static_cast<double>(correct[cls]) / static_cast<double>(sup));
    rep.wa = wa;
    return rep;
}

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
    std::size_t count = 0;
};

/// Mean and sample std per metric over the reports of a multi-seed run.
/// NaN entries (metric not produced by the task kind) are skipped.
inline std::map<std::string, MetricSummary> aggregate_runs(
    const std::vector<MetricsReport>& reports) {
    if (reports.empty())
        throw std::invalid_argument("aggregate_runs: no reports to aggregate");
    std::map<std::string, MetricSummary> out;
    for (const MetricField& field : metric_fields()) {
        MetricSummary s;
        double sum = 0.0, first = 0.0;
        bool all_equal = true;
        for (const MetricsReport& r : reports) {
            const double v = r.*(field.member);
            if (std::isnan(v)) continue;
            if (s.count == 0)
                first = v;
            else if (v != first)
                all_equal = false;
            sum += v;
            ++s.count;
        }
        if (s.count == 0) continue;
        if (all_equal) {  // keep identical inputs exact
            s.mean = first;
            out[field.name] = s;
            continue;
        }
        s.mean = sum / static_cast<double>(s.count);
        if (s.count > 1) {
            double sq = 0.0;
            for (const MetricsReport& r : reports) {
                const double v = r.*(field.member);
                if (std::isnan(v)) continue;
                sq += (v - s.mean) * (v - s.mean);
            }
            s.stddev = std::sqrt(sq / static_cast<double>(s.count - 1));
        }
        out[field.name] = s;
    }
    return out;
}

}  // namespace pase
