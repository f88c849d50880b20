#pragma once

// Brute-force reference implementations used by the test suites and by the
// CLI --verify flags. Deliberately slow and literal, and deliberately
// independent: this header may include only core types, never the production
// metric/threshold modules. Formulas are written in the same operation order
// as the production code so equivalence checks can compare bitwise.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "ssmll/matrix.hpp"
#include "ssmll/types.hpp"

namespace ssmll::oracle {

namespace detail {

inline double metric_from_counts(long long tp, long long fp, long long fn, const MetricKind& kind) {
    const long long pden = tp + fp;
    const double p = pden == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pden);
    const long long rden = tp + fn;
    const double r = rden == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(rden);
    switch (kind.type) {
        case MetricType::precision: return p;
        case MetricType::recall: return r;
        case MetricType::fbeta: break;
    }
    const double b2 = kind.beta * kind.beta;
    const double den = (kind.denom == FBetaDenom::beta_squared ? b2 : kind.beta) * p + r;
    return den == 0.0 ? 0.0 : ((1.0 + b2) * p * r) / den;
}

}  // namespace detail

/// Literal double loop over classes x grid points, recounting the confusion
/// entries from scratch at every point. Smallest maximizing grid point wins;
/// zero-positive classes short-circuit to tau = 1 with a degenerate flag.
inline MatSearchResult brute_force_thresholds(const ScoreMatrix& scores, const LabelMatrix& labels,
                                              const MetricKind& kind, std::span<const double> grid) {
    if (!scores.same_shape(labels)) throw dim_error("brute_force_thresholds: shape mismatch");
    if (scores.rows == 0) throw data_error("brute_force_thresholds: empty labeled set");
    if (grid.empty()) throw config_error("brute_force_thresholds: empty grid");
    MatSearchResult res;
    res.tau.assign(scores.cols, 1.0);
    res.achieved.assign(scores.cols, 0.0);
    res.degenerate.assign(scores.cols, 0);
    for (std::size_t k = 0; k < scores.cols; ++k) {
        long long n_pos = 0;
        for (std::size_t i = 0; i < scores.rows; ++i)
            if (labels(i, k) != 0.0) ++n_pos;
        if (n_pos == 0) {
            res.degenerate[k] = 1;
            continue;
        }
        double best_val = -1.0;
        double best_tau = grid.front();
        for (double tau : grid) {
            long long tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < scores.rows; ++i) {
                const bool pred = scores(i, k) >= tau;
                const bool truth = labels(i, k) != 0.0;
                if (pred && truth)
                    ++tp;
                else if (pred && !truth)
                    ++fp;
                else if (!pred && truth)
                    ++fn;
            }
            const double val = detail::metric_from_counts(tp, fp, fn, kind);
            if (val > best_val) {
                best_val = val;
                best_tau = tau;
            }
        }
        res.tau[k] = best_tau;
        res.achieved[k] = best_val;
    }
    return res;
}

/// Central finite differences of a scalar function, one coordinate at a time.
inline std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                            std::span<const double> point, double eps) {
    if (!(eps > 0.0)) throw config_error("finite_diff_grad: eps must be > 0");
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> g(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = f(x);
        x[i] = orig - eps;
        const double down = f(x);
        x[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw data_error("finite_diff_grad: non-finite loss at probe point");
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

struct OracleMetricBundle {
    double map = 0.0;
    std::vector<double> per_class_ap;
    std::vector<std::size_t> skipped_classes;
    double cf1 = 0.0, of1 = 0.0;
    double cp = 0.0, cr = 0.0, op = 0.0, orr = 0.0;
    std::vector<double> per_class_precision, per_class_recall, per_class_fbeta;
};

/// Direct transliteration of the ranking-AP definition and the pooled/averaged
/// F1 formulas from raw matrices; no shared code with the metrics module.
inline OracleMetricBundle naive_metrics(const ScoreMatrix& scores, const LabelMatrix& pred,
                                        const LabelMatrix& truth, double fbeta_beta = 0.5,
                                        FBetaDenom denom = FBetaDenom::beta_squared) {
    if (!scores.same_shape(truth) || !pred.same_shape(truth))
        throw dim_error("naive_metrics: shape mismatch");
    OracleMetricBundle out;
    const std::size_t n = truth.rows, k_count = truth.cols;
    out.per_class_ap.assign(k_count, 0.0);

    // ranking AP per class
    double map_sum = 0.0;
    std::size_t map_used = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores(a, k) != scores(b, k)) return scores(a, k) > scores(b, k);
            return a < b;
        });
        long long n_pos = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (truth(i, k) != 0.0) ++n_pos;
        if (n_pos == 0) {
            out.skipped_classes.push_back(k);
            continue;
        }
        double sum = 0.0;
        long long seen = 0;
        for (std::size_t rank = 1; rank <= n; ++rank) {
            if (truth(order[rank - 1], k) != 0.0) {
                ++seen;
                sum += static_cast<double>(seen) / static_cast<double>(rank);
            }
        }
        out.per_class_ap[k] = sum / static_cast<double>(n_pos);
        map_sum += out.per_class_ap[k];
        ++map_used;
    }
    if (map_used == 0) throw data_error("naive_metrics: no class has a positive label");
    out.map = map_sum / static_cast<double>(map_used);

    // confusion-based summaries
    out.per_class_precision.assign(k_count, 0.0);
    out.per_class_recall.assign(k_count, 0.0);
    out.per_class_fbeta.assign(k_count, 0.0);
    double sum_p = 0.0, sum_r = 0.0;
    long long tot_tp = 0, tot_tpfp = 0, tot_tpfn = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
        long long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool pv = pred(i, k) != 0.0;
            const bool tv = truth(i, k) != 0.0;
            if (pv && tv)
                ++tp;
            else if (pv && !tv)
                ++fp;
            else if (!pv && tv)
                ++fn;
        }
        const long long pden = tp + fp;
        const double p = pden == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pden);
        const long long rden = tp + fn;
        const double r = rden == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(rden);
        out.per_class_precision[k] = p;
        out.per_class_recall[k] = r;
        const double b2 = fbeta_beta * fbeta_beta;
        const double fden = (denom == FBetaDenom::beta_squared ? b2 : fbeta_beta) * p + r;
        out.per_class_fbeta[k] = fden == 0.0 ? 0.0 : ((1.0 + b2) * p * r) / fden;
        sum_p += p;
        sum_r += r;
        tot_tp += tp;
        tot_tpfp += tp + fp;
        tot_tpfn += tp + fn;
    }
    out.cp = k_count == 0 ? 0.0 : sum_p / static_cast<double>(k_count);
    out.cr = k_count == 0 ? 0.0 : sum_r / static_cast<double>(k_count);
    out.op = tot_tpfp == 0 ? 0.0 : static_cast<double>(tot_tp) / static_cast<double>(tot_tpfp);
    out.orr = tot_tpfn == 0 ? 0.0 : static_cast<double>(tot_tp) / static_cast<double>(tot_tpfn);
    const double cden = out.cp + out.cr;
    out.cf1 = cden == 0.0 ? 0.0 : (2.0 * out.cp * out.cr) / cden;
    const double oden = out.op + out.orr;
    out.of1 = oden == 0.0 ? 0.0 : (2.0 * out.op * out.orr) / oden;
    return out;
}

}  // namespace ssmll::oracle
