#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ssmll/matrix.hpp"
#include "ssmll/types.hpp"

namespace ssmll {

struct ConfusionCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    long long total() const { return tp + fp + tn + fn; }
};

inline std::vector<ConfusionCounts> confusion_counts(const LabelMatrix& pred, const LabelMatrix& truth) {
    require_same_shape(pred, truth, "confusion_counts");
    if (!is_binary(pred) || !is_binary(truth))
        throw data_error("confusion_counts: matrices must be binary");
    std::vector<ConfusionCounts> counts(pred.cols);
    for (std::size_t i = 0; i < pred.rows; ++i) {
        for (std::size_t k = 0; k < pred.cols; ++k) {
            const bool p = pred(i, k) != 0.0;
            const bool t = truth(i, k) != 0.0;
            ConfusionCounts& c = counts[k];
            if (p && t)
                ++c.tp;
            else if (p && !t)
                ++c.fp;
            else if (!p && t)
                ++c.fn;
            else
                ++c.tn;
        }
    }
    return counts;
}

// 0/0 -> 0 convention throughout. The oracle module re-implements these
// formulas independently with the same operation order; equivalence tests
// compare the two bitwise, so keep the expression shapes stable.
inline double precision_of(const ConfusionCounts& c) {
    const long long den = c.tp + c.fp;
    return den == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double recall_of(const ConfusionCounts& c) {
    const long long den = c.tp + c.fn;
    return den == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double fbeta_of(double p, double r, double beta, FBetaDenom denom) {
    const double b2 = beta * beta;
    const double den = (denom == FBetaDenom::beta_squared ? b2 : beta) * p + r;
    return den == 0.0 ? 0.0 : ((1.0 + b2) * p * r) / den;
}

inline double class_metric(const ConfusionCounts& c, const MetricKind& kind) {
    const double p = precision_of(c);
    const double r = recall_of(c);
    switch (kind.type) {
        case MetricType::precision: return p;
        case MetricType::recall: return r;
        case MetricType::fbeta: break;
    }
    return fbeta_of(p, r, kind.beta, kind.denom);
}

/// AP of one score/label column: precision at each positive's rank, averaged
/// over positives. Ties in score rank by ascending original index. Returns 0
/// when the column has no positives (callers flag/skip such classes).
inline double average_precision(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw dim_error("average_precision: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    long long n_pos = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] != 0.0) ++n_pos;
    if (n_pos == 0) return 0.0;
    double sum = 0.0;
    long long seen = 0;
    for (std::size_t rank = 1; rank <= n; ++rank) {
        if (labels[order[rank - 1]] != 0.0) {
            ++seen;
            sum += static_cast<double>(seen) / static_cast<double>(rank);
        }
    }
    return sum / static_cast<double>(n_pos);
}

struct MapResult {
    double map = 0.0;
    std::vector<double> per_class_ap;        // 0 for skipped classes
    std::vector<std::size_t> skipped_classes;  // classes with no positive label
};

inline MapResult mean_average_precision(const ScoreMatrix& scores, const LabelMatrix& labels) {
    require_same_shape(scores, labels, "mean_average_precision");
    MapResult res;
    res.per_class_ap.assign(scores.cols, 0.0);
    std::vector<double> col_s(scores.rows), col_y(scores.rows);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < scores.cols; ++k) {
        bool any_pos = false;
        for (std::size_t i = 0; i < scores.rows; ++i) {
            col_s[i] = scores(i, k);
            col_y[i] = labels(i, k);
            if (col_y[i] != 0.0) any_pos = true;
        }
        if (!any_pos) {
            res.skipped_classes.push_back(k);
            continue;
        }
        const double ap = average_precision(col_s, col_y);
        res.per_class_ap[k] = ap;
        sum += ap;
        ++used;
    }
    if (used == 0) throw data_error("mean_average_precision: no class has a positive label");
    res.map = sum / static_cast<double>(used);
    return res;
}

/// CF1 from per-class-averaged precision/recall, OF1 from globally pooled counts.
struct PrF1Summary {
    double cf1 = 0.0, of1 = 0.0;
    double class_precision = 0.0, class_recall = 0.0;   // CP, CR
    double overall_precision = 0.0, overall_recall = 0.0;  // OP, OR
};

inline PrF1Summary cf1_of1(const LabelMatrix& pred, const LabelMatrix& truth) {
    const std::vector<ConfusionCounts> counts = confusion_counts(pred, truth);
    const std::size_t k_count = counts.size();
    PrF1Summary s;
    double sum_p = 0.0, sum_r = 0.0;
    long long tot_tp = 0, tot_tpfp = 0, tot_tpfn = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
        sum_p += precision_of(counts[k]);
        sum_r += recall_of(counts[k]);
        tot_tp += counts[k].tp;
        tot_tpfp += counts[k].tp + counts[k].fp;
        tot_tpfn += counts[k].tp + counts[k].fn;
    }
    s.class_precision = k_count == 0 ? 0.0 : sum_p / static_cast<double>(k_count);
    s.class_recall = k_count == 0 ? 0.0 : sum_r / static_cast<double>(k_count);
    s.overall_precision = tot_tpfp == 0 ? 0.0 : static_cast<double>(tot_tp) / static_cast<double>(tot_tpfp);
    s.overall_recall = tot_tpfn == 0 ? 0.0 : static_cast<double>(tot_tp) / static_cast<double>(tot_tpfn);
    const double cden = s.class_precision + s.class_recall;
    s.cf1 = cden == 0.0 ? 0.0 : (2.0 * s.class_precision * s.class_recall) / cden;
    const double oden = s.overall_precision + s.overall_recall;
    s.of1 = oden == 0.0 ? 0.0 : (2.0 * s.overall_precision * s.overall_recall) / oden;
    return s;
}

/// Binarize scores at a single threshold (>= convention).
inline LabelMatrix binarize(const ScoreMatrix& scores, double threshold) {
    LabelMatrix out(scores.rows, scores.cols);
    for (std::size_t i = 0; i < scores.data.size(); ++i)
        out.data[i] = scores.data[i] >= threshold ? 1.0 : 0.0;
    return out;
}

}  // namespace ssmll
