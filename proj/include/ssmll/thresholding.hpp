#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <thread>
#include <vector>

#include "ssmll/matrix.hpp"
#include "ssmll/metrics.hpp"
#include "ssmll/types.hpp"

namespace ssmll {

namespace detail {

/// Single-class threshold scan. Scores are swept once in ascending order so
/// each grid point costs O(1) beyond the sort; counts stay exact integers.
/// Tie-break: the smallest grid point attaining the maximum.
inline void mat_search_class(std::span<const double> scores, std::span<const double> labels,
                             const MetricKind& kind, std::span<const double> grid, double& tau_out,
                             double& achieved_out, std::uint8_t& degenerate_out) {
    const std::size_t n = scores.size();
    long long n_pos = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] != 0.0) ++n_pos;
    if (n_pos == 0) {
        tau_out = 1.0;
        achieved_out = 0.0;
        degenerate_out = 1;
        return;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // at tau = grid.front(): everything with score >= tau predicted positive
    long long tp = 0, fp = 0;
    std::size_t j = 0;
    while (j < n && scores[order[j]] < grid.front()) ++j;
    for (std::size_t i = j; i < n; ++i) {
        if (labels[order[i]] != 0.0)
            ++tp;
        else
            ++fp;
    }
    double best_val = -1.0;
    double best_tau = grid.front();
    for (double tau : grid) {
        while (j < n && scores[order[j]] < tau) {
            if (labels[order[j]] != 0.0)
                --tp;
            else
                --fp;
            ++j;
        }
        ConfusionCounts c;
        c.tp = tp;
        c.fp = fp;
        c.fn = n_pos - tp;
        c.tn = static_cast<long long>(n) - n_pos - fp;
        const double val = class_metric(c, kind);
        if (val > best_val) {
            best_val = val;
            best_tau = tau;
        }
    }
    tau_out = best_tau;
    achieved_out = best_val;
    degenerate_out = 0;
}

}  // namespace detail

/// Per-class grid search for the threshold maximizing the metric of
/// indicator pseudo-labels against the true labels. Classes are independent;
/// with threads > 1 they are split across workers and written to disjoint
/// slots, so the result is identical to the sequential scan.
inline MatSearchResult mat_search(const ScoreMatrix& scores, const LabelMatrix& labels,
                                  const MetricKind& kind, std::span<const double> grid,
                                  unsigned threads = 1) {
    require_same_shape(scores, labels, "mat_search");
    if (scores.rows == 0) throw data_error("mat_search: empty labeled set");
    if (grid.empty()) throw config_error("mat_search: empty grid");
    if (!std::is_sorted(grid.begin(), grid.end())) throw config_error("mat_search: grid not sorted");

    const std::size_t k_count = scores.cols;
    MatSearchResult res;
    res.tau.assign(k_count, 1.0);
    res.achieved.assign(k_count, 0.0);
    res.degenerate.assign(k_count, 0);

    auto run_class = [&](std::size_t k) {
        std::vector<double> col_s(scores.rows), col_y(scores.rows);
        for (std::size_t i = 0; i < scores.rows; ++i) {
            col_s[i] = scores(i, k);
            col_y[i] = labels(i, k);
        }
        detail::mat_search_class(col_s, col_y, kind, grid, res.tau[k], res.achieved[k],
                                 res.degenerate[k]);
    };

    if (threads <= 1 || k_count <= 1) {
        for (std::size_t k = 0; k < k_count; ++k) run_class(k);
        return res;
    }
    const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(k_count));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t k = w; k < k_count; k += workers) run_class(k);
        });
    }
    for (auto& t : pool) t.join();
    return res;
}

inline MatSearchResult mat_search(const ScoreMatrix& scores, const LabelMatrix& labels,
                                  const MetricKind& kind, const GridSpec& grid, unsigned threads = 1) {
    const std::vector<double> pts = grid.points();
    return mat_search(scores, labels, kind, pts, threads);
}

/// Indicator pseudo-labels: entry 1 iff score >= tau_k. Gradient-free.
inline LabelMatrix generate_pseudo_labels(const ScoreMatrix& scores, const ThresholdVector& tau) {
    if (scores.cols != tau.size()) throw dim_error("generate_pseudo_labels: K mismatch");
    LabelMatrix out(scores.rows, scores.cols);
    for (std::size_t i = 0; i < scores.rows; ++i)
        for (std::size_t k = 0; k < scores.cols; ++k)
            out(i, k) = scores(i, k) >= tau[k] ? 1.0 : 0.0;
    return out;
}

/// Class-proportion thresholds: tau_k is the ceil(rho_k * M)-th largest score
/// in column k, where rho_k is the labeled-data positive rate. A class with
/// rho_k = 0 gets tau = 1 and a degenerate flag.
inline CapResult cap_thresholds(const ScoreMatrix& scores_unlabeled, const LabelMatrix& labels_labeled) {
    if (scores_unlabeled.rows == 0 || labels_labeled.rows == 0)
        throw data_error("cap_thresholds: empty input");
    if (scores_unlabeled.cols != labels_labeled.cols)
        throw dim_error("cap_thresholds: K mismatch");
    const std::size_t m = scores_unlabeled.rows;
    const std::size_t n = labels_labeled.rows;
    const std::size_t k_count = scores_unlabeled.cols;
    CapResult res;
    res.tau.assign(k_count, 1.0);
    res.degenerate.assign(k_count, 0);
    std::vector<double> col(m);
    for (std::size_t k = 0; k < k_count; ++k) {
        long long pos = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (labels_labeled(i, k) != 0.0) ++pos;
        // s_k = ceil(rho_k * M) computed in exact integer arithmetic
        const long long s_k = (pos * static_cast<long long>(m) + static_cast<long long>(n) - 1) /
                              static_cast<long long>(n);
        if (s_k == 0) {
            res.degenerate[k] = 1;
            continue;
        }
        for (std::size_t i = 0; i < m; ++i) col[i] = scores_unlabeled(i, k);
        std::nth_element(col.begin(), col.begin() + (s_k - 1), col.end(), std::greater<double>());
        res.tau[k] = col[s_k - 1];
    }
    return res;
}

/// Per row, the k highest-scoring classes are positive; score ties resolve to
/// the lower class index.
inline LabelMatrix topk_pseudo_labels(const ScoreMatrix& scores, std::size_t k) {
    if (k < 1 || k > scores.cols) throw config_error("topk_pseudo_labels: k out of range");
    LabelMatrix out(scores.rows, scores.cols, 0.0);
    std::vector<std::size_t> order(scores.cols);
    for (std::size_t i = 0; i < scores.rows; ++i) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores(i, a) != scores(i, b)) return scores(i, a) > scores(i, b);
            return a < b;
        });
        for (std::size_t r = 0; r < k; ++r) out(i, order[r]) = 1.0;
    }
    return out;
}

inline ThresholdVector fixed_thresholds(double tau0, std::size_t k_count) {
    if (!(tau0 >= 0.0 && tau0 <= 1.0)) throw config_error("fixed_thresholds: tau out of [0,1]");
    return ThresholdVector(k_count, tau0);
}

/// Grid made of 0, the midpoints between consecutive distinct sorted values,
/// and 1. Reaches every ranking-determined labeling of the given scores.
inline std::vector<double> midpoint_grid(std::span<const double> values) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<double> grid;
    grid.push_back(0.0);
    for (std::size_t i = 0; i + 1 < v.size(); ++i) grid.push_back(0.5 * (v[i] + v[i + 1]));
    grid.push_back(1.0);
    return grid;
}

}  // namespace ssmll
