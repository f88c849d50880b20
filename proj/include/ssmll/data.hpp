#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ssmll/d2l.hpp"
#include "ssmll/matrix.hpp"
#include "ssmll/rng.hpp"

namespace ssmll {

/// Synthetic correlated multi-label generator configuration. Labels come from
/// a latent equicorrelated Gaussian per co-occurrence block; features are
/// class prototypes assigned to patches plus Gaussian noise.
struct SynthConfig {
    std::size_t num_classes = 10;
    std::size_t feature_dim = 32;
    std::size_t patches = 4;
    std::size_t n_total = 1000;
    std::size_t n_test = 200;
    std::vector<double> pi;  // per-class positive rate, each in (0,1)
    double rho_corr = 0.0;   // within-block latent correlation, [0,1)
    std::vector<std::vector<std::size_t>> blocks;  // disjoint class groups; empty => all independent
    double sigma_proto = 1.0;
    double sigma_feat = 1.0;
    bool require_positive = true;  // resample empty label rows (bounded retries)
    std::uint64_t seed = 1;

    void validate() const {
        if (num_classes == 0 || feature_dim == 0 || patches == 0 || n_total == 0)
            throw config_error("synth: counts must be positive");
        if (n_test >= n_total) throw config_error("synth: n_test must be < n_total");
        if (pi.size() != num_classes) throw config_error("synth: pi must have one entry per class");
        for (double p : pi)
            if (!(p > 0.0 && p < 1.0)) throw config_error("synth: pi entries must be in (0,1)");
        if (!(rho_corr >= 0.0 && rho_corr < 1.0)) throw config_error("synth: rho_corr must be in [0,1)");
        if (!(sigma_proto >= 0.0 && sigma_feat >= 0.0)) throw config_error("synth: sigmas must be >= 0");
        std::vector<bool> seen(num_classes, false);
        for (const auto& blk : blocks) {
            for (std::size_t k : blk) {
                if (k >= num_classes) throw config_error("synth: block class index out of range");
                if (seen[k]) throw config_error("synth: blocks must be disjoint");
                seen[k] = true;
            }
        }
    }
};

/// Standard normal quantile by bisection on erfc; deterministic and accurate
/// to ~1e-14, called once per class.
inline double normal_quantile(double q) {
    if (!(q > 0.0 && q < 1.0)) throw config_error("normal_quantile: q must be in (0,1)");
    auto cdf = [](double x) { return 0.5 * std::erfc(-x / 1.4142135623730950488); };
    double lo = -12.0, hi = 12.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid) < q)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-14) break;
    }
    return 0.5 * (lo + hi);
}

/// Full dataset before splitting.
struct SynthData {
    SynthConfig cfg;
    InstanceBlock instances;  // n_total rows
    LabelMatrix labels;       // n_total x K
    DenseMatrix prototypes;   // K x d
};

inline SynthData generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t K = cfg.num_classes, d = cfg.feature_dim, n = cfg.patches;

    SynthData out;
    out.cfg = cfg;
    out.prototypes = DenseMatrix(K, d);
    for (double& v : out.prototypes.data) v = cfg.sigma_proto * rng.gaussian();

    // class -> block id (-1 for unblocked classes)
    std::vector<int> block_of(K, -1);
    for (std::size_t bi = 0; bi < cfg.blocks.size(); ++bi)
        for (std::size_t k : cfg.blocks[bi]) block_of[k] = static_cast<int>(bi);

    std::vector<double> z_cut(K);
    for (std::size_t k = 0; k < K; ++k) z_cut[k] = normal_quantile(1.0 - cfg.pi[k]);

    const double sr = std::sqrt(cfg.rho_corr);
    const double si = std::sqrt(1.0 - cfg.rho_corr);

    out.labels = LabelMatrix(cfg.n_total, K);
    out.instances.n = n;
    out.instances.global = DenseMatrix(cfg.n_total, d);
    out.instances.patches = DenseMatrix(cfg.n_total * n, d);

    std::vector<double> shared(cfg.blocks.size());
    std::vector<double> y(K);
    std::vector<std::size_t> patch_of(K);
    for (std::size_t i = 0; i < cfg.n_total; ++i) {
        // labels, with bounded resampling of empty rows
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (double& s : shared) s = rng.gaussian();
            bool any = false;
            for (std::size_t k = 0; k < K; ++k) {
                const double own = rng.gaussian();
                const double u = block_of[k] >= 0 ? sr * shared[block_of[k]] + si * own : own;
                y[k] = u > z_cut[k] ? 1.0 : 0.0;
                if (y[k] != 0.0) any = true;
            }
            if (any || !cfg.require_positive) break;
        }
        for (std::size_t k = 0; k < K; ++k) out.labels(i, k) = y[k];

        // each active class contributes its prototype to one uniformly chosen patch
        for (std::size_t k = 0; k < K; ++k)
            if (y[k] != 0.0) patch_of[k] = static_cast<std::size_t>(rng.uniform_below(n));
        for (std::size_t o = 0; o < n; ++o) {
            double* prow = out.instances.patches.data.data() + (i * n + o) * d;
            for (std::size_t j = 0; j < d; ++j) prow[j] = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                if (y[k] != 0.0 && patch_of[k] == o) {
                    const double* proto = out.prototypes.data.data() + k * d;
                    for (std::size_t j = 0; j < d; ++j) prow[j] += proto[j];
                }
            }
            for (std::size_t j = 0; j < d; ++j) prow[j] += cfg.sigma_feat * rng.gaussian();
        }
        // global view: mean of patches plus noise; with a single patch the
        // whole-view crop IS the patch, so no extra draw
        double* grow = out.instances.global.data.data() + i * d;
        if (n == 1) {
            const double* prow = out.instances.patches.data.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) grow[j] = prow[j];
        } else {
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (std::size_t o = 0; o < n; ++o) s += out.instances.patches(i * n + o, j);
                grow[j] = s / static_cast<double>(n) + cfg.sigma_feat * rng.gaussian();
            }
        }
    }
    return out;
}

/// Labeled/unlabeled/test partition. True labels of the unlabeled pool are
/// retained for the pseudo-label quality audit only; training code receives
/// them through no operation signature.
struct SsmllDataset {
    std::size_t num_classes = 0, feature_dim = 0, patches = 1;
    InstanceBlock labeled;
    LabelMatrix labeled_labels;
    InstanceBlock unlabeled;
    InstanceBlock test;
    LabelMatrix test_labels;
    std::vector<std::size_t> degenerate_labeled_classes;  // no labeled positive

    const LabelMatrix& audit_labels() const { return audit_labels_; }
    void set_audit_labels(LabelMatrix m) { audit_labels_ = std::move(m); }

private:
    LabelMatrix audit_labels_;  // unlabeled pool truth, reporting path only
};

inline InstanceBlock gather_instances(const InstanceBlock& src, std::span<const std::size_t> idx) {
    InstanceBlock out;
    out.n = src.n;
    out.global = gather_rows(src.global, idx);
    out.patches = DenseMatrix(idx.size() * src.n, src.patches.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t o = 0; o < src.n; ++o) {
            auto s = src.patches.row(idx[i] * src.n + o);
            std::copy(s.begin(), s.end(), out.patches.row(i * src.n + o).begin());
        }
    return out;
}

/// Shuffle once with the split seed; reserve n_test rows for test, then take
/// round(p * n_train) of the remainder (at least 1) as labeled.
inline SsmllDataset split_labeled(const SynthData& data, double p, std::uint64_t seed) {
    if (!(p > 0.0 && p < 1.0)) throw config_error("split: p must be in (0,1)");
    const std::size_t n_total = data.labels.rows;
    const std::size_t n_test = data.cfg.n_test;
    const std::size_t n_train = n_total - n_test;

    std::vector<std::size_t> idx(n_total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);

    std::size_t n_labeled = static_cast<std::size_t>(std::llround(p * static_cast<double>(n_train)));
    n_labeled = std::max<std::size_t>(1, std::min(n_labeled, n_train));  // empty unlabeled pool allowed

    const std::span<const std::size_t> all(idx);
    const auto test_idx = all.subspan(0, n_test);
    const auto lab_idx = all.subspan(n_test, n_labeled);
    const auto unl_idx = all.subspan(n_test + n_labeled);

    SsmllDataset ds;
    ds.num_classes = data.cfg.num_classes;
    ds.feature_dim = data.cfg.feature_dim;
    ds.patches = data.cfg.patches;
    ds.test = gather_instances(data.instances, test_idx);
    ds.test_labels = gather_rows(data.labels, test_idx);
    ds.labeled = gather_instances(data.instances, lab_idx);
    ds.labeled_labels = gather_rows(data.labels, lab_idx);
    ds.unlabeled = gather_instances(data.instances, unl_idx);
    ds.set_audit_labels(gather_rows(data.labels, unl_idx));

    for (std::size_t k = 0; k < ds.num_classes; ++k) {
        bool any = false;
        for (std::size_t i = 0; i < ds.labeled_labels.rows; ++i)
            if (ds.labeled_labels(i, k) != 0.0) any = true;
        if (!any) ds.degenerate_labeled_classes.push_back(k);
    }
    return ds;
}

}  // namespace ssmll
