#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ssmll/losses.hpp"
#include "ssmll/matrix.hpp"
#include "ssmll/nn.hpp"
#include "ssmll/rng.hpp"

namespace ssmll {

/// One instance as produced by the generator: a whole-view feature vector plus
/// its n equal-size patch vectors.
struct PatchedInstance {
    std::vector<double> global;  // d
    DenseMatrix patches;         // n x d
};

/// Packed batch: one `global` row per instance, n consecutive `patches` rows
/// per instance (row i*n+o is patch o of instance i).
struct InstanceBlock {
    DenseMatrix global;   // B x d
    DenseMatrix patches;  // (B*n) x d
    std::size_t n = 1;

    std::size_t size() const { return global.rows; }
};

/// Patch decomposition lookup. Instances are born patch-first, so cropping is
/// a gather, not a spatial operation.
inline PatchedInstance crop(const InstanceBlock& block, std::size_t index, std::size_t n) {
    if (n != block.n) throw dim_error("crop: requested patch count does not match stored decomposition");
    if (index >= block.size()) throw dim_error("crop: index out of range");
    PatchedInstance inst;
    inst.global.assign(block.global.row(index).begin(), block.global.row(index).end());
    inst.patches = DenseMatrix(block.n, block.patches.cols);
    for (std::size_t o = 0; o < block.n; ++o) {
        auto src = block.patches.row(index * block.n + o);
        std::copy(src.begin(), src.end(), inst.patches.row(o).begin());
    }
    return inst;
}

enum class AugmentMode { weak, strong };

/// Feature-space stand-in for input augmentation: weak adds small Gaussian
/// noise; strong adds larger noise and independently zeroes coordinates.
struct AugmentSpec {
    AugmentMode mode = AugmentMode::weak;
    double weak_sigma = 0.05;
    double strong_sigma = 0.2;
    double strong_dropout = 0.2;
};

inline DenseMatrix augment(const DenseMatrix& features, const AugmentSpec& spec, Rng& rng) {
    DenseMatrix out = features;
    if (spec.mode == AugmentMode::weak) {
        if (spec.weak_sigma > 0.0)
            for (double& v : out.data) v += spec.weak_sigma * rng.gaussian();
        return out;
    }
    for (double& v : out.data) {
        if (spec.strong_sigma > 0.0) v += spec.strong_sigma * rng.gaussian();
        if (spec.strong_dropout > 0.0 && rng.uniform01() < spec.strong_dropout) v = 0.0;
    }
    return out;
}

inline InstanceBlock augment(const InstanceBlock& block, const AugmentSpec& spec, Rng& rng) {
    InstanceBlock out;
    out.n = block.n;
    out.global = augment(block.global, spec, rng);
    out.patches = augment(block.patches, spec, rng);
    return out;
}

/// Spatially-weighted patch aggregation: per class, softmax(prob/alpha)
/// weights over patches applied to the probs themselves. Output lies in the
/// per-class [min, max] patch range. Exponents are max-shifted so small alpha
/// never overflows; sums run in value-sorted order so the result is bitwise
/// invariant under patch permutations.
inline DenseMatrix aggregate_patches_batch(const DenseMatrix& patch_probs, std::size_t n,
                                           double alpha, DenseMatrix* weights_out = nullptr) {
    if (!(alpha > 0.0)) throw config_error("aggregate_patches: temperature must be > 0");
    if (n == 0 || patch_probs.rows % n != 0)
        throw dim_error("aggregate_patches: row count not a multiple of n");
    const std::size_t b = patch_probs.rows / n;
    const std::size_t k_count = patch_probs.cols;
    DenseMatrix out(b, k_count);
    if (weights_out) *weights_out = DenseMatrix(patch_probs.rows, k_count);
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < k_count; ++k) {
            for (std::size_t o = 0; o < n; ++o) vals[o] = patch_probs(i * n + o, k);
            std::sort(vals.begin(), vals.end());
            const double mx = vals[n - 1];
            double denom = 0.0;
            for (std::size_t o = 0; o < n; ++o) denom += std::exp((vals[o] - mx) / alpha);
            double agg = 0.0;
            for (std::size_t o = 0; o < n; ++o)
                agg += (std::exp((vals[o] - mx) / alpha) / denom) * vals[o];
            out(i, k) = agg;
            if (weights_out)
                for (std::size_t o = 0; o < n; ++o)
                    (*weights_out)(i * n + o, k) =
                        std::exp((patch_probs(i * n + o, k) - mx) / alpha) / denom;
        }
    }
    return out;
}

inline std::vector<double> aggregate_patches(const DenseMatrix& patch_probs, double alpha) {
    const DenseMatrix out = aggregate_patches_batch(patch_probs, patch_probs.rows, alpha);
    return {out.data.begin(), out.data.end()};
}

/// Correlative (whole-view) head plus discriminative (patch) head.
struct DualHeadPair {
    LinearParams global_head;
    LinearParams local_head;
};

enum class HeadPair { generator, utilizer };

/// Shared backbone with two dual-head classifiers: the generator pair trains
/// on clean labels and produces pseudo-labels; the utilizer pair trains on
/// pseudo-labels only.
struct DualModel {
    std::size_t d = 0;
    std::size_t num_classes = 0;
    Backbone backbone;
    DualHeadPair gen;
    DualHeadPair util;
};

inline DualModel make_dual_model(std::size_t d, std::size_t num_classes, std::size_t hidden_width,
                                 Rng& rng) {
    DualModel m;
    m.d = d;
    m.num_classes = num_classes;
    m.backbone = random_backbone(d, hidden_width, rng);
    const std::size_t h = m.backbone.out_dim(d);
    m.gen.global_head = random_linear(h, num_classes, rng);
    m.gen.local_head = random_linear(h, num_classes, rng);
    m.util.global_head = random_linear(h, num_classes, rng);
    m.util.local_head = random_linear(h, num_classes, rng);
    return m;
}

/// Gradient mirror of DualModel (LinearParams reused as plain shape-matched
/// buffers; backbone entry unused for the identity backbone).
struct ModelGrads {
    LinearParams backbone;
    LinearParams gen_global, gen_local, util_global, util_local;
};

inline ModelGrads zero_grads(const DualModel& m) {
    ModelGrads g;
    if (m.backbone.hidden_width > 0)
        g.backbone = LinearParams(m.backbone.hidden.d_in(), m.backbone.hidden.d_out());
    const std::size_t h = m.backbone.out_dim(m.d);
    g.gen_global = LinearParams(h, m.num_classes);
    g.gen_local = LinearParams(h, m.num_classes);
    g.util_global = LinearParams(h, m.num_classes);
    g.util_local = LinearParams(h, m.num_classes);
    return g;
}

/// Fixed tensor order shared by the optimizer, EMA and serialization:
/// [backbone.w, backbone.b,] gen_g.w, gen_g.b, gen_l.w, gen_l.b,
/// util_g.w, util_g.b, util_l.w, util_l.b.
inline std::vector<std::span<double>> param_tensors(DualModel& m) {
    std::vector<std::span<double>> t;
    if (m.backbone.hidden_width > 0) {
        t.emplace_back(m.backbone.hidden.w.data);
        t.emplace_back(m.backbone.hidden.b);
    }
    for (DualHeadPair* pair : {&m.gen, &m.util}) {
        t.emplace_back(pair->global_head.w.data);
        t.emplace_back(pair->global_head.b);
        t.emplace_back(pair->local_head.w.data);
        t.emplace_back(pair->local_head.b);
    }
    return t;
}

inline std::vector<std::span<const double>> param_tensors(const DualModel& m) {
    std::vector<std::span<const double>> t;
    if (m.backbone.hidden_width > 0) {
        t.emplace_back(m.backbone.hidden.w.data);
        t.emplace_back(m.backbone.hidden.b);
    }
    for (const DualHeadPair* pair : {&m.gen, &m.util}) {
        t.emplace_back(pair->global_head.w.data);
        t.emplace_back(pair->global_head.b);
        t.emplace_back(pair->local_head.w.data);
        t.emplace_back(pair->local_head.b);
    }
    return t;
}

inline std::vector<std::span<const double>> grad_tensors(const ModelGrads& g, bool has_backbone) {
    std::vector<std::span<const double>> t;
    if (has_backbone) {
        t.emplace_back(g.backbone.w.data);
        t.emplace_back(g.backbone.b);
    }
    for (const LinearParams* lp : {&g.gen_global, &g.gen_local, &g.util_global, &g.util_local}) {
        t.emplace_back(lp->w.data);
        t.emplace_back(lp->b);
    }
    return t;
}

/// Replace a model's parameters with an equally shaped flat tensor list
/// (used to materialize EMA shadows for prediction).
inline DualModel with_tensors(const DualModel& proto, std::span<const std::vector<double>> tensors) {
    DualModel m = proto;
    auto views = param_tensors(m);
    if (views.size() != tensors.size()) throw dim_error("with_tensors: tensor count mismatch");
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (views[i].size() != tensors[i].size()) throw dim_error("with_tensors: tensor size mismatch");
        std::copy(tensors[i].begin(), tensors[i].end(), views[i].begin());
    }
    return m;
}

struct PairForwardCache {
    BackboneForward backbone_global;
    BackboneForward backbone_patches;
    DenseMatrix probs_global;   // B x K
    DenseMatrix probs_patches;  // (B*n) x K
    DenseMatrix agg_weights;    // (B*n) x K
    DenseMatrix p_local;        // B x K
    DenseMatrix p_final;        // B x K
};

inline const DualHeadPair& heads_of(const DualModel& m, HeadPair which) {
    return which == HeadPair::generator ? m.gen : m.util;
}

inline PairForwardCache pair_forward(const DualModel& m, HeadPair which, const InstanceBlock& block,
                                     double alpha) {
    const DualHeadPair& heads = heads_of(m, which);
    PairForwardCache c;
    c.backbone_global = backbone_forward(m.backbone, block.global);
    c.backbone_patches = backbone_forward(m.backbone, block.patches);
    c.probs_global = sigmoid(linear_forward(heads.global_head, c.backbone_global.act));
    c.probs_patches = sigmoid(linear_forward(heads.local_head, c.backbone_patches.act));
    c.p_local = aggregate_patches_batch(c.probs_patches, block.n, alpha, &c.agg_weights);
    c.p_final = DenseMatrix(c.probs_global.rows, c.probs_global.cols);
    for (std::size_t i = 0; i < c.p_final.data.size(); ++i)
        c.p_final.data[i] = 0.5 * (c.probs_global.data[i] + c.p_local.data[i]);
    return c;
}

/// Final fused probabilities of one head pair on a batch.
inline DenseMatrix pair_final_probs(const DualModel& m, HeadPair which, const InstanceBlock& block,
                                    double alpha) {
    return pair_forward(m, which, block, alpha).p_final;
}

struct DualPrediction {
    std::vector<double> global;  // correlative head probs
    std::vector<double> local;   // aggregated patch probs
    std::vector<double> fused;   // elementwise mean of the two
};

inline DualPrediction dual_predict(const PatchedInstance& inst, const DualModel& m, HeadPair which,
                                   double alpha) {
    InstanceBlock block;
    block.n = inst.patches.rows;
    block.global = DenseMatrix(1, inst.global.size());
    std::copy(inst.global.begin(), inst.global.end(), block.global.data.begin());
    block.patches = inst.patches;
    const PairForwardCache c = pair_forward(m, which, block, alpha);
    DualPrediction p;
    p.global.assign(c.probs_global.data.begin(), c.probs_global.data.end());
    p.local.assign(c.p_local.data.begin(), c.p_local.data.end());
    p.fused.assign(c.p_final.data.begin(), c.p_final.data.end());
    return p;
}

/// Backpropagate d loss / d p_final through one head pair into `grads`.
/// Head gradients land in the pair's own slots; backbone gradients accumulate
/// regardless of the pair.
inline void pair_backward(const DualModel& m, HeadPair which, const InstanceBlock& block,
                          const PairForwardCache& c, const DenseMatrix& d_p_final, double alpha,
                          ModelGrads& grads) {
    const DualHeadPair& heads = heads_of(m, which);
    LinearParams& g_global = which == HeadPair::generator ? grads.gen_global : grads.util_global;
    LinearParams& g_local = which == HeadPair::generator ? grads.gen_local : grads.util_local;

    // global branch: d p_final / d p_global = 0.5, then sigmoid derivative
    DenseMatrix dz_g(c.probs_global.rows, c.probs_global.cols);
    for (std::size_t i = 0; i < dz_g.data.size(); ++i) {
        const double p = c.probs_global.data[i];
        dz_g.data[i] = 0.5 * d_p_final.data[i] * p * (1.0 - p);
    }
    DenseMatrix d_act_g = linear_backward(heads.global_head, c.backbone_global.act, dz_g, g_global);
    backbone_backward(m.backbone, block.global, c.backbone_global, d_act_g, grads.backbone);

    // patch branch: through the softmax-weighted aggregation, then sigmoid
    const std::size_t n = block.n;
    const std::size_t b = c.p_local.rows;
    const std::size_t k_count = c.p_local.cols;
    DenseMatrix dz_p(c.probs_patches.rows, c.probs_patches.cols);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < k_count; ++k) {
            const double upstream = 0.5 * d_p_final(i, k);
            const double agg = c.p_local(i, k);
            for (std::size_t o = 0; o < n; ++o) {
                const double p = c.probs_patches(i * n + o, k);
                const double w = c.agg_weights(i * n + o, k);
                const double d_agg_dp = w * (1.0 + (p - agg) / alpha);
                dz_p(i * n + o, k) = upstream * d_agg_dp * p * (1.0 - p);
            }
        }
    }
    DenseMatrix d_act_p = linear_backward(heads.local_head, c.backbone_patches.act, dz_p, g_local);
    backbone_backward(m.backbone, block.patches, c.backbone_patches, d_act_p, grads.backbone);
}

enum class LossKind { asl, bce };

struct LossSpec {
    LossKind kind = LossKind::asl;
    AslConfig asl;
};

inline double loss_element(double p, double y, const LossSpec& spec, double& dldp) {
    if (spec.kind == LossKind::bce) return bce_element(p, y, spec.asl.clamp_eps, dldp);
    return asl_element(p, y, spec.asl, dldp);
}

struct D2lLossResult {
    double loss_labeled = 0.0;
    double loss_unlabeled = 0.0;
    ModelGrads grads;
};

/// Joint objective of one update step. The labeled term is evaluated on the
/// generator pair against true labels, the unlabeled term on the utilizer
/// pair against pseudo-labels; gradients reach the backbone from both terms
/// but each head pair only from its own term. Batches are expected to be
/// strong-augmented already; pseudo-label generation happens elsewhere and is
/// gradient-free.
inline D2lLossResult d2l_losses(const DualModel& m, const InstanceBlock& labeled,
                                const LabelMatrix& labels, const InstanceBlock& unlabeled,
                                const LabelMatrix& pseudo_labels, double alpha,
                                const LossSpec& spec) {
    D2lLossResult out;
    out.grads = zero_grads(m);

    if (labeled.size() > 0) {
        if (labels.rows != labeled.size() || labels.cols != m.num_classes)
            throw dim_error("d2l_losses: labels mis-shaped for labeled batch");
        const PairForwardCache c = pair_forward(m, HeadPair::generator, labeled, alpha);
        DenseMatrix d_p(c.p_final.rows, c.p_final.cols);
        for (std::size_t i = 0; i < c.p_final.data.size(); ++i) {
            double dldp = 0.0;
            out.loss_labeled += loss_element(c.p_final.data[i], labels.data[i], spec, dldp);
            d_p.data[i] = dldp;
        }
        pair_backward(m, HeadPair::generator, labeled, c, d_p, alpha, out.grads);
    }

    if (unlabeled.size() > 0) {
        if (pseudo_labels.rows != unlabeled.size() || pseudo_labels.cols != m.num_classes)
            throw dim_error("d2l_losses: pseudo-labels missing or mis-shaped for unlabeled batch");
        const PairForwardCache c = pair_forward(m, HeadPair::utilizer, unlabeled, alpha);
        DenseMatrix d_p(c.p_final.rows, c.p_final.cols);
        for (std::size_t i = 0; i < c.p_final.data.size(); ++i) {
            double dldp = 0.0;
            out.loss_unlabeled += loss_element(c.p_final.data[i], pseudo_labels.data[i], spec, dldp);
            d_p.data[i] = dldp;
        }
        pair_backward(m, HeadPair::utilizer, unlabeled, c, d_p, alpha, out.grads);
    }
    return out;
}

}  // namespace ssmll
