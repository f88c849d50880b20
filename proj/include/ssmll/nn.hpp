#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssmll/matrix.hpp"
#include "ssmll/rng.hpp"

namespace ssmll {

/// One affine map, out = x . W + b. Weights are d_in x d_out.
/// Also reused as the gradient holder for a layer (same shapes).
struct LinearParams {
    DenseMatrix w;
    std::vector<double> b;

    LinearParams() = default;
    LinearParams(std::size_t d_in, std::size_t d_out) : w(d_in, d_out, 0.0), b(d_out, 0.0) {}

    std::size_t d_in() const { return w.rows; }
    std::size_t d_out() const { return w.cols; }
};

inline LinearParams random_linear(std::size_t d_in, std::size_t d_out, Rng& rng) {
    LinearParams p(d_in, d_out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_in > 0 ? d_in : 1));
    for (double& v : p.w.data) v = scale * rng.gaussian();
    return p;
}

inline DenseMatrix linear_forward(const LinearParams& params, const DenseMatrix& features) {
    if (features.cols != params.d_in()) throw dim_error("linear_forward: feature dim != d_in");
    DenseMatrix out = matmul(features, params.w);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* row = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < out.cols; ++j) row[j] += params.b[j];
    }
    return out;
}

/// Accumulates dW, db from upstream dOut and returns dX.
inline DenseMatrix linear_backward(const LinearParams& params, const DenseMatrix& x,
                                   const DenseMatrix& d_out, LinearParams& grads) {
    if (d_out.cols != params.d_out() || x.cols != params.d_in() || x.rows != d_out.rows)
        throw dim_error("linear_backward: shape mismatch");
    DenseMatrix dw = matmul_at_b(x, d_out);
    for (std::size_t i = 0; i < dw.data.size(); ++i) grads.w.data[i] += dw.data[i];
    std::vector<double> db = column_sums(d_out);
    for (std::size_t j = 0; j < db.size(); ++j) grads.b[j] += db[j];
    return matmul_a_bt(d_out, params.w);
}

/// Overflow-safe logistic, strictly inside (0,1) for |z| < ~36.
inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline DenseMatrix sigmoid(const DenseMatrix& logits) {
    DenseMatrix out(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.data.size(); ++i) out.data[i] = sigmoid(logits.data[i]);
    return out;
}

/// Shared feature extractor: identity when hidden_width == 0, otherwise one
/// relu(x.W + b) layer of the configured width.
struct Backbone {
    std::size_t hidden_width = 0;
    LinearParams hidden;  // unused when hidden_width == 0

    std::size_t out_dim(std::size_t d_in) const { return hidden_width == 0 ? d_in : hidden_width; }
};

inline Backbone random_backbone(std::size_t d_in, std::size_t hidden_width, Rng& rng) {
    Backbone b;
    b.hidden_width = hidden_width;
    if (hidden_width > 0) b.hidden = random_linear(d_in, hidden_width, rng);
    return b;
}

struct BackboneForward {
    DenseMatrix pre;  // pre-activation, empty for identity
    DenseMatrix act;  // backbone output
};

inline BackboneForward backbone_forward(const Backbone& bb, const DenseMatrix& x) {
    BackboneForward f;
    if (bb.hidden_width == 0) {
        f.act = x;
        return f;
    }
    f.pre = linear_forward(bb.hidden, x);
    f.act = f.pre;
    for (double& v : f.act.data) v = v > 0.0 ? v : 0.0;
    return f;
}

/// Accumulates hidden-layer grads; input gradient is not needed anywhere.
inline void backbone_backward(const Backbone& bb, const DenseMatrix& x, const BackboneForward& fwd,
                              const DenseMatrix& d_act, LinearParams& grads) {
    if (bb.hidden_width == 0) return;
    DenseMatrix d_pre = d_act;
    for (std::size_t i = 0; i < d_pre.data.size(); ++i)
        if (fwd.pre.data[i] <= 0.0) d_pre.data[i] = 0.0;
    DenseMatrix dw = matmul_at_b(x, d_pre);
    for (std::size_t i = 0; i < dw.data.size(); ++i) grads.w.data[i] += dw.data[i];
    std::vector<double> db = column_sums(d_pre);
    for (std::size_t j = 0; j < db.size(); ++j) grads.b[j] += db[j];
}

}  // namespace ssmll
