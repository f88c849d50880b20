#pragma once

#include <algorithm>
#include <cmath>

#include "ssmll/matrix.hpp"

namespace ssmll {

/// Asymmetric loss configuration. gamma_pos/gamma_neg are the focusing
/// exponents for positive/negative labels, margin shifts easy negatives to
/// zero loss via p_m = max(p - margin, 0).
struct AslConfig {
    double gamma_pos = 0.0;
    double gamma_neg = 4.0;
    double margin = 0.05;
    double clamp_eps = 1e-7;  // probabilities clamped away from {0,1} before logs
};

enum class Reduction { sum, mean };

/// Per-element asymmetric loss and its derivative with respect to the
/// probability. The max(p - margin, 0) kink takes subgradient 0 at p = margin.
inline double asl_element(double p, double y, const AslConfig& c, double& dldp) {
    p = std::clamp(p, c.clamp_eps, 1.0 - c.clamp_eps);
    if (y > 0.5) {
        const double q = 1.0 - p;
        const double logp = std::log(p);
        const double w = std::pow(q, c.gamma_pos);
        dldp = (c.gamma_pos > 0.0 ? c.gamma_pos * std::pow(q, c.gamma_pos - 1.0) * logp : 0.0) - w / p;
        return -w * logp;
    }
    const double pm = p - c.margin;
    if (pm <= 0.0) {
        dldp = 0.0;
        return 0.0;
    }
    const double log1m = std::log(1.0 - pm);
    const double w = std::pow(pm, c.gamma_neg);
    dldp = (c.gamma_neg > 0.0 ? -c.gamma_neg * std::pow(pm, c.gamma_neg - 1.0) * log1m : 0.0) +
           w / (1.0 - pm);
    return -w * log1m;
}

/// Binary cross-entropy per element; same clamp convention as ASL.
inline double bce_element(double p, double y, double clamp_eps, double& dldp) {
    p = std::clamp(p, clamp_eps, 1.0 - clamp_eps);
    if (y > 0.5) {
        dldp = -1.0 / p;
        return -std::log(p);
    }
    dldp = 1.0 / (1.0 - p);
    return -std::log(1.0 - p);
}

struct LossValueGrad {
    double loss = 0.0;
    DenseMatrix grad_logits;  // d loss / d z with p = sigmoid(z)
};

/// Summed (or mean) ASL over all entries; gradient w.r.t. logits via the
/// sigmoid derivative p(1-p) of the given probabilities.
inline LossValueGrad asl_loss(const ScoreMatrix& probs, const LabelMatrix& targets,
                              const AslConfig& cfg, Reduction red = Reduction::sum) {
    require_same_shape(probs, targets, "asl_loss");
    LossValueGrad out;
    out.grad_logits = DenseMatrix(probs.rows, probs.cols);
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
        double dldp = 0.0;
        out.loss += asl_element(probs.data[i], targets.data[i], cfg, dldp);
        const double p = probs.data[i];
        out.grad_logits.data[i] = dldp * p * (1.0 - p);
    }
    if (red == Reduction::mean && !probs.data.empty()) {
        const double inv = 1.0 / static_cast<double>(probs.data.size());
        out.loss *= inv;
        for (double& g : out.grad_logits.data) g *= inv;
    }
    return out;
}

/// Summed (or mean) BCE; the logit gradient reduces to p - y.
inline LossValueGrad bce_loss(const ScoreMatrix& probs, const LabelMatrix& targets,
                              double clamp_eps = 1e-7, Reduction red = Reduction::sum) {
    require_same_shape(probs, targets, "bce_loss");
    LossValueGrad out;
    out.grad_logits = DenseMatrix(probs.rows, probs.cols);
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
        double dldp = 0.0;
        out.loss += bce_element(probs.data[i], targets.data[i], clamp_eps, dldp);
        out.grad_logits.data[i] = probs.data[i] - targets.data[i];
    }
    if (red == Reduction::mean && !probs.data.empty()) {
        const double inv = 1.0 / static_cast<double>(probs.data.size());
        out.loss *= inv;
        for (double& g : out.grad_logits.data) g *= inv;
    }
    return out;
}

}  // namespace ssmll
