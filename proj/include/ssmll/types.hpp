#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmll/matrix.hpp"

namespace ssmll {

enum class MetricType { fbeta, precision, recall };

// F_beta denominator convention: beta_squared is the standard
// (1+b^2)PR/(b^2 P+R); beta_linear keeps a plain b in the denominator
// and exists so either convention can be ablated.
enum class FBetaDenom { beta_squared, beta_linear };

struct MetricKind {
    MetricType type = MetricType::fbeta;
    double beta = 0.5;
    FBetaDenom denom = FBetaDenom::beta_squared;
};

inline MetricKind fbeta_metric(double beta) { return MetricKind{MetricType::fbeta, beta, FBetaDenom::beta_squared}; }
inline MetricKind precision_metric() { return MetricKind{MetricType::precision, 1.0, FBetaDenom::beta_squared}; }
inline MetricKind recall_metric() { return MetricKind{MetricType::recall, 1.0, FBetaDenom::beta_squared}; }

/// Uniform threshold grid {0, t, 2t, ...} with the final point clamped to 1.
struct GridSpec {
    double step = 0.01;

    std::vector<double> points() const {
        if (!(step > 0.0) || step > 1.0) throw config_error("grid step must be in (0, 1]");
        std::vector<double> pts;
        for (std::size_t i = 0;; ++i) {
            const double v = static_cast<double>(i) * step;
            if (v >= 1.0) break;
            pts.push_back(v);
        }
        pts.push_back(1.0);
        return pts;
    }
};

using ThresholdVector = std::vector<double>;

/// Per-class threshold search output. Classes with no positive labels are
/// assigned tau = 1 and flagged degenerate (achieved value 0 by convention).
struct MatSearchResult {
    ThresholdVector tau;
    std::vector<double> achieved;
    std::vector<std::uint8_t> degenerate;
};

struct CapResult {
    ThresholdVector tau;
    std::vector<std::uint8_t> degenerate;
};

inline std::string metric_name(const MetricKind& kind) {
    switch (kind.type) {
        case MetricType::precision: return "precision";
        case MetricType::recall: return "recall";
        case MetricType::fbeta: break;
    }
    return "fbeta";
}

}  // namespace ssmll
