#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ssmll/matrix.hpp"

namespace ssmll {

struct AdamwConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-tensor first/second moment buffers.
struct TensorAdamState {
    std::vector<double> m, v;
};

struct OptimizerState {
    AdamwConfig cfg;
    long long step = 0;
    std::vector<TensorAdamState> slots;

    static OptimizerState for_sizes(std::span<const std::size_t> sizes, AdamwConfig cfg = {}) {
        OptimizerState st;
        st.cfg = cfg;
        st.slots.reserve(sizes.size());
        for (std::size_t s : sizes) st.slots.push_back({std::vector<double>(s, 0.0), std::vector<double>(s, 0.0)});
        return st;
    }
};

struct AdamwBinding {
    std::size_t slot;
    std::span<double> param;
    std::span<const double> grad;
};

/// One decoupled-weight-decay Adam step over the bound tensors. The step
/// counter advances once per call; bias correction uses the shared counter.
inline void adamw_step(OptimizerState& st, std::span<const AdamwBinding> bindings) {
    st.step += 1;
    const AdamwConfig& c = st.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
    for (const AdamwBinding& b : bindings) {
        if (b.slot >= st.slots.size()) throw dim_error("adamw_step: slot out of range");
        TensorAdamState& ts = st.slots[b.slot];
        if (ts.m.size() != b.param.size() || b.param.size() != b.grad.size())
            throw dim_error("adamw_step: buffer/param/grad sizes differ");
        for (std::size_t i = 0; i < b.param.size(); ++i) {
            const double g = b.grad[i];
            ts.m[i] = c.beta1 * ts.m[i] + (1.0 - c.beta1) * g;
            ts.v[i] = c.beta2 * ts.v[i] + (1.0 - c.beta2) * g * g;
            const double mhat = ts.m[i] / bc1;
            const double vhat = ts.v[i] / bc2;
            b.param[i] = b.param[i] - c.lr * c.weight_decay * b.param[i] -
                         c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

/// Single-tensor convenience form.
inline void adamw_step(OptimizerState& st, std::vector<double>& params, const std::vector<double>& grads) {
    AdamwBinding b{0, std::span<double>(params), std::span<const double>(grads)};
    adamw_step(st, std::span<const AdamwBinding>(&b, 1));
}

/// Shadow copies updated as shadow <- decay*shadow + (1-decay)*param.
struct EmaState {
    double decay = 0.9997;
    std::vector<std::vector<double>> shadow;

    static EmaState from(std::span<const std::span<const double>> params, double decay) {
        if (!(decay >= 0.0 && decay < 1.0)) throw config_error("ema decay must be in [0, 1)");
        EmaState e;
        e.decay = decay;
        for (auto p : params) e.shadow.emplace_back(p.begin(), p.end());
        return e;
    }
};

inline void ema_update(EmaState& ema, std::span<const std::span<const double>> params) {
    if (ema.shadow.size() != params.size()) throw dim_error("ema_update: tensor count mismatch");
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& s = ema.shadow[t];
        auto p = params[t];
        if (s.size() != p.size()) throw dim_error("ema_update: tensor size mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = ema.decay * s[i] + (1.0 - ema.decay) * p[i];
    }
}

inline void ema_update(EmaState& ema, const std::vector<double>& params) {
    std::span<const double> view(params);
    ema_update(ema, std::span<const std::span<const double>>(&view, 1));
}

/// One-cycle style schedule: linear ramp from peak/25 to the peak over the
/// first 30% of planned steps, cosine decay to peak/100 afterward.
struct OneCycleSchedule {
    double peak_lr = 1e-4;
    long long total_steps = 1;

    double lr_at(long long step) const {
        if (total_steps <= 1) return peak_lr;
        const double ramp_end = 0.3 * static_cast<double>(total_steps);
        const double s = static_cast<double>(step);
        const double start_lr = peak_lr / 25.0;
        if (s <= ramp_end)
            return start_lr + (peak_lr - start_lr) * (ramp_end > 0.0 ? s / ramp_end : 1.0);
        const double tail = static_cast<double>(total_steps) - ramp_end;
        const double x = (s - ramp_end) / (tail > 0.0 ? tail : 1.0);
        const double floor_lr = peak_lr / 100.0;
        return floor_lr + (peak_lr - floor_lr) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
    }
};

}  // namespace ssmll
