#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "difftrace/hash.hpp"

namespace difftrace {

/// Variance schedule of a discrete denoising chain of length T.
/// Timesteps are 1-based: t in [1, T]; alpha_bar_prev(1) == 1 by convention.
/// Tables are kept in double regardless of the tensor scalar type so the
/// algebraic identities hold to 1e-12.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // beta_t, t = 1..T
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{i<=t} alpha_i
    std::vector<double> sigmas;      // posterior std of the reverse transition

    double beta(int t) const { return betas[check(t) - 1]; }
    double alpha(int t) const { return alphas[check(t) - 1]; }
    double alpha_bar(int t) const { return alpha_bars[check(t) - 1]; }
    double alpha_bar_prev(int t) const { return check(t) > 1 ? alpha_bars[t - 2] : 1.0; }
    double sigma(int t) const { return sigmas[check(t) - 1]; }

    /// Coefficient of the predicted noise inside the reverse-transition mean.
    double eps_coef(int t) const { return (1.0 - alpha(t)) / std::sqrt(1.0 - alpha_bar(t)); }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a64(&T, sizeof(T));
        h = fnv1a64(betas.data(), betas.size() * sizeof(double), h);
        return h;
    }

    int check(int t) const {
        if (t < 1 || t > T) throw std::invalid_argument("NoiseSchedule: timestep out of range");
        return t;
    }

    void validate() const {
        constexpr double tol = 1e-12;
        if (T < 2 || int(betas.size()) != T) throw std::invalid_argument("NoiseSchedule: bad T");
        double prev_bar = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double b = betas[t - 1];
            if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("NoiseSchedule: beta out of (0,1)");
            const double bar = alpha_bars[t - 1];
            if (!(bar > 0.0 && bar < 1.0) || bar >= prev_bar)
                throw std::invalid_argument("NoiseSchedule: alpha_bar not strictly decreasing in (0,1)");
            if (std::abs(alphas[t - 1] * prev_bar - bar) > tol)
                throw std::invalid_argument("NoiseSchedule: alpha_bar product identity violated");
            const double want = (1.0 - alphas[t - 1]) * (1.0 - (t > 1 ? alpha_bars[t - 2] : 1.0)) /
                                (1.0 - bar);
            if (std::abs(sigmas[t - 1] * sigmas[t - 1] - want) > tol)
                throw std::invalid_argument("NoiseSchedule: sigma identity violated");
            prev_bar = bar;
        }
    }
};

inline NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw std::invalid_argument("make_linear_schedule: need T >= 2");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    s.sigmas.resize(T);
    const double step = (beta_end - beta_start) / double(T - 1);
    double bar = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = beta_start + step * double(t - 1);
        const double a = 1.0 - b;
        const double bar_prev = bar;
        bar *= a;
        s.betas[t - 1] = b;
        s.alphas[t - 1] = a;
        s.alpha_bars[t - 1] = bar;
        s.sigmas[t - 1] = std::sqrt(b * (1.0 - bar_prev) / (1.0 - bar));
    }
    s.validate();
    return s;
}

}  // namespace difftrace
