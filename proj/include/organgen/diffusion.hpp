#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "organgen/grid.hpp"
#include "organgen/rng.hpp"

namespace organgen {

// Linear-beta DDPM schedule tables. Timesteps are 1-based; alpha_bar(0) = 1
// by convention.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] for t in 1..T
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s

    double alpha_bar_at(int t) const {
        if (t < 0 || t > T) throw NumericError("NoiseSchedule: t out of range");
        return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t) - 1];
    }
    double beta_at(int t) const {
        if (t < 1 || t > T) throw NumericError("NoiseSchedule: t out of range");
        return beta[static_cast<std::size_t>(t) - 1];
    }
};

inline NoiseSchedule make_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02) {
    if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.beta[t] = T == 1 ? beta_start
                           : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                              static_cast<double>(T - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

// Conditioning signals for one denoising call. Absent grids are uniform
// -tau ("nothing here"); an absent v means identity FiLM modulation.
struct Conditioning {
    ScalarGrid body;
    ScalarGrid context;
    double v = 0.0;
    bool body_present = true;
    bool context_present = true;
    bool v_present = true;
};

inline Conditioning make_conditioning(ScalarGrid body_sdf, ScalarGrid context_sdf, double v) {
    require_same_layout(body_sdf.dims, body_sdf.spacing_mm, context_sdf.dims,
                        context_sdf.spacing_mm, "make_conditioning");
    Conditioning c;
    c.body = std::move(body_sdf);
    c.context = std::move(context_sdf);
    c.v = v;
    return c;
}

// Forward process sample x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline ScalarGrid q_sample(const ScalarGrid& x0, int t, const ScalarGrid& noise,
                           const NoiseSchedule& s) {
    if (t < 0 || t > s.T) throw NumericError("q_sample: t out of range");
    require_same_layout(x0.dims, x0.spacing_mm, noise.dims, noise.spacing_mm, "q_sample");
    const double abar = s.alpha_bar_at(t);
    const double c0 = std::sqrt(abar);
    const double cn = std::sqrt(1.0 - abar);
    ScalarGrid out(x0.dims, x0.spacing_mm);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = c0 * x0.values[i] + cn * noise.values[i];
    return out;
}

inline ScalarGrid sample_noise_grid(const GridDims& dims, double spacing_mm, Rng& rng) {
    ScalarGrid g(dims, spacing_mm);
    for (auto& v : g.values) v = rng.normal();
    return g;
}

// Training-time conditioning dropout: each signal independently dropped
// with probability p. Dropped grids become uniform -tau; a dropped v makes
// every FiLM head emit identity modulation. Inference never drops.
inline Conditioning drop_conditioning(const Conditioning& c, double p, Rng& rng,
                                      const SdfConfig& cfg) {
    if (!(p >= 0.0) || p >= 1.0) throw ConfigError("drop_conditioning: need 0 <= p < 1");
    cfg.validate();
    const bool drop_body = rng.bernoulli(p);
    const bool drop_context = rng.bernoulli(p);
    const bool drop_v = rng.bernoulli(p);
    Conditioning out = c;
    if (drop_body) {
        out.body = ScalarGrid(c.body.dims, c.body.spacing_mm, -cfg.truncation);
        out.body_present = false;
    }
    if (drop_context) {
        out.context = ScalarGrid(c.context.dims, c.context.spacing_mm, -cfg.truncation);
        out.context_present = false;
    }
    if (drop_v) {
        out.v = 0.0;
        out.v_present = false;
    }
    return out;
}

// One deterministic DDIM update (eta = 0). The caller supplies x0_hat
// already clamped to the SDF value range.
inline ScalarGrid ddim_step(const ScalarGrid& x_t, const ScalarGrid& x0_hat, int t, int t_prev,
                            const NoiseSchedule& s) {
    if (!(t > t_prev) || t_prev < 0) throw NumericError("ddim_step: need t > t_prev >= 0");
    require_same_layout(x_t.dims, x_t.spacing_mm, x0_hat.dims, x0_hat.spacing_mm, "ddim_step");
    const double abar_t = s.alpha_bar_at(t);
    const double abar_p = s.alpha_bar_at(t_prev);
    const double sa_t = std::sqrt(abar_t);
    const double sn_t = std::sqrt(1.0 - abar_t);
    const double sa_p = std::sqrt(abar_p);
    const double sn_p = std::sqrt(1.0 - abar_p);
    ScalarGrid out(x_t.dims, x_t.spacing_mm);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double eps_hat = (x_t.values[i] - sa_t * x0_hat.values[i]) / sn_t;
        out.values[i] = sa_p * x0_hat.values[i] + sn_p * eps_hat;
    }
    return out;
}

// Evenly spaced descending timestep ladder over {T..1}; always includes T,
// and sampling appends a final hop to t = 0.
inline std::vector<int> ddim_ladder(int T, int steps) {
    if (steps < 1) throw ConfigError("ddim_ladder: steps must be >= 1");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        const int t = static_cast<int>(std::lround(
            static_cast<double>(T) * static_cast<double>(steps - k) / static_cast<double>(steps)));
        if (t >= 1 && (ts.empty() || t < ts.back())) ts.push_back(t);
    }
    if (ts.empty() || ts.front() != T) ts.insert(ts.begin(), T);
    return ts;
}

using DenoiseFn =
    std::function<ScalarGrid(const ScalarGrid& x_t, const Conditioning& c, int t)>;

// Deterministic DDIM sampling from pure noise. The denoiser predicts the
// clean signal (x0 parameterization); predictions are clamped to
// [-tau, tau] before each update.
inline ScalarGrid ddim_sample(const DenoiseFn& denoiser, const Conditioning& c, int steps,
                              const NoiseSchedule& s, Rng& rng, const SdfConfig& cfg) {
    cfg.validate();
    const double tau = cfg.truncation;
    const auto ladder = ddim_ladder(s.T, steps);
    ScalarGrid x = sample_noise_grid(c.body.dims, c.body.spacing_mm, rng);
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        const int t = ladder[k];
        const int t_prev = k + 1 < ladder.size() ? ladder[k + 1] : 0;
        ScalarGrid x0_hat = denoiser(x, c, t);
        if (!(x0_hat.dims == x.dims))
            throw NumericError("ddim_sample: denoiser output dims " + x0_hat.dims.str() +
                               " do not match input " + x.dims.str());
        for (auto& v : x0_hat.values) v = std::clamp(v, -tau, tau);
        x = ddim_step(x, x0_hat, t, t_prev, s);
    }
    ensure_finite(x, "ddim_sample");
    return x;
}

}  // namespace organgen
