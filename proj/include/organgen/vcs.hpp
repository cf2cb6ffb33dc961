#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>

#include "organgen/errors.hpp"

#include <json.hpp>

namespace organgen {

// Habitus-decoupled volume control. The expected organ volume is a linear
// function of body volume, V_hat(V_B) = a * V_B + b; the control scalar is
// the standardized residual v = ((V_ref - V_hat(V_B)) - mu) / sigma.
//
// mu is zero to machine precision when the statistics are taken on the
// same split the line was fit on (OLS residuals have zero mean); it is kept
// because statistics may be refit on other splits.
struct VcsModel {
    std::string organ;
    double a = 0.0;      // slope, mL per mL of body volume
    double b = 0.0;      // intercept, mL
    double mu = 0.0;     // residual mean, mL
    double sigma = 0.0;  // residual sample standard deviation (n-1), mL
    int n_fit = 0;

    void validate() const {
        if (n_fit < 3) throw NumericError("VcsModel: n_fit must be >= 3");
        if (!(sigma > 0.0)) throw NumericError("VcsModel: sigma must be > 0");
    }
};

inline VcsModel fit_vcs(std::span<const double> body_volumes,
                        std::span<const double> organ_volumes,
                        const std::string& organ = "", double sigma_floor_ml = 1e-9) {
    if (body_volumes.size() != organ_volumes.size())
        throw NumericError("fit_vcs: length mismatch (" + std::to_string(body_volumes.size()) +
                           " vs " + std::to_string(organ_volumes.size()) + ")");
    const std::size_t n = body_volumes.size();
    if (n < 3) throw NumericError("fit_vcs: need at least 3 cases, got " + std::to_string(n));

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += body_volumes[i];
        my += organ_volumes[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = body_volumes[i] - mx;
        sxx += dx * dx;
        sxy += dx * (organ_volumes[i] - my);
    }
    if (sxx == 0.0) throw NumericError("fit_vcs: body volumes have zero variance");

    VcsModel m;
    m.organ = organ;
    m.a = sxy / sxx;
    m.b = my - m.a * mx;
    m.n_fit = static_cast<int>(n);

    double rsum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        rsum += organ_volumes[i] - (m.a * body_volumes[i] + m.b);
    m.mu = rsum / static_cast<double>(n);

    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = organ_volumes[i] - (m.a * body_volumes[i] + m.b) - m.mu;
        ss += r * r;
    }
    m.sigma = std::sqrt(ss / static_cast<double>(n - 1));
    if (m.sigma < sigma_floor_ml)
        throw NumericError("fit_vcs: degenerate residual spread (sigma = " +
                           std::to_string(m.sigma) + " mL); volume control is undefined");
    return m;
}

inline double vcs_of(double v_ref_ml, double v_body_ml, const VcsModel& m) {
    m.validate();
    const double residual = v_ref_ml - (m.a * v_body_ml + m.b);
    return (residual - m.mu) / m.sigma;
}

// Inverse of vcs_of: the organ volume that realizes control value v for a
// given body. Physically impossible negative requests clamp to zero.
inline double target_volume_of(double v, double v_body_ml, const VcsModel& m) {
    m.validate();
    const double vol = m.a * v_body_ml + m.b + m.mu + v * m.sigma;
    if (vol < 0.0) {
        std::fprintf(stderr, "warn: requested control %.4g implies negative volume %.4g mL; clamping to 0\n",
                     v, vol);
        return 0.0;
    }
    return vol;
}

inline nlohmann::json vcs_to_json(const VcsModel& m) {
    return nlohmann::json{{"organ", m.organ}, {"a", m.a},         {"b", m.b},
                          {"mu", m.mu},       {"sigma", m.sigma}, {"n_fit", m.n_fit}};
}

inline VcsModel vcs_from_json(const nlohmann::json& j) {
    VcsModel m;
    try {
        m.organ = j.at("organ").get<std::string>();
        m.a = j.at("a").get<double>();
        m.b = j.at("b").get<double>();
        m.mu = j.at("mu").get<double>();
        m.sigma = j.at("sigma").get<double>();
        m.n_fit = j.at("n_fit").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("VcsModel JSON: ") + e.what());
    }
    m.validate();
    return m;
}

}  // namespace organgen
