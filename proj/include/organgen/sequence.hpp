#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "organgen/cohort.hpp"
#include "organgen/denoiser.hpp"
#include "organgen/metrics.hpp"
#include "organgen/training.hpp"

namespace organgen {

// Everything needed to sample one organ. `denoise` may wrap a trained
// network or a test oracle; schedule/SDF/volume-model settings normally come
// from the organ's checkpoint.
struct OrganSampler {
    NoiseSchedule sched;
    SdfConfig sdf;
    VcsModel vcs;
    DenoiseFn denoise;
};

struct OrganRequest {
    std::string name;
    double v = 0.0;  // requested volume scalar; 0 when not specified
};

struct GenerationPlan {
    std::vector<OrganRequest> order;  // fixed generation order, largest first
    int ddim_steps = 10;

    void validate() const {
        if (ddim_steps < 1) throw ConfigError("GenerationPlan: ddim_steps must be >= 1");
        for (std::size_t i = 0; i < order.size(); ++i)
            for (std::size_t j = i + 1; j < order.size(); ++j)
                if (order[i].name == order[j].name)
                    throw ConfigError("GenerationPlan: duplicate organ " + order[i].name);
    }
};

struct GeneratedOrgan {
    std::string name;
    BinaryMask mask;   // after clearing: inside the body, disjoint from context
    ScalarGrid sdf;    // SDF of the cleared mask
    double requested_v = 0.0;
    double realized_v = 0.0;  // standardized residual of the realized volume
    double volume_ml = 0.0;
    double preclear_overlap_dice = 0.0;  // Dice of the raw mask vs context
    double cleared_fraction = 0.0;       // fraction of raw voxels removed
    bool degenerate = false;             // cleared_fraction > 0.5
};

struct GeneratedAnatomy {
    BinaryMask body;
    std::vector<GeneratedOrgan> organs;
};

// Autoregressive multi-organ generation. The context starts empty; each
// sampled organ is thresholded, cleared against the body and the accumulated
// context (hard disjointness guarantee), then folded into the context SDF.
inline GeneratedAnatomy generate_anatomy(const BinaryMask& body, const GenerationPlan& plan,
                                         const std::map<std::string, OrganSampler>& samplers,
                                         Rng& rng) {
    plan.validate();
    if (body.count() == 0) throw DataError("generate_anatomy: empty body mask");
    for (const auto& req : plan.order)
        if (samplers.find(req.name) == samplers.end())
            throw ConfigError("generate_anatomy: no sampler for organ " + req.name);

    GeneratedAnatomy out;
    out.body = body;
    const double v_body = volume_ml(body);

    std::vector<ScalarGrid> ctx_sdfs;
    BinaryMask ctx_mask(body.dims, body.spacing_mm, false);
    for (const auto& req : plan.order) {
        const OrganSampler& os = samplers.at(req.name);
        const ScalarGrid body_sdf = sdf_from_mask(body, os.sdf);
        const ScalarGrid ctx_sdf =
            compose_context(ctx_sdfs, os.sdf, body.dims, body.spacing_mm);
        const Conditioning cond = make_conditioning(body_sdf, ctx_sdf, req.v);
        const ScalarGrid sampled =
            ddim_sample(os.denoise, cond, plan.ddim_steps, os.sched, rng, os.sdf);

        const BinaryMask raw = threshold(sampled);
        GeneratedOrgan g;
        g.name = req.name;
        g.requested_v = req.v;
        g.preclear_overlap_dice = dice(raw, ctx_mask);
        g.mask = BinaryMask(body.dims, body.spacing_mm, false);
        std::size_t kept = 0;
        for (std::size_t i = 0; i < raw.bits.size(); ++i) {
            if (!raw.bits[i]) continue;
            if (body.bits[i] && !ctx_mask.bits[i]) {
                g.mask.bits[i] = 1;
                ++kept;
            }
        }
        const std::size_t raw_n = raw.count();
        g.cleared_fraction =
            raw_n == 0 ? 0.0
                       : static_cast<double>(raw_n - kept) / static_cast<double>(raw_n);
        g.degenerate = g.cleared_fraction > 0.5;
        g.sdf = sdf_from_mask(g.mask, os.sdf);
        g.volume_ml = volume_ml(g.mask);
        g.realized_v = vcs_of(g.volume_ml, v_body, os.vcs);

        for (std::size_t i = 0; i < g.mask.bits.size(); ++i)
            if (g.mask.bits[i]) ctx_mask.bits[i] = 1;
        ctx_sdfs.push_back(g.sdf);
        out.organs.push_back(std::move(g));
    }
    return out;
}

// Checkpoint-backed sampler; holds the parameters and a single-thread
// network and hands out DenoiseFn closures over them. One instance must not
// be shared across threads (the network owns scratch buffers).
class CheckpointSampler {
  public:
    explicit CheckpointSampler(const Checkpoint& c)
        : params_(params_from_checkpoint<float>(c)),
          net_(std::make_unique<DenoiserNet<float>>(c.denoiser)) {
        sampler_.sched = schedule_from_checkpoint(c);
        sampler_.sdf = c.sdf;
        sampler_.vcs = c.vcs;
        sampler_.denoise = [this](const ScalarGrid& x, const Conditioning& cd, int t) {
            return net_->forward(params_, x, cd, t);
        };
    }
    const OrganSampler& sampler() const { return sampler_; }

  private:
    DenoiserParams<float> params_;
    std::unique_ptr<DenoiserNet<float>> net_;
    OrganSampler sampler_;
};

// Per-case volumes of a single organ generated at a fixed volume scalar.
// The noise stream is keyed by (seed, case) only, so every sweep point sees
// identical noise and differences isolate the conditioning effect.
inline std::vector<double> generate_organ_volumes(const std::vector<BinaryMask>& bodies,
                                                  const Checkpoint& ckpt,
                                                  const std::string& organ, double v,
                                                  int ddim_steps, std::uint64_t seed,
                                                  int threads) {
    if (bodies.empty()) throw DataError("generate_organ_volumes: no bodies");
    std::vector<double> vols(bodies.size(), 0.0);
    parallel_for(bodies.size(), threads, [&](std::size_t i, std::size_t) {
        CheckpointSampler cs(ckpt);
        GenerationPlan plan;
        plan.order = {{organ, v}};
        plan.ddim_steps = ddim_steps;
        std::map<std::string, OrganSampler> samplers{{organ, cs.sampler()}};
        Rng rng = Rng::of(seed, "cohort-sample", static_cast<std::uint64_t>(i));
        const GeneratedAnatomy anat = generate_anatomy(bodies[i], plan, samplers, rng);
        vols[i] = anat.organs.at(0).volume_ml;
    });
    return vols;
}

struct SweepPoint {
    double v = 0.0;
    double mean_ml = 0.0;
    double ci_lo_ml = 0.0;  // 95% normal interval for the mean
    double ci_hi_ml = 0.0;
    double delta_pct = std::numeric_limits<double>::quiet_NaN();  // vs the v=0 point
};

// Sweeps the volume scalar across the cohort with shared per-case noise.
inline std::vector<SweepPoint> vcs_sweep(const std::vector<BinaryMask>& bodies,
                                         const Checkpoint& ckpt, const std::string& organ,
                                         const std::vector<double>& vs, int ddim_steps,
                                         std::uint64_t seed, int threads) {
    if (vs.empty()) throw ConfigError("vcs_sweep: empty v grid");
    for (std::size_t i = 1; i < vs.size(); ++i)
        if (!(vs[i] > vs[i - 1])) throw ConfigError("vcs_sweep: v grid must be increasing");
    std::vector<SweepPoint> points;
    points.reserve(vs.size());
    for (const double v : vs) {
        const std::vector<double> vols =
            generate_organ_volumes(bodies, ckpt, organ, v, ddim_steps, seed, threads);
        SweepPoint p;
        p.v = v;
        p.mean_ml = mean(vols);
        const double half =
            1.96 * sample_std(vols) / std::sqrt(static_cast<double>(vols.size()));
        p.ci_lo_ml = p.mean_ml - half;
        p.ci_hi_ml = p.mean_ml + half;
        points.push_back(p);
    }
    for (const auto& p : points) {
        if (p.v != 0.0) continue;
        for (auto& q : points)
            q.delta_pct = p.mean_ml == 0.0
                              ? std::numeric_limits<double>::quiet_NaN()
                              : (q.mean_ml - p.mean_ml) / p.mean_ml * 100.0;
        break;
    }
    return points;
}

struct MatchResult {
    double v_star = 0.0;
    double w1_before = 0.0;  // training volumes vs target
    double w1_after = 0.0;   // generated-at-v* volumes vs target
    std::vector<SweepPoint> curve;          // per-v volume statistics
    std::vector<double> w1_curve;           // per-v W1 to the target
    double noise_floor_ml = 0.0;            // sd of volumes at v* / sqrt(n)
    bool flat_warning = false;              // curve range < 2x noise floor
};

// Grid-searches the volume scalar so generated volumes match a target
// distribution in Wasserstein-1; ties prefer the least-extreme scalar.
inline MatchResult match_cohort(const std::vector<double>& target_ml,
                                const std::vector<BinaryMask>& bodies, const Checkpoint& ckpt,
                                const std::string& organ, const std::vector<double>& train_ml,
                                double v_lo, double v_hi, double step, int ddim_steps,
                                std::uint64_t seed, int threads) {
    if (target_ml.empty()) throw DataError("match_cohort: empty target");
    if (train_ml.empty()) throw DataError("match_cohort: empty training volumes");
    if (!(step > 0.0)) throw ConfigError("match_cohort: step must be > 0");
    if (!(v_lo <= v_hi)) throw ConfigError("match_cohort: need v_lo <= v_hi");

    MatchResult res;
    res.w1_before = wasserstein1(train_ml, target_ml);

    double best_w1 = std::numeric_limits<double>::infinity();
    double best_sd = 0.0;
    std::size_t n_cases = bodies.size();
    for (int k = 0;; ++k) {
        const double v = v_lo + static_cast<double>(k) * step;
        if (v > v_hi + 1e-9) break;
        const std::vector<double> vols =
            generate_organ_volumes(bodies, ckpt, organ, v, ddim_steps, seed, threads);
        const double w1 = wasserstein1(vols, target_ml);
        SweepPoint p;
        p.v = v;
        p.mean_ml = mean(vols);
        const double half =
            1.96 * sample_std(vols) / std::sqrt(static_cast<double>(vols.size()));
        p.ci_lo_ml = p.mean_ml - half;
        p.ci_hi_ml = p.mean_ml + half;
        res.curve.push_back(p);
        res.w1_curve.push_back(w1);
        if (w1 < best_w1 || (w1 == best_w1 && std::abs(v) < std::abs(res.v_star))) {
            best_w1 = w1;
            res.v_star = v;
            best_sd = sample_std(vols);
        }
    }
    if (res.w1_curve.empty()) throw ConfigError("match_cohort: empty sweep grid");
    res.w1_after = best_w1;
    res.noise_floor_ml =
        best_sd / std::sqrt(static_cast<double>(n_cases == 0 ? 1 : n_cases));
    const auto [mn, mx] = std::minmax_element(res.w1_curve.begin(), res.w1_curve.end());
    res.flat_warning = (*mx - *mn) < 2.0 * res.noise_floor_ml;
    return res;
}

}  // namespace organgen
