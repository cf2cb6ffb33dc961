#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "organgen/denoiser.hpp"
#include "organgen/parallel.hpp"
#include "organgen/sdf.hpp"
#include "organgen/vgf.hpp"

namespace organgen {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;

    void validate() const {
        if (!(lr >= 0.0)) throw ConfigError("AdamWConfig: lr must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("AdamWConfig: betas must be in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("AdamWConfig: eps must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("AdamWConfig: weight_decay must be >= 0");
    }
};

// AdamW with decoupled weight decay; moments kept in double so updates are
// identical regardless of the parameter precision in use.
template <class Real>
class AdamW {
  public:
    AdamW(AdamWConfig cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {
        cfg_.validate();
    }

    void update(std::vector<Real>& params, const std::vector<double>& grad) {
        if (params.size() != m_.size() || grad.size() != m_.size())
            throw std::runtime_error("AdamW::update: size mismatch");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i];
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
            const double mh = m_[i] / bc1;
            const double vh = v_[i] / bc2;
            const double theta = static_cast<double>(params[i]);
            params[i] = static_cast<Real>(
                theta - cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * theta));
        }
    }

  private:
    AdamWConfig cfg_;
    std::vector<double> m_, v_;
    long step_ = 0;
};

// One fully precomputed training case: grids the denoiser consumes plus the
// targets the losses compare against.
struct TrainItem {
    ScalarGrid body_sdf;
    ScalarGrid ctx_sdf;
    ScalarGrid ref_sdf;
    BinaryMask ref_mask;
    BinaryMask ctx_mask;
    double v_target = 0.0;
    double v_body_ml = 0.0;
};

// Builds a training case from reference masks: the context is the SDF
// max-composition of the organs placed before this one, and the volume
// scalar is the reference organ's standardized residual.
inline TrainItem make_train_item(const BinaryMask& body,
                                 const std::vector<const BinaryMask*>& prior_organs,
                                 const BinaryMask& ref, const VcsModel& m,
                                 const SdfConfig& sdf) {
    TrainItem it;
    it.body_sdf = sdf_from_mask(body, sdf);
    std::vector<ScalarGrid> prior_sdfs;
    prior_sdfs.reserve(prior_organs.size());
    it.ctx_mask = BinaryMask(body.dims, body.spacing_mm, false);
    for (const BinaryMask* o : prior_organs) {
        if (o == nullptr) throw std::runtime_error("make_train_item: null prior organ");
        require_same_layout(body.dims, body.spacing_mm, o->dims, o->spacing_mm,
                            "make_train_item(prior)");
        prior_sdfs.push_back(sdf_from_mask(*o, sdf));
        for (std::size_t i = 0; i < it.ctx_mask.bits.size(); ++i)
            if (o->bits[i]) it.ctx_mask.bits[i] = 1;
    }
    it.ctx_sdf = compose_context(prior_sdfs, sdf, body.dims, body.spacing_mm);
    require_same_layout(body.dims, body.spacing_mm, ref.dims, ref.spacing_mm,
                        "make_train_item(ref)");
    it.ref_sdf = sdf_from_mask(ref, sdf);
    it.ref_mask = ref;
    it.v_body_ml = volume_ml(body);
    it.v_target = vcs_of(volume_ml(ref), it.v_body_ml, m);
    return it;
}

struct TrainConfig {
    int epochs = 200;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double dropout_p = 0.3;
    int warmup_epochs = -1;  // epochs before the volume loss turns on; -1 = epochs/2
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    int threads = 1;
    LossConfig loss;

    void validate() const {
        if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
        if (!(lr >= 0.0)) throw ConfigError("TrainConfig: lr must be >= 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("TrainConfig: weight_decay must be >= 0");
        if (!(dropout_p >= 0.0) || dropout_p >= 1.0)
            throw ConfigError("TrainConfig: dropout_p must be in [0, 1)");
        if (!(val_fraction >= 0.0) || val_fraction >= 1.0)
            throw ConfigError("TrainConfig: val_fraction must be in [0, 1)");
        if (threads < 1) throw ConfigError("TrainConfig: threads must be >= 1");
        loss.validate();
    }

    int resolved_warmup() const { return warmup_epochs < 0 ? epochs / 2 : warmup_epochs; }
};

struct EpochRecord {
    int epoch = 0;
    LossReport train;
    LossReport val;
    bool has_val = false;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    bool diverged = false;
};

namespace detail {

inline LossReport mean_reports(const std::vector<LossReport>& reps) {
    LossReport m;
    if (reps.empty()) return m;
    for (const auto& r : reps) {
        m.l_sdf += r.l_sdf;
        m.l_bce += r.l_bce;
        m.l_ov += r.l_ov;
        m.l_vcs += r.l_vcs;
        m.total += r.total;
        m.vcs_on = m.vcs_on || r.vcs_on;
    }
    const double n = static_cast<double>(reps.size());
    m.l_sdf /= n;
    m.l_bce /= n;
    m.l_ov /= n;
    m.l_vcs /= n;
    m.total /= n;
    return m;
}

}  // namespace detail

// Full-batch training loop. All randomness (timestep, noise, dropout) comes
// from streams keyed by (seed, epoch, case), so histories are bit-identical
// across runs and thread counts; per-case gradients are reduced in case
// order. A non-finite epoch loss aborts and restores the last parameters
// that produced a finite loss.
template <class Real>
TrainResult train(DenoiserParams<Real>& params, const std::vector<TrainItem>& items,
                  const NoiseSchedule& sched, const VcsModel& vcs, const TrainConfig& tc,
                  const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
    tc.validate();
    if (items.empty()) throw DataError("train: no training cases");
    const auto n_val = static_cast<std::size_t>(tc.val_fraction * static_cast<double>(items.size()));
    const std::size_t n_train = items.size() - n_val;
    if (n_train == 0) throw ConfigError("train: validation split leaves no training cases");
    const int warmup = tc.resolved_warmup();

    AdamWConfig ac;
    ac.lr = tc.lr;
    ac.weight_decay = tc.weight_decay;
    AdamW<Real> opt(ac, params.flat.size());

    const std::size_t workers = max_workers(items.size(), tc.threads);
    std::vector<DenoiserNet<Real>> nets;
    nets.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) nets.emplace_back(params.cfg);

    std::vector<std::vector<Real>> case_grads(n_train);
    std::vector<LossReport> case_reps(n_train);
    std::vector<LossReport> val_reps(n_val);
    std::vector<double> mean_grad(params.flat.size());
    std::vector<Real> good = params.flat;  // last parameters with a finite loss

    TrainResult res;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const bool vcs_epoch = epoch >= warmup;
        bool finite = true;
        try {
            parallel_for(n_train, tc.threads, [&](std::size_t i, std::size_t w) {
                Rng rng = Rng::of(tc.seed, "train-case", static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(i));
                const TrainItem& it = items[i];
                const int t = 1 + static_cast<int>(rng.uniform_index(
                                      static_cast<std::uint64_t>(sched.T)));
                const ScalarGrid noise =
                    sample_noise_grid(it.ref_sdf.dims, it.ref_sdf.spacing_mm, rng);
                Conditioning cond = make_conditioning(it.body_sdf, it.ctx_sdf, it.v_target);
                cond = drop_conditioning(cond, tc.dropout_p, rng, tc.loss.sdf);
                const ScalarGrid x_t = q_sample(it.ref_sdf, t, noise, sched);
                LossTargets tgt;
                tgt.ref_sdf = &it.ref_sdf;
                tgt.ref_mask = &it.ref_mask;
                tgt.context_mask = &it.ctx_mask;
                tgt.v_target = it.v_target;
                tgt.v_body_ml = it.v_body_ml;
                tgt.vcs_active = vcs_epoch && cond.v_present;
                tgt.vcs = &vcs;
                case_reps[i] =
                    nets[w].loss_and_grad(params, x_t, cond, t, tgt, tc.loss, case_grads[i]);
            });
        } catch (const NumericError&) {
            finite = false;
        }
        if (finite) {
            for (const auto& r : case_reps)
                if (!std::isfinite(r.total)) finite = false;
        }
        if (!finite) {
            params.flat = good;
            res.diverged = true;
            break;
        }

        std::fill(mean_grad.begin(), mean_grad.end(), 0.0);
        for (std::size_t i = 0; i < n_train; ++i)
            for (std::size_t j = 0; j < mean_grad.size(); ++j)
                mean_grad[j] += static_cast<double>(case_grads[i][j]);
        const double inv_n = 1.0 / static_cast<double>(n_train);
        for (auto& g : mean_grad) g *= inv_n;

        good = params.flat;
        opt.update(params.flat, mean_grad);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train = detail::mean_reports(case_reps);
        rec.has_val = n_val > 0;
        if (n_val > 0) {
            parallel_for(n_val, tc.threads, [&](std::size_t i, std::size_t w) {
                Rng rng = Rng::of(tc.seed, "val-case", static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(i));
                const TrainItem& it = items[n_train + i];
                const int t = 1 + static_cast<int>(rng.uniform_index(
                                      static_cast<std::uint64_t>(sched.T)));
                const ScalarGrid noise =
                    sample_noise_grid(it.ref_sdf.dims, it.ref_sdf.spacing_mm, rng);
                const Conditioning cond =
                    make_conditioning(it.body_sdf, it.ctx_sdf, it.v_target);
                const ScalarGrid x_t = q_sample(it.ref_sdf, t, noise, sched);
                const ScalarGrid pred = nets[w].forward(params, x_t, cond, t);
                const ScalarGrid occ = occupancy(pred, tc.loss.sdf);
                LossReport r;
                r.vcs_on = vcs_epoch;
                r.l_sdf = tc.loss.weights.sdf * loss_sdf(pred, it.ref_sdf);
                r.l_bce = tc.loss.weights.bce * loss_bce(occ, it.ref_mask, tc.loss);
                r.l_ov = tc.loss.weights.overlap * loss_overlap(occ, it.ctx_mask, tc.loss);
                if (vcs_epoch)
                    r.l_vcs = tc.loss.weights.vcs *
                              loss_vcs(occ, it.v_target, it.v_body_ml, vcs);
                r.total = r.l_sdf + r.l_bce + r.l_ov + r.l_vcs;
                val_reps[i] = r;
            });
            rec.val = detail::mean_reports(val_reps);
        }
        res.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return res;
}

// --- checkpoints -----------------------------------------------------------
// Layout: "DNP1" | u32 header-json length | header json | u64 parameter
// count | f32 little-endian parameter payload. The header carries everything
// needed to re-instantiate sampling (model, schedule, sdf and volume-model
// settings) plus the tail of the loss history.

struct Checkpoint {
    std::string organ;
    int epoch = 0;
    DenoiserConfig denoiser;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    SdfConfig sdf;
    VcsModel vcs;
    std::vector<LossReport> loss_tail;
    std::vector<float> params;
};

namespace detail {

inline nlohmann::json report_to_json(const LossReport& r) {
    return nlohmann::json{{"l_sdf", r.l_sdf}, {"l_bce", r.l_bce}, {"l_ov", r.l_ov},
                          {"l_vcs", r.l_vcs}, {"total", r.total}, {"vcs_on", r.vcs_on}};
}

inline LossReport report_from_json(const nlohmann::json& j) {
    LossReport r;
    r.l_sdf = j.at("l_sdf").get<double>();
    r.l_bce = j.at("l_bce").get<double>();
    r.l_ov = j.at("l_ov").get<double>();
    r.l_vcs = j.at("l_vcs").get<double>();
    r.total = j.at("total").get<double>();
    r.vcs_on = j.at("vcs_on").get<bool>();
    return r;
}

}  // namespace detail

template <class Real>
Checkpoint make_checkpoint(const DenoiserParams<Real>& p, const NoiseSchedule& sched,
                           const SdfConfig& sdf, const VcsModel& vcs, const std::string& organ,
                           int epoch, const std::vector<EpochRecord>& history,
                           std::size_t tail = 8) {
    Checkpoint c;
    c.organ = organ;
    c.epoch = epoch;
    c.denoiser = p.cfg;
    c.T = sched.T;
    c.beta_start = sched.beta.front();
    c.beta_end = sched.beta.back();
    c.sdf = sdf;
    c.vcs = vcs;
    const std::size_t from = history.size() > tail ? history.size() - tail : 0;
    for (std::size_t i = from; i < history.size(); ++i)
        c.loss_tail.push_back(history[i].train);
    c.params.assign(p.flat.size(), 0.0f);
    for (std::size_t i = 0; i < p.flat.size(); ++i)
        c.params[i] = static_cast<float>(p.flat[i]);
    return c;
}

template <class Real>
DenoiserParams<Real> params_from_checkpoint(const Checkpoint& c) {
    DenoiserParams<Real> p(c.denoiser);
    if (c.params.size() != p.flat.size())
        throw DataError("checkpoint: parameter payload length " +
                        std::to_string(c.params.size()) + " does not match config count " +
                        std::to_string(p.flat.size()));
    for (std::size_t i = 0; i < p.flat.size(); ++i) p.flat[i] = static_cast<Real>(c.params[i]);
    return p;
}

inline NoiseSchedule schedule_from_checkpoint(const Checkpoint& c) {
    return make_schedule(c.T, c.beta_start, c.beta_end);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    if (c.params.size() != param_count(c.denoiser))
        throw DataError("checkpoint: payload length does not match config count");
    nlohmann::json j{
        {"organ", c.organ},
        {"epoch", c.epoch},
        {"denoiser",
         {{"widths", c.denoiser.widths},
          {"t_embed_dim", c.denoiser.t_embed_dim},
          {"v_embed_dim", c.denoiser.v_embed_dim},
          {"io_scale", c.denoiser.io_scale}}},
        {"schedule", {{"T", c.T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
        {"sdf",
         {{"truncation", c.sdf.truncation},
          {"occupancy_sharpness", c.sdf.occupancy_sharpness}}},
        {"vcs", vcs_to_json(c.vcs)},
    };
    j["loss_tail"] = nlohmann::json::array();
    for (const auto& r : c.loss_tail) j["loss_tail"].push_back(detail::report_to_json(r));
    const std::string header = j.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open for write: " + path);
    detail::write_bytes(f, "DNP1", 4);
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(header.size()));
    detail::write_bytes(f, header.data(), header.size());
    detail::write_pod<std::uint64_t>(f, static_cast<std::uint64_t>(c.params.size()));
    detail::write_bytes(f, c.params.data(), c.params.size() * sizeof(float));
    if (!f) throw DataError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open: " + path);
    char magic[4];
    if (!f.read(magic, 4)) throw DataError("checkpoint: truncated file " + path);
    if (std::memcmp(magic, "DNP1", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const auto hlen = detail::read_pod<std::uint32_t>(f, path);
    std::string header(hlen, '\0');
    if (!f.read(header.data(), hlen)) throw DataError("checkpoint: truncated header in " + path);

    Checkpoint c;
    try {
        const nlohmann::json j = nlohmann::json::parse(header);
        c.organ = j.at("organ").get<std::string>();
        c.epoch = j.at("epoch").get<int>();
        const auto& dj = j.at("denoiser");
        c.denoiser.widths = dj.at("widths").get<std::vector<int>>();
        c.denoiser.t_embed_dim = dj.at("t_embed_dim").get<int>();
        c.denoiser.v_embed_dim = dj.at("v_embed_dim").get<int>();
        c.denoiser.io_scale = dj.at("io_scale").get<double>();
        const auto& sj = j.at("schedule");
        c.T = sj.at("T").get<int>();
        c.beta_start = sj.at("beta_start").get<double>();
        c.beta_end = sj.at("beta_end").get<double>();
        const auto& fj = j.at("sdf");
        c.sdf.truncation = fj.at("truncation").get<double>();
        c.sdf.occupancy_sharpness = fj.at("occupancy_sharpness").get<double>();
        c.vcs = vcs_from_json(j.at("vcs"));
        if (j.contains("loss_tail"))
            for (const auto& rj : j.at("loss_tail"))
                c.loss_tail.push_back(detail::report_from_json(rj));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: malformed header in " + path + ": " + e.what());
    }
    c.denoiser.validate();
    c.sdf.validate();

    const auto count = detail::read_pod<std::uint64_t>(f, path);
    if (count != param_count(c.denoiser))
        throw DataError("checkpoint: parameter payload length " + std::to_string(count) +
                        " does not match config count " +
                        std::to_string(param_count(c.denoiser)) + " in " + path);
    c.params.resize(count);
    if (!f.read(reinterpret_cast<char*>(c.params.data()),
                static_cast<std::streamsize>(count * sizeof(float))))
        throw DataError("checkpoint: truncated payload in " + path);
    char extra;
    if (f.read(&extra, 1)) throw DataError("checkpoint: trailing bytes in " + path);
    for (float v : c.params)
        if (!std::isfinite(v)) throw DataError("checkpoint: non-finite parameter in " + path);
    return c;
}

}  // namespace organgen
