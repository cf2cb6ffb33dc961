#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "organgen/diffusion.hpp"
#include "organgen/nn.hpp"
#include "organgen/vcs.hpp"

namespace organgen {

// x0-predicting denoiser: a small 3D U-net over [x_t; body sdf; context sdf],
// FiLM-modulated at every stage by a timestep + volume-scalar embedding.
// Parameters live in one flat vector described by a named block table, so the
// optimizer, checkpoints and finite-difference checks all see the same layout.
struct DenoiserConfig {
    std::vector<int> widths = {8, 16, 32};  // channels per resolution level
    int t_embed_dim = 32;                   // sinusoidal timestep embedding (even)
    int v_embed_dim = 32;                   // MLP embedding of the volume scalar
    double io_scale = 10.0;                 // inputs divided by this; output raw

    int depth() const { return static_cast<int>(widths.size()); }
    int divisor() const { return 1 << (depth() - 1); }

    // Output channels of the 2*depth-1 conv stages, finest -> coarsest -> finest.
    std::vector<int> stage_channels() const {
        std::vector<int> cs(widths.begin(), widths.end());
        for (int l = depth() - 2; l >= 0; --l) cs.push_back(widths[l]);
        return cs;
    }

    void validate() const {
        if (widths.empty()) throw ConfigError("DenoiserConfig: widths must be non-empty");
        for (int w : widths)
            if (w < 1) throw ConfigError("DenoiserConfig: widths must be >= 1");
        if (t_embed_dim < 4 || t_embed_dim % 2 != 0)
            throw ConfigError("DenoiserConfig: t_embed_dim must be even and >= 4");
        if (v_embed_dim < 1) throw ConfigError("DenoiserConfig: v_embed_dim must be >= 1");
        if (!(io_scale > 0.0)) throw ConfigError("DenoiserConfig: io_scale must be > 0");
    }
};

struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    int rows = 0, cols = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }
};

// Block order is part of the checkpoint format; do not reorder.
inline std::vector<ParamBlock> param_blocks(const DenoiserConfig& cfg) {
    cfg.validate();
    const int D = cfg.depth();
    const auto cs = cfg.stage_channels();
    const int de = cfg.t_embed_dim + cfg.v_embed_dim;
    std::vector<ParamBlock> bs;
    std::size_t off = 0;
    auto add = [&](const std::string& name, int rows, int cols) {
        bs.push_back(ParamBlock{name, off, rows, cols});
        off += bs.back().size();
    };
    add("conv_in.w", cfg.widths[0], 3 * 27);
    add("conv_in.b", cfg.widths[0], 1);
    for (int s = 1; s < D; ++s) {
        add("down" + std::to_string(s) + ".w", cfg.widths[s], cfg.widths[s - 1] * 27);
        add("down" + std::to_string(s) + ".b", cfg.widths[s], 1);
    }
    for (int l = D - 2; l >= 0; --l) {
        add("up" + std::to_string(l) + ".w", cfg.widths[l], cfg.widths[l + 1] * 27);
        add("up" + std::to_string(l) + ".b", cfg.widths[l], 1);
    }
    add("conv_out.w", 1, cfg.widths[0] * 27);
    add("conv_out.b", 1, 1);
    add("vmlp.w1", cfg.v_embed_dim, 1);
    add("vmlp.b1", cfg.v_embed_dim, 1);
    add("vmlp.w2", cfg.v_embed_dim, cfg.v_embed_dim);
    add("vmlp.b2", cfg.v_embed_dim, 1);
    for (std::size_t s = 0; s < cs.size(); ++s) {
        add("film" + std::to_string(s) + ".w", 2 * cs[s], de);
        add("film" + std::to_string(s) + ".b", 2 * cs[s], 1);
    }
    return bs;
}

inline std::size_t param_count(const DenoiserConfig& cfg) {
    const auto bs = param_blocks(cfg);
    return bs.back().offset + bs.back().size();
}

inline const ParamBlock& find_block(const std::vector<ParamBlock>& blocks,
                                    const std::string& name) {
    for (const auto& b : blocks)
        if (b.name == name) return b;
    throw std::runtime_error("find_block: unknown parameter block '" + name + "'");
}

template <class Real>
struct DenoiserParams {
    DenoiserConfig cfg;
    std::vector<ParamBlock> blocks;
    std::vector<Real> flat;

    explicit DenoiserParams(DenoiserConfig c)
        : cfg(std::move(c)), blocks(param_blocks(cfg)), flat(param_count(cfg), Real(0)) {}

    Eigen::Map<nn::Mat<Real>> block(const std::string& name) {
        const ParamBlock& b = find_block(blocks, name);
        return {flat.data() + b.offset, b.rows, b.cols};
    }
    Eigen::Map<const nn::Mat<Real>> block(const std::string& name) const {
        const ParamBlock& b = find_block(blocks, name);
        return {flat.data() + b.offset, b.rows, b.cols};
    }
};

// He-normal convolution / MLP weights, zero biases, zero FiLM heads (identity
// modulation at start) and zero output conv (initial prediction is exactly 0).
template <class Real>
void init_params(DenoiserParams<Real>& p, Rng& rng) {
    for (const auto& b : p.blocks) {
        Real* dst = p.flat.data() + b.offset;
        const bool conv_or_mlp = (b.name.find(".w") != std::string::npos) &&
                                 b.name.rfind("film", 0) != 0 && b.name != "conv_out.w";
        if (!conv_or_mlp || b.cols == 1) {
            for (std::size_t i = 0; i < b.size(); ++i) dst[i] = Real(0);
            continue;
        }
        const double std_dev = std::sqrt(2.0 / static_cast<double>(b.cols));
        for (std::size_t i = 0; i < b.size(); ++i)
            dst[i] = static_cast<Real>(rng.normal() * std_dev);
    }
}

// Every block drawn i.i.d. normal; exercises all paths in gradient checks.
template <class Real>
void randomize_params(DenoiserParams<Real>& p, Rng& rng, double scale) {
    for (auto& w : p.flat) w = static_cast<Real>(rng.normal() * scale);
}

struct LossWeights {
    double sdf = 1.0;
    double bce = 1.0;
    double overlap = 1.0;
    double vcs = 1.0;
};

struct LossConfig {
    LossWeights weights;
    SdfConfig sdf;              // occupancy sharpness for the soft-mask losses
    double bce_clamp = 1e-7;    // occupancy clamped to [clamp, 1-clamp] in BCE
    double overlap_eps = 1e-6;  // soft-Dice denominator epsilon

    void validate() const {
        sdf.validate();
        if (!(weights.sdf >= 0.0) || !(weights.bce >= 0.0) || !(weights.overlap >= 0.0) ||
            !(weights.vcs >= 0.0))
            throw ConfigError("LossConfig: loss weights must be >= 0");
        if (!(bce_clamp > 0.0) || !(bce_clamp < 0.5))
            throw ConfigError("LossConfig: bce_clamp must be in (0, 0.5)");
        if (!(overlap_eps > 0.0)) throw ConfigError("LossConfig: overlap_eps must be > 0");
    }
};

// Components are the weighted contributions actually optimized, so with the
// default unit weights they equal the raw losses and total is their exact sum.
struct LossReport {
    double l_sdf = 0.0;
    double l_bce = 0.0;
    double l_ov = 0.0;
    double l_vcs = 0.0;
    double total = 0.0;
    bool vcs_on = false;
};

struct LossTargets {
    const ScalarGrid* ref_sdf = nullptr;
    const BinaryMask* ref_mask = nullptr;
    const BinaryMask* context_mask = nullptr;
    double v_target = 0.0;
    double v_body_ml = 0.0;
    bool vcs_active = false;        // warmup passed and the scalar was not dropped
    const VcsModel* vcs = nullptr;  // required iff vcs_active
};

// --- standalone loss evaluators (double precision, shared by trainer reports
// --- and tests; the fused gradient path below mirrors this math exactly)

inline double loss_sdf(const ScalarGrid& pred, const ScalarGrid& ref) {
    require_same_layout(pred.dims, pred.spacing_mm, ref.dims, ref.spacing_mm, "loss_sdf");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i)
        s += std::abs(pred.values[i] - ref.values[i]);
    return s / static_cast<double>(pred.values.size());
}

inline double loss_bce(const ScalarGrid& pred_occ, const BinaryMask& ref,
                       const LossConfig& lc) {
    require_same_layout(pred_occ.dims, pred_occ.spacing_mm, ref.dims, ref.spacing_mm,
                        "loss_bce");
    const double lo = lc.bce_clamp, hi = 1.0 - lc.bce_clamp;
    double s = 0.0;
    for (std::size_t i = 0; i < pred_occ.values.size(); ++i) {
        const double p = std::clamp(pred_occ.values[i], lo, hi);
        s += ref.bits[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return s / static_cast<double>(pred_occ.values.size());
}

// Soft overlap of the prediction with already-placed organs: a Dice-style
// ratio that is 0 when the soft mask avoids the context entirely.
inline double loss_overlap(const ScalarGrid& pred_occ, const BinaryMask& ctx,
                           const LossConfig& lc) {
    require_same_layout(pred_occ.dims, pred_occ.spacing_mm, ctx.dims, ctx.spacing_mm,
                        "loss_overlap");
    double sum_p = 0.0, sum_ctx = 0.0, inter = 0.0;
    for (std::size_t i = 0; i < pred_occ.values.size(); ++i) {
        const double p = pred_occ.values[i];
        sum_p += p;
        if (ctx.bits[i]) {
            sum_ctx += 1.0;
            inter += p;
        }
    }
    return 2.0 * inter / (sum_p + sum_ctx + lc.overlap_eps);
}

inline double loss_vcs(const ScalarGrid& pred_occ, double v_target, double v_body_ml,
                       const VcsModel& m) {
    const double v_hat = vcs_of(soft_volume_ml(pred_occ), v_body_ml, m);
    const double d = v_hat - v_target;
    return d * d;
}

namespace detail {

struct StageSpec {
    int level = 0;      // resolution level of the stage output
    int cin = 0, cout = 0;
    bool down = false;  // averages-pools its input first
    bool up = false;    // nearest-upsamples its input first
    int skip_from = -1; // stage whose output is added after the activation
    std::string w, b, fw, fb;
};

inline std::vector<StageSpec> stage_specs(const DenoiserConfig& cfg) {
    const int D = cfg.depth();
    std::vector<StageSpec> ss;
    StageSpec s0;
    s0.level = 0;
    s0.cin = 3;
    s0.cout = cfg.widths[0];
    s0.w = "conv_in.w";
    s0.b = "conv_in.b";
    ss.push_back(s0);
    for (int d = 1; d < D; ++d) {
        StageSpec s;
        s.level = d;
        s.cin = cfg.widths[d - 1];
        s.cout = cfg.widths[d];
        s.down = true;
        s.w = "down" + std::to_string(d) + ".w";
        s.b = "down" + std::to_string(d) + ".b";
        ss.push_back(s);
    }
    for (int l = D - 2; l >= 0; --l) {
        StageSpec s;
        s.level = l;
        s.cin = cfg.widths[l + 1];
        s.cout = cfg.widths[l];
        s.up = true;
        s.skip_from = l;  // down-chain stage at the same level
        s.w = "up" + std::to_string(l) + ".w";
        s.b = "up" + std::to_string(l) + ".b";
        ss.push_back(s);
    }
    for (std::size_t i = 0; i < ss.size(); ++i) {
        ss[i].fw = "film" + std::to_string(i) + ".w";
        ss[i].fb = "film" + std::to_string(i) + ".b";
    }
    return ss;
}

}  // namespace detail

// Forward / exact reverse-mode engine. One instance per thread: it owns the
// activation trace and scratch buffers and reuses them across calls.
template <class Real>
class DenoiserNet {
  public:
    explicit DenoiserNet(DenoiserConfig cfg)
        : cfg_(std::move(cfg)), stages_(detail::stage_specs(cfg_)) {
        cfg_.validate();
        expected_params_ = param_count(cfg_);
        const std::size_t S = stages_.size();
        K_.resize(S);
        h0_.resize(S);
        h1_.resize(S);
        y_.resize(S);
        gamma_.resize(S);
        pending_.resize(S);
    }

    const DenoiserConfig& config() const { return cfg_; }

    ScalarGrid forward(const DenoiserParams<Real>& p, const ScalarGrid& x_t,
                       const Conditioning& c, int t) {
        run_forward(p, x_t, c, t);
        ScalarGrid out(x_t.dims, x_t.spacing_mm);
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = static_cast<double>(out_(0, static_cast<Eigen::Index>(i)));
        ensure_finite(out, "denoiser forward");
        return out;
    }

    // Runs forward, evaluates the composite loss against the targets, and
    // backpropagates exactly onto `grad` (resized to match the parameters).
    LossReport loss_and_grad(const DenoiserParams<Real>& p, const ScalarGrid& x_t,
                             const Conditioning& c, int t, const LossTargets& tgt,
                             const LossConfig& lc, std::vector<Real>& grad) {
        lc.validate();
        if (tgt.ref_sdf == nullptr || tgt.ref_mask == nullptr || tgt.context_mask == nullptr)
            throw std::runtime_error("loss_and_grad: null loss target");
        if (tgt.vcs_active && tgt.vcs == nullptr)
            throw ConfigError("loss_and_grad: volume loss active but no volume model given");
        require_same_layout(x_t.dims, x_t.spacing_mm, tgt.ref_sdf->dims,
                            tgt.ref_sdf->spacing_mm, "loss_and_grad(ref_sdf)");
        require_same_layout(x_t.dims, x_t.spacing_mm, tgt.ref_mask->dims,
                            tgt.ref_mask->spacing_mm, "loss_and_grad(ref_mask)");
        require_same_layout(x_t.dims, x_t.spacing_mm, tgt.context_mask->dims,
                            tgt.context_mask->spacing_mm, "loss_and_grad(context_mask)");

        run_forward(p, x_t, c, t);
        const LossReport rep = loss_backward_seed(tgt, lc);
        run_backward(p, c, grad);
        return rep;
    }

  private:
    using M = nn::Mat<Real>;
    using V = nn::Vec<Real>;

    nn::Level level_of(int l) const {
        return nn::Level{dims_.nx >> l, dims_.ny >> l, dims_.nz >> l};
    }

    void run_forward(const DenoiserParams<Real>& p, const ScalarGrid& x_t,
                     const Conditioning& c, int t) {
        if (p.flat.size() != expected_params_)
            throw ConfigError("denoiser: parameter/config mismatch");
        check_dims(x_t.dims, "denoiser input");
        const int div = cfg_.divisor();
        if (x_t.dims.nx % div != 0 || x_t.dims.ny % div != 0 || x_t.dims.nz % div != 0)
            throw DataError("denoiser: dims " + x_t.dims.str() + " not divisible by " +
                            std::to_string(div));
        require_same_layout(x_t.dims, x_t.spacing_mm, c.body.dims, c.body.spacing_mm,
                            "denoiser(body)");
        require_same_layout(x_t.dims, x_t.spacing_mm, c.context.dims, c.context.spacing_mm,
                            "denoiser(context)");
        if (t < 0) throw NumericError("denoiser: negative timestep");
        dims_ = x_t.dims;
        spacing_ = x_t.spacing_mm;

        const auto N0 = static_cast<Eigen::Index>(dims_.total());
        const Real inv = Real(1) / static_cast<Real>(cfg_.io_scale);
        xin_.resize(3, N0);
        for (Eigen::Index i = 0; i < N0; ++i) {
            xin_(0, i) = static_cast<Real>(x_t.values[static_cast<std::size_t>(i)]) * inv;
            xin_(1, i) = static_cast<Real>(c.body.values[static_cast<std::size_t>(i)]) * inv;
            xin_(2, i) = static_cast<Real>(c.context.values[static_cast<std::size_t>(i)]) * inv;
        }

        embed(p, c, t);

        for (std::size_t s = 0; s < stages_.size(); ++s) {
            const auto& sp = stages_[s];
            const nn::Level lv = level_of(sp.level);
            const M* src = &xin_;
            if (sp.down) {
                nn::avgpool2(y_[s - 1], level_of(sp.level - 1), resample_);
                src = &resample_;
            } else if (sp.up) {
                nn::upsample2(y_[s - 1], level_of(sp.level + 1), resample_);
                src = &resample_;
            }
            nn::im2col_3x3x3(*src, lv, K_[s]);
            const auto W = p.block(sp.w);
            const auto b = p.block(sp.b);
            h0_[s].noalias() = W * K_[s];
            h0_[s].colwise() += b.col(0);

            const auto Wf = p.block(sp.fw);
            const auto bf = p.block(sp.fb);
            film_.noalias() = Wf * e_;
            film_ += bf.col(0);
            gamma_[s] = (film_.head(sp.cout).array() + Real(1)).matrix();
            const auto beta = film_.tail(sp.cout);
            h1_[s] = (h0_[s].array().colwise() * gamma_[s].array()).matrix();
            h1_[s].colwise() += beta;

            y_[s] = h1_[s].unaryExpr([](Real x) { return nn::silu(x); });
            if (sp.skip_from >= 0) y_[s] += y_[static_cast<std::size_t>(sp.skip_from)];
        }

        nn::im2col_3x3x3(y_.back(), level_of(0), Kout_);
        const auto Wo = p.block("conv_out.w");
        const auto bo = p.block("conv_out.b");
        out_.noalias() = Wo * Kout_;
        out_.array() += bo(0, 0);
    }

    void embed(const DenoiserParams<Real>& p, const Conditioning& c, int t) {
        const int dt = cfg_.t_embed_dim, dv = cfg_.v_embed_dim;
        e_.resize(dt + dv);
        const int half = dt / 2;
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / (half - 1));
            const double arg = static_cast<double>(t) * freq;
            e_(i) = static_cast<Real>(std::sin(arg));
            e_(half + i) = static_cast<Real>(std::cos(arg));
        }
        const auto W1 = p.block("vmlp.w1");
        const auto b1 = p.block("vmlp.b1");
        const auto W2 = p.block("vmlp.w2");
        const auto b2 = p.block("vmlp.b2");
        a1_ = W1.col(0) * static_cast<Real>(c.v) + b1.col(0);
        h1v_ = a1_.unaryExpr([](Real x) { return nn::silu(x); });
        ev_.noalias() = W2 * h1v_;
        ev_ += b2.col(0);
        if (c.v_present)
            e_.tail(dv) = ev_;
        else
            e_.tail(dv).setZero();
    }

    // Seeds dout_ with dL/d(prediction) and returns the weighted loss report.
    LossReport loss_backward_seed(const LossTargets& tgt, const LossConfig& lc) {
        const auto N = static_cast<Eigen::Index>(dims_.total());
        const double n = static_cast<double>(N);
        const double k = lc.sdf.occupancy_sharpness;
        const double lo = lc.bce_clamp, hi = 1.0 - lc.bce_clamp;
        const double voxvol = voxel_volume_ml(spacing_);

        pbuf_.resize(static_cast<std::size_t>(N));
        double l1 = 0.0, bce = 0.0, sum_p = 0.0, sum_ctx = 0.0, inter = 0.0, soft_ml = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) {
            const double s = static_cast<double>(out_(0, i));
            if (!std::isfinite(s))
                throw NumericError("denoiser forward: non-finite prediction");
            const auto ui = static_cast<std::size_t>(i);
            l1 += std::abs(s - tgt.ref_sdf->values[ui]);
            const double p = logistic(k * s);
            pbuf_[ui] = p;
            const double pc = std::clamp(p, lo, hi);
            bce += tgt.ref_mask->bits[ui] ? -std::log(pc) : -std::log(1.0 - pc);
            sum_p += p;
            if (tgt.context_mask->bits[ui]) {
                sum_ctx += 1.0;
                inter += p;
            }
            soft_ml += p * voxvol;
        }
        l1 /= n;
        bce /= n;
        const double ov_den = sum_p + sum_ctx + lc.overlap_eps;
        const double ov = 2.0 * inter / ov_den;

        LossReport rep;
        rep.vcs_on = tgt.vcs_active;
        rep.l_sdf = lc.weights.sdf * l1;
        rep.l_bce = lc.weights.bce * bce;
        rep.l_ov = lc.weights.overlap * ov;
        double vcs_coeff = 0.0;  // dL_vcs / d(soft volume in mL)
        if (tgt.vcs_active) {
            const double v_hat = vcs_of(soft_ml, tgt.v_body_ml, *tgt.vcs);
            const double d = v_hat - tgt.v_target;
            rep.l_vcs = lc.weights.vcs * d * d;
            vcs_coeff = lc.weights.vcs * 2.0 * d / tgt.vcs->sigma;
        }
        rep.total = rep.l_sdf + rep.l_bce + rep.l_ov + rep.l_vcs;

        dout_.resize(1, N);
        for (Eigen::Index i = 0; i < N; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            const double s = static_cast<double>(out_(0, i));
            const double diff = s - tgt.ref_sdf->values[ui];
            const double g_sdf = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / n;
            const double p = pbuf_[ui];
            const double m = tgt.ref_mask->bits[ui] ? 1.0 : 0.0;
            const double g_bce = (p <= lo || p >= hi) ? 0.0 : k * (p - m) / n;
            const double dsig = k * p * (1.0 - p);
            const double mc = tgt.context_mask->bits[ui] ? 1.0 : 0.0;
            const double g_ov = 2.0 * (mc * ov_den - inter) / (ov_den * ov_den) * dsig;
            const double g_vcs = vcs_coeff * voxvol * dsig;
            dout_(0, i) = static_cast<Real>(lc.weights.sdf * g_sdf + lc.weights.bce * g_bce +
                                            lc.weights.overlap * g_ov + g_vcs);
        }
        return rep;
    }

    void run_backward(const DenoiserParams<Real>& p, const Conditioning& c,
                      std::vector<Real>& grad) {
        grad.assign(p.flat.size(), Real(0));
        auto gmap = [&](const std::string& name) -> Eigen::Map<M> {
            const ParamBlock& b = find_block(p.blocks, name);
            return {grad.data() + b.offset, b.rows, b.cols};
        };

        const std::size_t S = stages_.size();
        for (std::size_t s = 0; s < S; ++s) {
            pending_[s].resize(stages_[s].cout,
                               static_cast<Eigen::Index>(level_of(stages_[s].level).voxels()));
            pending_[s].setZero();
        }
        {
            auto gWo = gmap("conv_out.w");
            auto gbo = gmap("conv_out.b");
            gWo.noalias() = dout_ * Kout_.transpose();
            gbo(0, 0) = dout_.sum();
        }
        {
            const auto Wo = p.block("conv_out.w");
            G_.noalias() = Wo.transpose() * dout_;
            nn::col2im_3x3x3(G_, level_of(0), pending_[S - 1]);
        }

        de_.resize(cfg_.t_embed_dim + cfg_.v_embed_dim);
        de_.setZero();

        for (std::size_t si = S; si-- > 0;) {
            const auto& sp = stages_[si];
            const nn::Level lv = level_of(sp.level);
            M& dy = pending_[si];
            if (sp.skip_from >= 0) pending_[static_cast<std::size_t>(sp.skip_from)] += dy;

            dh1_ = (dy.array() *
                    h1_[si].unaryExpr([](Real x) { return nn::silu_grad(x); }).array())
                       .matrix();

            dfilm_.resize(2 * sp.cout);
            dfilm_.head(sp.cout) = (dh1_.array() * h0_[si].array()).rowwise().sum().matrix();
            dfilm_.tail(sp.cout) = dh1_.rowwise().sum();
            {
                auto gWf = gmap(sp.fw);
                auto gbf = gmap(sp.fb);
                gWf.noalias() += dfilm_ * e_.transpose();
                gbf.col(0) += dfilm_;
                const auto Wf = p.block(sp.fw);
                de_.noalias() += Wf.transpose() * dfilm_;
            }

            dh0_ = (dh1_.array().colwise() * gamma_[si].array()).matrix();
            {
                auto gW = gmap(sp.w);
                auto gb = gmap(sp.b);
                gW.noalias() += dh0_ * K_[si].transpose();
                gb.col(0) += dh0_.rowwise().sum();
            }
            if (si == 0) continue;  // gradients w.r.t. the network input are not needed

            const auto W = p.block(sp.w);
            G_.noalias() = W.transpose() * dh0_;
            dpre_.resize(sp.cin, static_cast<Eigen::Index>(lv.voxels()));
            dpre_.setZero();
            nn::col2im_3x3x3(G_, lv, dpre_);
            if (sp.down) {
                nn::avgpool2_backward(dpre_, level_of(sp.level - 1), dres_);
                pending_[si - 1] += dres_;
            } else {
                nn::upsample2_backward(dpre_, level_of(sp.level + 1), dres_);
                pending_[si - 1] += dres_;
            }
        }

        // Embedding: the timestep half has no parameters; the volume half
        // flows through the gate (zero when the scalar was dropped).
        const int dv = cfg_.v_embed_dim;
        dev_ = c.v_present ? V(de_.tail(dv)) : V(V::Zero(dv));
        {
            auto gW2 = gmap("vmlp.w2");
            auto gb2 = gmap("vmlp.b2");
            gW2.noalias() += dev_ * h1v_.transpose();
            gb2.col(0) += dev_;
            const auto W2 = p.block("vmlp.w2");
            da1_ = ((W2.transpose() * dev_).array() *
                    a1_.unaryExpr([](Real x) { return nn::silu_grad(x); }).array())
                       .matrix();
            auto gW1 = gmap("vmlp.w1");
            auto gb1 = gmap("vmlp.b1");
            gW1.col(0) += da1_ * static_cast<Real>(c.v);
            gb1.col(0) += da1_;
        }

        for (std::size_t i = 0; i < grad.size(); ++i) {
            if (std::isfinite(static_cast<double>(grad[i]))) continue;
            for (const auto& b : p.blocks)
                if (i >= b.offset && i < b.offset + b.size())
                    throw NumericError("denoiser backward: non-finite gradient in block '" +
                                       b.name + "'");
            throw NumericError("denoiser backward: non-finite gradient");
        }
    }

    DenoiserConfig cfg_;
    std::vector<detail::StageSpec> stages_;
    std::size_t expected_params_ = 0;
    GridDims dims_;
    double spacing_ = 1.0;

    M xin_, resample_, Kout_, out_, dout_, G_, dpre_, dres_, dh1_, dh0_;
    std::vector<M> K_, h0_, h1_, y_, pending_;
    std::vector<V> gamma_;
    V e_, a1_, h1v_, ev_, film_, de_, dev_, da1_, dfilm_;
    std::vector<double> pbuf_;
};

template <class Real>
DenoiseFn make_denoise_fn(DenoiserNet<Real>& net, const DenoiserParams<Real>& p) {
    return [&net, &p](const ScalarGrid& x_t, const Conditioning& c, int t) {
        return net.forward(p, x_t, c, t);
    };
}

}  // namespace organgen
