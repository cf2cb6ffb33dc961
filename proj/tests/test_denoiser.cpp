#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "organgen/denoiser.hpp"
#include "testutil.hpp"

using namespace organgen;

namespace {

DenoiserConfig desk_config() { return DenoiserConfig{}; }  // widths {8,16,32}

Conditioning toy_conditioning(GridDims dims, double spacing, double v, Rng& rng) {
    SdfConfig sdf;
    const BinaryMask body = testutil::random_blob(dims, spacing, rng);
    return make_conditioning(sdf_from_mask(body, sdf),
                             ScalarGrid(dims, spacing, -sdf.truncation), v);
}

}  // namespace

TEST(Denoiser, DeskParameterBudget) {
    // Width ladder {8,16,32}: 656 + 3472 + 13856 + 13840 + 3464 + 217
    // (convs) + 1120 (v-MLP) + 10400 (FiLM heads) = 47025.
    EXPECT_EQ(param_count(desk_config()), 47025u);
}

TEST(Denoiser, BlockTableIsContiguousAndNamed) {
    const DenoiserConfig cfg = desk_config();
    const auto blocks = param_blocks(cfg);
    std::size_t off = 0;
    for (const auto& b : blocks) {
        EXPECT_EQ(b.offset, off);
        off += b.size();
    }
    EXPECT_EQ(off, param_count(cfg));
    EXPECT_EQ(find_block(blocks, "conv_in.w").rows, 8);
    EXPECT_EQ(find_block(blocks, "conv_in.w").cols, 81);
    EXPECT_EQ(find_block(blocks, "down2.w").rows, 32);
    EXPECT_EQ(find_block(blocks, "up0.w").cols, 16 * 27);
    EXPECT_EQ(find_block(blocks, "film4.w").rows, 16);
    EXPECT_EQ(find_block(blocks, "film4.w").cols, 64);
    EXPECT_THROW(find_block(blocks, "nope.w"), std::runtime_error);
}

TEST(Denoiser, StageChannelsMirrorTheLadder) {
    const DenoiserConfig cfg = desk_config();
    EXPECT_EQ(cfg.depth(), 3);
    EXPECT_EQ(cfg.divisor(), 4);
    EXPECT_EQ(cfg.stage_channels(), (std::vector<int>{8, 16, 32, 16, 8}));
}

TEST(Denoiser, FreshInitPredictsExactlyZero) {
    const DenoiserConfig cfg = desk_config();
    DenoiserParams<double> p(cfg);
    Rng rng = Rng::of(41u, "init");
    init_params(p, rng);
    DenoiserNet<double> net(cfg);
    Rng crng = Rng::of(41u, "cond");
    const Conditioning c = toy_conditioning({8, 8, 8}, 4.0, 0.7, crng);
    const ScalarGrid x_t = sample_noise_grid({8, 8, 8}, 4.0, crng);
    const ScalarGrid out = net.forward(p, x_t, c, 500);
    // conv_out is zero-initialized, so the first prediction is identically 0.
    for (double v : out.values) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Denoiser, OutputBiasGivesUniformPrediction) {
    const DenoiserConfig cfg = desk_config();
    DenoiserParams<double> p(cfg);  // all zeros
    p.block("conv_out.b")(0, 0) = 0.3;
    DenoiserNet<double> net(cfg);
    Rng crng = Rng::of(42u, "cond");
    const Conditioning c = toy_conditioning({8, 8, 8}, 4.0, -1.2, crng);
    const ScalarGrid x_t = sample_noise_grid({8, 8, 8}, 4.0, crng);
    const ScalarGrid out = net.forward(p, x_t, c, 17);
    for (double v : out.values) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(Denoiser, DroppedScalarMatchesZeroedScalarPathBitwise) {
    const DenoiserConfig cfg = desk_config();
    DenoiserParams<double> p(cfg);
    Rng rng = Rng::of(43u, "rand");
    randomize_params(p, rng, 0.25);
    DenoiserParams<double> p_zeroed = p;
    for (const char* blk : {"vmlp.w1", "vmlp.b1", "vmlp.w2", "vmlp.b2"})
        p_zeroed.block(blk).setZero();

    Rng crng = Rng::of(43u, "cond");
    Conditioning present = toy_conditioning({8, 8, 8}, 4.0, 1.7, crng);
    const ScalarGrid x_t = sample_noise_grid({8, 8, 8}, 4.0, crng);

    Conditioning dropped = present;
    dropped.v = 0.0;
    dropped.v_present = false;

    DenoiserNet<double> net(cfg);
    const ScalarGrid with_dropped = net.forward(p, x_t, dropped, 311);
    const ScalarGrid with_zeroed = net.forward(p_zeroed, x_t, present, 311);
    EXPECT_EQ(with_dropped.values, with_zeroed.values);

    // And the scalar must matter when it is present.
    const ScalarGrid with_present = net.forward(p, x_t, present, 311);
    EXPECT_NE(with_present.values, with_dropped.values);
}

TEST(Denoiser, ForwardIsDeterministic) {
    const DenoiserConfig cfg = desk_config();
    DenoiserParams<double> p(cfg);
    Rng rng = Rng::of(44u, "rand");
    randomize_params(p, rng, 0.3);
    Rng crng = Rng::of(44u, "cond");
    const Conditioning c = toy_conditioning({8, 8, 8}, 4.0, 0.4, crng);
    const ScalarGrid x_t = sample_noise_grid({8, 8, 8}, 4.0, crng);
    DenoiserNet<double> net1(cfg);
    DenoiserNet<double> net2(cfg);
    const ScalarGrid a = net1.forward(p, x_t, c, 99);
    const ScalarGrid b = net2.forward(p, x_t, c, 99);
    const ScalarGrid a2 = net1.forward(p, x_t, c, 99);  // reused scratch buffers
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values, a2.values);
}

TEST(Denoiser, RejectsIndivisibleDims) {
    const DenoiserConfig cfg = desk_config();  // divisor 4
    DenoiserParams<double> p(cfg);
    DenoiserNet<double> net(cfg);
    Rng crng = Rng::of(45u, "cond");
    const Conditioning c = toy_conditioning({6, 8, 8}, 4.0, 0.0, crng);
    const ScalarGrid x_t = sample_noise_grid({6, 8, 8}, 4.0, crng);
    EXPECT_THROW(net.forward(p, x_t, c, 10), DataError);
}

TEST(Denoiser, RejectsWrongParamsLength) {
    const DenoiserConfig cfg = desk_config();
    DenoiserParams<double> p(cfg);
    p.flat.push_back(0.0);
    DenoiserNet<double> net(cfg);
    Rng crng = Rng::of(46u, "cond");
    const Conditioning c = toy_conditioning({8, 8, 8}, 4.0, 0.0, crng);
    const ScalarGrid x_t = sample_noise_grid({8, 8, 8}, 4.0, crng);
    EXPECT_THROW(net.forward(p, x_t, c, 10), ConfigError);
}

TEST(Denoiser, TimestepChangesThePrediction) {
    const DenoiserConfig cfg = desk_config();
    DenoiserParams<double> p(cfg);
    Rng rng = Rng::of(47u, "rand");
    randomize_params(p, rng, 0.3);
    Rng crng = Rng::of(47u, "cond");
    const Conditioning c = toy_conditioning({8, 8, 8}, 4.0, 0.0, crng);
    const ScalarGrid x_t = sample_noise_grid({8, 8, 8}, 4.0, crng);
    DenoiserNet<double> net(cfg);
    const ScalarGrid at1 = net.forward(p, x_t, c, 1);
    const ScalarGrid at900 = net.forward(p, x_t, c, 900);
    EXPECT_NE(at1.values, at900.values);
}

// The hand-built knob model makes the whole conditioning path checkable in
// closed form: prediction == silu(B + 0.75 v - 3.75) within float noise.
TEST(Denoiser, VolumeKnobModelMatchesClosedForm) {
    const Checkpoint ck = testutil::volume_knob_checkpoint("o", testutil::toy_vcs("o"));
    const DenoiserParams<float> p = params_from_checkpoint<float>(ck);
    DenoiserNet<float> net(ck.denoiser);
    SdfConfig sdf;
    Rng rng = Rng::of(48u, "knob");
    const BinaryMask body = testutil::random_blob({12, 12, 12}, 4.0, rng);
    const ScalarGrid B = sdf_from_mask(body, sdf);
    const ScalarGrid x_t = sample_noise_grid({12, 12, 12}, 4.0, rng);
    for (double v : {-3.0, 0.0, 3.0}) {
        const Conditioning c =
            make_conditioning(B, ScalarGrid({12, 12, 12}, 4.0, -sdf.truncation), v);
        const ScalarGrid out = net.forward(p, x_t, c, 777);
        const double beta = 0.75 * v - 3.75;
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            const double a = B.values[i] + beta;
            ASSERT_NEAR(out.values[i], a / (1.0 + std::exp(-a)), 2e-5);
        }
    }
}

TEST(DenoiserLosses, StandaloneValuesOnHandInputs) {
    LossConfig lc;
    // L1 on the SDF.
    ScalarGrid pred({1, 1, 2}, 1.0), ref({1, 1, 2}, 1.0);
    pred.values = {1.0, -2.0};
    ref.values = {0.5, 0.0};
    EXPECT_DOUBLE_EQ(loss_sdf(pred, ref), (0.5 + 2.0) / 2.0);

    // BCE of a coin-flip prediction is ln 2 regardless of the mask.
    ScalarGrid occ({1, 1, 2}, 1.0, 0.5);
    BinaryMask m({1, 1, 2}, 1.0, false);
    m.bits = {1, 0};
    EXPECT_NEAR(loss_bce(occ, m, lc), std::log(2.0), 1e-15);

    // Soft-overlap: occ 1 on one voxel, context mask on the same voxel.
    ScalarGrid occ2({1, 1, 2}, 1.0);
    occ2.values = {1.0, 0.0};
    BinaryMask ctx({1, 1, 2}, 1.0, false);
    ctx.bits = {1, 0};
    // 2*1 / (1 + 1 + eps)
    EXPECT_NEAR(loss_overlap(occ2, ctx, lc), 2.0 / (2.0 + 1e-6), 1e-12);
    BinaryMask empty_ctx({1, 1, 2}, 1.0, false);
    EXPECT_DOUBLE_EQ(loss_overlap(occ2, empty_ctx, lc), 0.0);

    // Volume-scalar loss: (vcs_of(soft volume) - v_target)^2.
    const VcsModel vm = testutil::toy_vcs("o");
    ScalarGrid occ3({1, 1, 2}, 10.0);  // 1 mL voxels
    occ3.values = {1.0, 0.5};          // soft volume = 1.5 mL
    const double vhat = vcs_of(1.5, 200.0, vm);
    EXPECT_NEAR(loss_vcs(occ3, 0.25, 200.0, vm), (vhat - 0.25) * (vhat - 0.25), 1e-12);
}

TEST(DenoiserLosses, BceClampBoundsExtremeInputs) {
    LossConfig lc;
    ScalarGrid occ({1, 1, 1}, 1.0);
    occ.values = {1.0};  // would be -log(0) for a background voxel unclamped
    BinaryMask bg({1, 1, 1}, 1.0, false);
    // The clamp is applied to p, so the background term is -log(1 - (1 - clamp)),
    // which differs from -log(clamp) by the rounding of 1 - clamp in doubles.
    const double want = -std::log(1.0 - (1.0 - lc.bce_clamp));
    EXPECT_NEAR(loss_bce(occ, bg, lc), want, want * 1e-12);
}
