#include <gtest/gtest.h>

#include <cmath>

#include "organgen/sdf.hpp"
#include "testutil.hpp"

using namespace organgen;

// Exactness against the all-pairs oracle, pre-clamp (tau large enough to
// never bind on these grids).
TEST(Sdf, MatchesBruteForceOracleOnRandomMasks) {
    Rng rng = Rng::of(100u, "sdf-oracle");
    SdfConfig cfg;
    cfg.truncation = 1e6;
    for (int trial = 0; trial < 200; ++trial) {
        const GridDims dims{1 + static_cast<int>(rng.uniform_index(8)),
                            1 + static_cast<int>(rng.uniform_index(8)),
                            1 + static_cast<int>(rng.uniform_index(8))};
        const double p = rng.uniform(0.1, 0.9);
        const BinaryMask m = testutil::random_mask(dims, 1.0, rng, p);
        const ScalarGrid got = sdf_from_mask(m, cfg);
        const ScalarGrid want = testutil::brute_force_sdf(m, cfg.truncation);
        for (std::size_t i = 0; i < got.values.size(); ++i)
            ASSERT_NEAR(got.values[i], want.values[i], 1e-9)
                << "trial " << trial << " voxel " << i << " dims " << dims.str();
    }
}

TEST(Sdf, UniformMasksSaturateAtTau) {
    SdfConfig cfg;  // tau = 10
    const BinaryMask full({4, 4, 4}, 1.0, true);
    const BinaryMask empty({4, 4, 4}, 1.0, false);
    for (double v : sdf_from_mask(full, cfg).values) EXPECT_DOUBLE_EQ(v, 10.0);
    for (double v : sdf_from_mask(empty, cfg).values) EXPECT_DOUBLE_EQ(v, -10.0);
}

TEST(Sdf, SingleVoxelDistances) {
    SdfConfig cfg;
    BinaryMask m({3, 3, 3}, 1.0, false);
    m.set(1, 1, 1, true);
    const ScalarGrid s = sdf_from_mask(m, cfg);
    EXPECT_DOUBLE_EQ(s.at(1, 1, 1), 1.0);            // nearest background is 1 away
    EXPECT_DOUBLE_EQ(s.at(0, 1, 1), -1.0);           // face neighbor
    EXPECT_DOUBLE_EQ(s.at(0, 0, 1), -std::sqrt(2.0));  // edge neighbor
    EXPECT_DOUBLE_EQ(s.at(0, 0, 0), -std::sqrt(3.0));  // corner neighbor
}

TEST(Sdf, TruncationClampsBothSides) {
    SdfConfig cfg;
    cfg.truncation = 1.5;
    BinaryMask m({9, 1, 1}, 1.0, false);
    m.set(4, 0, 0, true);
    const ScalarGrid s = sdf_from_mask(m, cfg);
    EXPECT_DOUBLE_EQ(s.at(4, 0, 0), 1.0);
    EXPECT_DOUBLE_EQ(s.at(3, 0, 0), -1.0);
    EXPECT_DOUBLE_EQ(s.at(2, 0, 0), -1.5);  // true distance 2, clamped
    EXPECT_DOUBLE_EQ(s.at(0, 0, 0), -1.5);
}

TEST(Sdf, DistanceIsVoxelUnitsNotMm) {
    SdfConfig cfg;
    BinaryMask m({5, 1, 1}, 4.0, false);  // 4 mm spacing must not scale S
    m.set(2, 0, 0, true);
    const ScalarGrid s = sdf_from_mask(m, cfg);
    EXPECT_DOUBLE_EQ(s.at(1, 0, 0), -1.0);
    EXPECT_DOUBLE_EQ(s.at(0, 0, 0), -2.0);
}

TEST(Sdf, SurfacePointsAreExposedFaceVoxelCenters) {
    BinaryMask m({3, 3, 3}, 2.0, true);
    const auto pts = surface_points(m);
    // Only the center voxel of a solid 3x3x3 block is interior.
    EXPECT_EQ(pts.size(), 26u);
    for (const auto& p : pts) {
        const bool center = p[0] == 3.0 && p[1] == 3.0 && p[2] == 3.0;
        EXPECT_FALSE(center);
    }
}

TEST(Sdf, SurfacePointsEmptyMaskThrows) {
    const BinaryMask m({3, 3, 3}, 1.0, false);
    EXPECT_THROW(surface_points(m), DataError);
}
