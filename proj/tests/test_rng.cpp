#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "organgen/rng.hpp"

using namespace organgen;

TEST(Rng, SameKeySameStream) {
    Rng a = Rng::of(7u, "noise", 3u);
    Rng b = Rng::of(7u, "noise", 3u);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, KeyPartsChangeStream) {
    Rng base = Rng::of(7u, "noise", 3u);
    Rng seed = Rng::of(8u, "noise", 3u);
    Rng purpose = Rng::of(7u, "init", 3u);
    Rng index = Rng::of(7u, "noise", 4u);
    const std::uint64_t v = base.next_u64();
    EXPECT_NE(v, seed.next_u64());
    EXPECT_NE(v, purpose.next_u64());
    EXPECT_NE(v, index.next_u64());
}

TEST(Rng, UniformInUnitInterval) {
    Rng r = Rng::of(1u, "uniform");
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(Rng, UniformIndexCoversRangeUniformly) {
    Rng r = Rng::of(2u, "index");
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[r.uniform_index(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, NormalMoments) {
    Rng r = Rng::of(3u, "normal");
    const int n = 50000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Rng, BernoulliRate) {
    Rng r = Rng::of(4u, "bern");
    int hits = 0;
    for (int i = 0; i < 20000; ++i) hits += r.bernoulli(0.3);
    EXPECT_NEAR(hits / 20000.0, 0.3, 0.02);
}

TEST(Rng, MixedKeyTypesHashDistinctly) {
    // String and integer parts must not collide trivially.
    std::set<std::uint64_t> firsts;
    firsts.insert(Rng::of(1u, "a").next_u64());
    firsts.insert(Rng::of(1u, "b").next_u64());
    firsts.insert(Rng::of(1u, 0u).next_u64());
    firsts.insert(Rng::of(1u, 1u).next_u64());
    EXPECT_EQ(firsts.size(), 4u);
}
