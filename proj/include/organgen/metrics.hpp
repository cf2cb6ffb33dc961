#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "organgen/grid.hpp"
#include "organgen/parallel.hpp"
#include "organgen/sdf.hpp"
#include "organgen/stats.hpp"

namespace organgen {

using Point = std::array<double, 3>;
using PointCloud = std::vector<Point>;

inline double dice(const BinaryMask& a, const BinaryMask& b) {
    require_same_layout(a.dims, a.spacing_mm, b.dims, b.spacing_mm, "dice");
    std::size_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        const bool ba = a.bits[i] != 0, bb = b.bits[i] != 0;
        na += ba;
        nb += bb;
        inter += ba && bb;
    }
    if (na + nb == 0) return 1.0;  // both empty: identical by convention
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Point cloud moved to its centroid and rotated into principal axes,
// eigenvalues descending. Axis signs: third central moment along each axis
// >= 0; exact zero-moment ties resolved toward a lexicographically positive
// axis. Exactly equal eigenvalues are ordered by lexicographic comparison of
// the (sign-normalized) eigenvectors.
struct AlignedCloud {
    PointCloud points;
};

inline AlignedCloud align(const PointCloud& pts) {
    if (pts.empty()) throw DataError("align: empty point cloud");
    const double n = static_cast<double>(pts.size());
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& p : pts) c += Eigen::Vector3d(p[0], p[1], p[2]);
    c /= n;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - c;
        cov += d * d.transpose();
    }
    cov /= n;

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    if (es.info() != Eigen::Success) throw NumericError("align: eigensolver failed");

    struct Axis {
        double lambda;
        Eigen::Vector3d v;
    };
    auto sign_normalize = [](Eigen::Vector3d v) {
        for (int k = 0; k < 3; ++k) {
            if (v[k] > 0.0) return v;
            if (v[k] < 0.0) return Eigen::Vector3d(-v);
        }
        return v;
    };
    std::array<Axis, 3> axes;
    for (int k = 0; k < 3; ++k)
        axes[k] = {es.eigenvalues()[k], sign_normalize(es.eigenvectors().col(k))};
    std::sort(axes.begin(), axes.end(), [](const Axis& a, const Axis& b) {
        if (a.lambda != b.lambda) return a.lambda > b.lambda;
        for (int k = 0; k < 3; ++k)
            if (a.v[k] != b.v[k]) return a.v[k] > b.v[k];
        return false;
    });

    for (auto& ax : axes) {
        double skew = 0.0;
        for (const auto& p : pts)
            skew += std::pow((Eigen::Vector3d(p[0], p[1], p[2]) - c).dot(ax.v), 3.0);
        if (skew < 0.0) ax.v = -ax.v;
        // skew == 0: keep the lexicographically positive orientation.
    }

    AlignedCloud out;
    out.points.reserve(pts.size());
    for (const auto& p : pts) {
        const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - c;
        out.points.push_back({d.dot(axes[0].v), d.dot(axes[1].v), d.dot(axes[2].v)});
    }
    return out;
}

struct SurfaceDistances {
    double assd_mm = 0.0;
    double hd95_mm = 0.0;
    double chamfer_mm = 0.0;
};

namespace detail {

inline double nearest_distance(const Point& p, const PointCloud& cloud) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : cloud) {
        const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    return std::sqrt(best);
}

inline void directed_distances(const PointCloud& a, const PointCloud& b,
                               std::vector<double>& out) {
    for (const auto& p : a) out.push_back(nearest_distance(p, b));
}

}  // namespace detail

// ASSD = mean of the pooled nearest-neighbor distances (both directions);
// HD95 = 95th percentile (linear interpolation) of the same pooled multiset;
// Chamfer = average of the two directed means.
inline SurfaceDistances surface_distances(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw DataError("surface_distances: empty point cloud");
    std::vector<double> d_ab, d_ba;
    d_ab.reserve(a.size());
    d_ba.reserve(b.size());
    detail::directed_distances(a, b, d_ab);
    detail::directed_distances(b, a, d_ba);

    SurfaceDistances r;
    r.chamfer_mm = (mean(d_ab) + mean(d_ba)) / 2.0;
    std::vector<double> pooled;
    pooled.reserve(d_ab.size() + d_ba.size());
    pooled.insert(pooled.end(), d_ab.begin(), d_ab.end());
    pooled.insert(pooled.end(), d_ba.begin(), d_ba.end());
    r.assd_mm = mean(pooled);
    std::sort(pooled.begin(), pooled.end());
    r.hd95_mm = percentile_sorted(pooled, 95.0);
    return r;
}

inline SurfaceDistances surface_distances(const AlignedCloud& a, const AlignedCloud& b) {
    return surface_distances(a.points, b.points);
}

inline AlignedCloud aligned_surface(const BinaryMask& mask) {
    return align(surface_points(mask));
}

struct RealismRow {
    double chamfer_mm = 0.0;
    double hd95_mm = 0.0;
};

// For each generated mask: nearest training mask by Chamfer distance over
// aligned surface clouds; HD95 reported against that same neighbor.
inline std::vector<RealismRow> nn_realism(const std::vector<BinaryMask>& generated,
                                          const std::vector<BinaryMask>& train,
                                          int threads = 1) {
    if (generated.empty() || train.empty()) throw DataError("nn_realism: empty mask sequence");
    std::vector<AlignedCloud> train_clouds(train.size());
    parallel_for(train.size(), threads,
                 [&](std::size_t i, std::size_t) { train_clouds[i] = aligned_surface(train[i]); });
    std::vector<RealismRow> rows(generated.size());
    parallel_for(generated.size(), threads, [&](std::size_t i, std::size_t) {
        const AlignedCloud g = aligned_surface(generated[i]);
        RealismRow best;
        best.chamfer_mm = std::numeric_limits<double>::infinity();
        for (const auto& tc : train_clouds) {
            const SurfaceDistances d = surface_distances(g, tc);
            if (d.chamfer_mm < best.chamfer_mm) {
                best.chamfer_mm = d.chamfer_mm;
                best.hd95_mm = d.hd95_mm;
            }
        }
        rows[i] = best;
    });
    return rows;
}

struct Dispersion {
    double mean = 0.0;
    double stddev = 0.0;  // sample (n-1); 0 for a single pair
};

struct DiversityReport {
    Dispersion dice;
    Dispersion chamfer_mm;
};

inline DiversityReport pairwise_diversity(const std::vector<BinaryMask>& masks,
                                          int threads = 1) {
    if (masks.size() < 2) throw DataError("pairwise_diversity: need at least 2 masks");
    std::vector<AlignedCloud> clouds(masks.size());
    parallel_for(masks.size(), threads,
                 [&](std::size_t i, std::size_t) { clouds[i] = aligned_surface(masks[i]); });
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < masks.size(); ++i)
        for (std::size_t j = i + 1; j < masks.size(); ++j) pairs.emplace_back(i, j);
    std::vector<double> dices(pairs.size()), chamfers(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t k, std::size_t) {
        const auto [i, j] = pairs[k];
        dices[k] = dice(masks[i], masks[j]);
        chamfers[k] = surface_distances(clouds[i], clouds[j]).chamfer_mm;
    });
    DiversityReport rep;
    rep.dice = {mean(dices), sample_std(dices)};
    rep.chamfer_mm = {mean(chamfers), sample_std(chamfers)};
    return rep;
}

// Exact 1D Wasserstein-1 distance: integral of |F_a - F_b| over the merged
// support of the two empirical CDFs.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DataError("wasserstein1: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t ia = 0, ib = 0;
    double w = 0.0, prev = 0.0;
    bool first = true;
    while (ia < a.size() || ib < b.size()) {
        const double x = (ib >= b.size() || (ia < a.size() && a[ia] <= b[ib])) ? a[ia] : b[ib];
        if (!first && x > prev) {
            const double fa = static_cast<double>(ia) / na;
            const double fb = static_cast<double>(ib) / nb;
            w += std::abs(fa - fb) * (x - prev);
        }
        while (ia < a.size() && a[ia] == x) ++ia;
        while (ib < b.size() && b[ib] == x) ++ib;
        prev = x;
        first = false;
    }
    return w;
}

// --- CSV report: one row per (case, organ, metric, value) ------------------

struct MetricRow {
    std::string case_id;
    std::string organ;
    std::string metric;
    double value = 0.0;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_metrics_csv: cannot open " + path);
    f << "case,organ,metric,value\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.10g", r.value);
        f << r.case_id << ',' << r.organ << ',' << r.metric << ',' << buf << '\n';
    }
    if (!f) throw DataError("write_metrics_csv: write failed for " + path);
}

}  // namespace organgen
