#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "organgen/grid.hpp"

namespace organgen {

namespace detail {

constexpr double kDtInf = std::numeric_limits<double>::infinity();

// 1D squared-distance transform (lower envelope of parabolas).
// f[i] is the squared distance seeded at position i (kDtInf for non-sites);
// writes min_j (i-j)^2 + f[j] into d. Scratch vectors are caller-provided
// so scanline sweeps do not allocate.
inline void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                 std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kDtInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kDtInf;
            z[1] = kDtInf;
            continue;
        }
        // z[0] is -inf while k >= 0, so this terminates with k >= 0.
        double s;
        for (;;) {
            const int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kDtInf;
    }
    if (k < 0) {
        for (int q = 0; q < n; ++q) d[q] = kDtInf;
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const int p = v[j];
        d[q] = (q - p) * static_cast<double>(q - p) + f[p];
    }
}

}  // namespace detail

// Exact squared Euclidean distance (voxel units, center-to-center) from
// every voxel to the nearest site voxel. Sites are the foreground bits when
// sites_are_foreground, the background bits otherwise. Voxels with no site
// anywhere get +inf.
inline ScalarGrid squared_distance_to(const BinaryMask& mask, bool sites_are_foreground) {
    const auto [nx, ny, nz] = mask.dims;
    ScalarGrid d(mask.dims, mask.spacing_mm);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        const bool site = (mask.bits[i] != 0) == sites_are_foreground;
        d.values[i] = site ? 0.0 : detail::kDtInf;
    }

    const int nmax = std::max(nx, std::max(ny, nz));
    std::vector<double> f(nmax), out(nmax), z(nmax + 1);
    std::vector<int> v(nmax);

    // x pass
    f.resize(nx);
    out.resize(nx);
    for (int zz = 0; zz < nz; ++zz)
        for (int yy = 0; yy < ny; ++yy) {
            for (int xx = 0; xx < nx; ++xx) f[xx] = d.at(xx, yy, zz);
            detail::dt1d(f, out, v, z);
            for (int xx = 0; xx < nx; ++xx) d.at(xx, yy, zz) = out[xx];
        }
    // y pass
    f.resize(ny);
    out.resize(ny);
    for (int zz = 0; zz < nz; ++zz)
        for (int xx = 0; xx < nx; ++xx) {
            for (int yy = 0; yy < ny; ++yy) f[yy] = d.at(xx, yy, zz);
            detail::dt1d(f, out, v, z);
            for (int yy = 0; yy < ny; ++yy) d.at(xx, yy, zz) = out[yy];
        }
    // z pass
    f.resize(nz);
    out.resize(nz);
    for (int yy = 0; yy < ny; ++yy)
        for (int xx = 0; xx < nx; ++xx) {
            for (int zz = 0; zz < nz; ++zz) f[zz] = d.at(xx, yy, zz);
            detail::dt1d(f, out, v, z);
            for (int zz = 0; zz < nz; ++zz) d.at(xx, yy, zz) = out[zz];
        }
    return d;
}

// Signed distance field of a mask, positive inside, in voxel units,
// clamped to [-tau, +tau]. All-foreground masks give +tau everywhere and
// all-background masks -tau everywhere.
inline ScalarGrid sdf_from_mask(const BinaryMask& mask, const SdfConfig& cfg) {
    cfg.validate();
    const double tau = cfg.truncation;
    const ScalarGrid d_bg = squared_distance_to(mask, /*sites_are_foreground=*/false);
    const ScalarGrid d_fg = squared_distance_to(mask, /*sites_are_foreground=*/true);
    ScalarGrid s(mask.dims, mask.spacing_mm);
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        if (mask.bits[i] != 0) {
            const double d2 = d_bg.values[i];
            s.values[i] = d2 == detail::kDtInf ? tau : std::min(std::sqrt(d2), tau);
        } else {
            const double d2 = d_fg.values[i];
            s.values[i] = d2 == detail::kDtInf ? -tau : -std::min(std::sqrt(d2), tau);
        }
    }
    return s;
}

// Centers (mm) of foreground voxels with at least one 6-neighbor that is
// background or out of bounds.
inline std::vector<std::array<double, 3>> surface_points(const BinaryMask& mask) {
    if (mask.count() == 0) throw DataError("surface_points: empty mask");
    const auto [nx, ny, nz] = mask.dims;
    const double s = mask.spacing_mm;
    std::vector<std::array<double, 3>> pts;
    auto bg_or_oob = [&](int x, int y, int z) {
        if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return true;
        return !mask.get(x, y, z);
    };
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                if (!mask.get(x, y, z)) continue;
                if (bg_or_oob(x - 1, y, z) || bg_or_oob(x + 1, y, z) || bg_or_oob(x, y - 1, z) ||
                    bg_or_oob(x, y + 1, z) || bg_or_oob(x, y, z - 1) || bg_or_oob(x, y, z + 1)) {
                    pts.push_back({(x + 0.5) * s, (y + 0.5) * s, (z + 0.5) * s});
                }
            }
    return pts;
}

}  // namespace organgen
