#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "organgen/errors.hpp"

namespace organgen {

struct GridDims {
    int nx = 0, ny = 0, nz = 0;

    std::size_t total() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    bool operator==(const GridDims&) const = default;

    std::string str() const {
        return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
    }
};

inline void check_dims(const GridDims& d, const char* what) {
    if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0)
        throw DataError(std::string(what) + ": non-positive grid dims " + d.str());
}

// Validates before the size is used to allocate, so bad dims surface as
// DataError rather than a std::length_error out of the vector constructor.
inline std::size_t checked_total(const GridDims& d, double spacing, const char* what) {
    check_dims(d, what);
    if (!(spacing > 0.0)) throw DataError(std::string(what) + ": spacing must be > 0");
    return d.total();
}

// Dense 3D scalar field, x-fastest storage, isotropic spacing in mm.
// Values are stored in double; all public operations keep them finite.
struct ScalarGrid {
    GridDims dims;
    double spacing_mm = 1.0;
    std::vector<double> values;

    ScalarGrid() = default;
    ScalarGrid(GridDims d, double spacing, double fill = 0.0)
        : dims(d), spacing_mm(spacing), values(checked_total(d, spacing, "ScalarGrid"), fill) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.nx) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.ny) * z);
    }
    double& at(int x, int y, int z) { return values[index(x, y, z)]; }
    double at(int x, int y, int z) const { return values[index(x, y, z)]; }
};

// Dense 3D boolean occupancy on the same lattice convention as ScalarGrid.
struct BinaryMask {
    GridDims dims;
    double spacing_mm = 1.0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(GridDims d, double spacing, bool fill = false)
        : dims(d), spacing_mm(spacing), bits(checked_total(d, spacing, "BinaryMask"), fill ? 1 : 0) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.nx) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.ny) * z);
    }
    void set(int x, int y, int z, bool v) { bits[index(x, y, z)] = v ? 1 : 0; }
    bool get(int x, int y, int z) const { return bits[index(x, y, z)] != 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b != 0;
        return n;
    }
};

struct SdfConfig {
    double truncation = 10.0;          // tau, in voxel units
    double occupancy_sharpness = 10.0;  // k in sigma(k * S)

    void validate() const {
        if (!(truncation > 0.0)) throw ConfigError("SdfConfig: truncation must be > 0");
        if (!(occupancy_sharpness > 0.0))
            throw ConfigError("SdfConfig: occupancy_sharpness must be > 0");
    }
};

inline void require_same_layout(const GridDims& a, double sa, const GridDims& b, double sb,
                                const char* what) {
    if (!(a == b))
        throw DataError(std::string(what) + ": dims mismatch " + a.str() + " vs " + b.str());
    if (sa != sb)
        throw DataError(std::string(what) + ": spacing mismatch " + std::to_string(sa) + " vs " +
                        std::to_string(sb));
}

inline void ensure_finite(const ScalarGrid& g, const char* what) {
    for (double v : g.values)
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite grid value");
}

// Numerically safe logistic.
inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Soft occupancy sigma(k * S); values in (0, 1).
inline ScalarGrid occupancy(const ScalarGrid& sdf, const SdfConfig& cfg) {
    cfg.validate();
    ScalarGrid out(sdf.dims, sdf.spacing_mm);
    const double k = cfg.occupancy_sharpness;
    for (std::size_t i = 0; i < sdf.values.size(); ++i) out.values[i] = logistic(k * sdf.values[i]);
    return out;
}

// Bit set where S >= 0.
inline BinaryMask threshold(const ScalarGrid& sdf) {
    BinaryMask out(sdf.dims, sdf.spacing_mm);
    for (std::size_t i = 0; i < sdf.values.size(); ++i) out.bits[i] = sdf.values[i] >= 0.0 ? 1 : 0;
    return out;
}

// Pointwise maximum of the given SDFs; the empty sequence yields the empty
// context, a uniform -tau grid.
inline ScalarGrid compose_context(const std::vector<ScalarGrid>& sdfs, const SdfConfig& cfg,
                                  const GridDims& dims, double spacing_mm) {
    cfg.validate();
    if (sdfs.empty()) return ScalarGrid(dims, spacing_mm, -cfg.truncation);
    ScalarGrid out(dims, spacing_mm, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < sdfs.size(); ++i) {
        if (!(sdfs[i].dims == dims) || sdfs[i].spacing_mm != spacing_mm)
            throw DataError("compose_context: grid " + std::to_string(i) + " has layout " +
                            sdfs[i].dims.str() + " @ " + std::to_string(sdfs[i].spacing_mm) +
                            " mm, expected " + dims.str() + " @ " + std::to_string(spacing_mm) +
                            " mm");
        for (std::size_t j = 0; j < out.values.size(); ++j)
            out.values[j] = std::max(out.values[j], sdfs[i].values[j]);
    }
    ensure_finite(out, "compose_context");
    return out;
}

inline double voxel_volume_ml(double spacing_mm) {
    return spacing_mm * spacing_mm * spacing_mm / 1000.0;
}

inline double volume_ml(const BinaryMask& mask) {
    return static_cast<double>(mask.count()) * voxel_volume_ml(mask.spacing_mm);
}

// Differentiable volume: sum of soft occupancy times voxel volume.
inline double soft_volume_ml(const ScalarGrid& occ) {
    double s = 0.0;
    for (double v : occ.values) s += v;
    return s * voxel_volume_ml(occ.spacing_mm);
}

}  // namespace organgen
