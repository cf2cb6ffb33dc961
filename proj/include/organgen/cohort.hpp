#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "organgen/grid.hpp"
#include "organgen/parallel.hpp"
#include "organgen/rng.hpp"
#include "organgen/stats.hpp"
#include "organgen/vgf.hpp"

namespace organgen {

// Procedural phantom cohort: one ellipsoidal body per case plus rotated
// ellipsoidal organs whose volumes track body volume linearly with Gaussian
// residuals, so the volume-control math downstream has known ground truth.

struct OrganSpec {
    std::string name;
    double a_true = 0.0;      // mL of organ per mL of body volume
    double b_true = 0.0;      // mL
    double sigma_true = 0.0;  // residual noise, mL
    double ecc_lo = 0.7, ecc_hi = 1.4;  // axis-ratio bounds
    // Fractional placement box for the organ center, relative to the body's
    // bounding box.
    std::array<double, 3> region_lo{0.3, 0.3, 0.3};
    std::array<double, 3> region_hi{0.7, 0.7, 0.7};

    void validate() const {
        if (name.empty()) throw ConfigError("OrganSpec: empty name");
        if (!(a_true >= 0.0)) throw ConfigError("OrganSpec " + name + ": a_true must be >= 0");
        if (!(sigma_true >= 0.0))
            throw ConfigError("OrganSpec " + name + ": sigma_true must be >= 0");
        if (!(ecc_lo >= 0.2) || !(ecc_hi <= 5.0) || !(ecc_lo <= ecc_hi))
            throw ConfigError("OrganSpec " + name + ": eccentricity bounds must satisfy 0.2 <= lo <= hi <= 5");
        for (int k = 0; k < 3; ++k)
            if (!(region_lo[k] >= 0.0) || !(region_hi[k] <= 1.0) ||
                !(region_lo[k] <= region_hi[k]))
                throw ConfigError("OrganSpec " + name + ": placement_region must lie in the unit cube");
    }
};

struct BodySpec {
    double median_ml = 700.0;
    double sigma_log = 0.15;
    std::array<double, 3> axis_ratios{1.0, 0.9, 1.1};

    void validate() const {
        if (!(median_ml > 0.0)) throw ConfigError("BodySpec: median_ml must be > 0");
        if (!(sigma_log >= 0.0)) throw ConfigError("BodySpec: sigma_log must be >= 0");
        for (double r : axis_ratios)
            if (!(r > 0.0)) throw ConfigError("BodySpec: axis_ratios must be > 0");
    }
};

struct CohortConfig {
    GridDims dims{32, 32, 32};
    double spacing_mm = 4.0;
    BodySpec body;
    std::vector<OrganSpec> organs;  // generation order, largest first
    int max_attempts = 500;         // placement attempts per organ
    int shrink_after = 50;          // attempts before shrinking kicks in
    double max_shrink = 0.2;        // axis shrink fraction at the last attempt
    int max_case_rejections = 10;

    void validate() const {
        if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0)
            throw ConfigError("CohortConfig: non-positive grid dims " + dims.str());
        if (!(spacing_mm > 0.0)) throw ConfigError("CohortConfig: spacing_mm must be > 0");
        body.validate();
        if (organs.empty()) throw ConfigError("CohortConfig: no organ specs");
        for (const auto& o : organs) o.validate();
        for (std::size_t i = 0; i < organs.size(); ++i)
            for (std::size_t j = i + 1; j < organs.size(); ++j)
                if (organs[i].name == organs[j].name)
                    throw ConfigError("CohortConfig: duplicate organ name " + organs[i].name);
        if (max_attempts < 1 || shrink_after < 0 || shrink_after > max_attempts)
            throw ConfigError("CohortConfig: need 0 <= shrink_after <= max_attempts, max_attempts >= 1");
        if (!(max_shrink >= 0.0) || !(max_shrink < 1.0))
            throw ConfigError("CohortConfig: max_shrink must be in [0, 1)");
        if (max_case_rejections < 1)
            throw ConfigError("CohortConfig: max_case_rejections must be >= 1");
    }

    static CohortConfig desk_default() {
        CohortConfig c;
        OrganSpec liver;
        liver.name = "liver";
        liver.a_true = 0.18;
        liver.b_true = 0.0;
        liver.sigma_true = 8.0;
        liver.region_lo = {0.30, 0.30, 0.35};
        liver.region_hi = {0.70, 0.70, 0.65};
        OrganSpec spleen;
        spleen.name = "spleen";
        spleen.a_true = 0.05;
        spleen.b_true = 5.0;
        spleen.sigma_true = 4.0;
        spleen.region_lo = {0.15, 0.15, 0.30};
        spleen.region_hi = {0.85, 0.85, 0.70};
        c.organs = {liver, spleen};
        return c;
    }
};

struct PhantomCase {
    int case_id = 0;
    BinaryMask body;
    std::vector<std::string> organ_names;
    std::vector<BinaryMask> organ_masks;
    std::vector<double> true_volumes;  // mL, = volume_ml of each mask

    int organ_index(const std::string& name) const {
        for (std::size_t i = 0; i < organ_names.size(); ++i)
            if (organ_names[i] == name) return static_cast<int>(i);
        return -1;
    }
};

// Throws unless organ masks are inside the body, pairwise disjoint, and
// consistent with the recorded volumes.
inline void audit_case(const PhantomCase& pc) {
    const std::size_t n = pc.body.bits.size();
    std::vector<std::uint8_t> seen(n, 0);
    for (std::size_t oi = 0; oi < pc.organ_masks.size(); ++oi) {
        const auto& m = pc.organ_masks[oi];
        require_same_layout(pc.body.dims, pc.body.spacing_mm, m.dims, m.spacing_mm,
                            "audit_case");
        for (std::size_t i = 0; i < n; ++i) {
            if (!m.bits[i]) continue;
            if (!pc.body.bits[i])
                throw DataError("audit_case " + std::to_string(pc.case_id) + ": organ " +
                                pc.organ_names[oi] + " escapes the body");
            if (seen[i])
                throw DataError("audit_case " + std::to_string(pc.case_id) + ": organ " +
                                pc.organ_names[oi] + " overlaps a prior organ");
            seen[i] = 1;
        }
        const double v = volume_ml(m);
        if (std::abs(v - pc.true_volumes[oi]) > 1e-9)
            throw DataError("audit_case " + std::to_string(pc.case_id) + ": recorded volume " +
                            std::to_string(pc.true_volumes[oi]) + " != mask volume " +
                            std::to_string(v) + " for " + pc.organ_names[oi]);
    }
}

namespace detail {

struct Rotation {
    std::array<std::array<double, 3>, 3> col;  // orthonormal columns
};

// Deterministic random rotation: Gram-Schmidt on three Gaussian vectors,
// right-handed by construction.
inline Rotation random_rotation(Rng& rng) {
    std::array<std::array<double, 3>, 3> v;
    for (auto& row : v)
        for (auto& x : row) x = rng.normal();
    auto dot = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    };
    auto norm = [&](std::array<double, 3>& a) {
        const double l = std::sqrt(dot(a, a));
        for (auto& x : a) x /= l;
    };
    for (int pass = 0;; ++pass) {
        if (std::sqrt(dot(v[0], v[0])) > 1e-6) break;
        for (auto& x : v[0]) x = rng.normal();
        (void)pass;
    }
    norm(v[0]);
    double d = dot(v[1], v[0]);
    for (int k = 0; k < 3; ++k) v[1][k] -= d * v[0][k];
    while (std::sqrt(dot(v[1], v[1])) < 1e-6) {
        for (auto& x : v[1]) x = rng.normal();
        d = dot(v[1], v[0]);
        for (int k = 0; k < 3; ++k) v[1][k] -= d * v[0][k];
    }
    norm(v[1]);
    v[2] = {v[0][1] * v[1][2] - v[0][2] * v[1][1], v[0][2] * v[1][0] - v[0][0] * v[1][2],
            v[0][0] * v[1][1] - v[0][1] * v[1][0]};
    Rotation r;
    for (int k = 0; k < 3; ++k) r.col[k] = v[k];
    return r;
}

struct Bbox {
    double lo[3], hi[3];  // mm
};

inline Bbox mask_bbox(const BinaryMask& m) {
    int lo[3] = {m.dims.nx, m.dims.ny, m.dims.nz};
    int hi[3] = {-1, -1, -1};
    for (int z = 0; z < m.dims.nz; ++z)
        for (int y = 0; y < m.dims.ny; ++y)
            for (int x = 0; x < m.dims.nx; ++x) {
                if (!m.get(x, y, z)) continue;
                const int c[3] = {x, y, z};
                for (int k = 0; k < 3; ++k) {
                    lo[k] = std::min(lo[k], c[k]);
                    hi[k] = std::max(hi[k], c[k]);
                }
            }
    if (hi[0] < 0) throw DataError("mask_bbox: empty mask");
    Bbox b;
    for (int k = 0; k < 3; ++k) {
        b.lo[k] = (lo[k] + 0.5) * m.spacing_mm;
        b.hi[k] = (hi[k] + 0.5) * m.spacing_mm;
    }
    return b;
}

// Selects exactly n voxels with the smallest ellipsoidal metric value
// u = |diag(1/d) R^T (x - c)|^2, ties broken by voxel index, so the placed
// volume is n * voxel-volume by construction.
inline std::vector<std::size_t> smallest_metric_voxels(const GridDims& dims, double spacing,
                                                       const std::array<double, 3>& center_mm,
                                                       const Rotation& rot,
                                                       const std::array<double, 3>& inv_axis,
                                                       std::size_t n) {
    const std::size_t total = dims.total();
    std::vector<std::pair<double, std::size_t>> u(total);
    std::size_t i = 0;
    for (int z = 0; z < dims.nz; ++z)
        for (int y = 0; y < dims.ny; ++y)
            for (int x = 0; x < dims.nx; ++x, ++i) {
                const double p[3] = {(x + 0.5) * spacing - center_mm[0],
                                     (y + 0.5) * spacing - center_mm[1],
                                     (z + 0.5) * spacing - center_mm[2]};
                double s = 0.0;
                for (int k = 0; k < 3; ++k) {
                    const double proj = rot.col[k][0] * p[0] + rot.col[k][1] * p[1] +
                                        rot.col[k][2] * p[2];
                    const double w = proj * inv_axis[k];
                    s += w * w;
                }
                u[i] = {s, i};
            }
    n = std::min(n, total);
    std::nth_element(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(n), u.end());
    std::sort(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<std::size_t> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = u[k].second;
    return out;
}

inline BinaryMask make_body(const CohortConfig& cfg, Rng& rng) {
    const double v_ml =
        cfg.body.median_ml * std::exp(cfg.body.sigma_log * rng.normal());
    const auto& q = cfg.body.axis_ratios;
    const double qprod = q[0] * q[1] * q[2];
    const double r_mm =
        std::cbrt(v_ml * 1000.0 / (4.0 / 3.0 * std::numbers::pi * qprod));
    const double cx = cfg.dims.nx * cfg.spacing_mm * 0.5;
    const double cy = cfg.dims.ny * cfg.spacing_mm * 0.5;
    const double cz = cfg.dims.nz * cfg.spacing_mm * 0.5;
    BinaryMask body(cfg.dims, cfg.spacing_mm, false);
    for (int z = 0; z < cfg.dims.nz; ++z)
        for (int y = 0; y < cfg.dims.ny; ++y)
            for (int x = 0; x < cfg.dims.nx; ++x) {
                const double dx = ((x + 0.5) * cfg.spacing_mm - cx) / (r_mm * q[0]);
                const double dy = ((y + 0.5) * cfg.spacing_mm - cy) / (r_mm * q[1]);
                const double dz = ((z + 0.5) * cfg.spacing_mm - cz) / (r_mm * q[2]);
                if (dx * dx + dy * dy + dz * dz <= 1.0) body.set(x, y, z, true);
            }
    return body;
}

// One organ placement; returns false when every attempt failed.
inline bool place_organ(const CohortConfig& cfg, const OrganSpec& spec, const Bbox& body_box,
                        const BinaryMask& body, const std::vector<std::uint8_t>& occupied,
                        double target_ml, Rng& rng, BinaryMask& out) {
    const double voxvol = voxel_volume_ml(cfg.spacing_mm);
    const auto n_target = static_cast<double>(std::max<long long>(
        1, std::llround(std::max(0.0, target_ml) / voxvol)));
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        double shrink = 1.0;
        if (attempt >= cfg.shrink_after && cfg.max_attempts > cfg.shrink_after)
            shrink = 1.0 - cfg.max_shrink *
                               static_cast<double>(attempt - cfg.shrink_after + 1) /
                               static_cast<double>(cfg.max_attempts - cfg.shrink_after);
        const auto n = static_cast<std::size_t>(std::max<long long>(
            1, std::llround(n_target * shrink * shrink * shrink)));

        std::array<double, 3> center;
        for (int k = 0; k < 3; ++k) {
            const double lo =
                body_box.lo[k] + spec.region_lo[k] * (body_box.hi[k] - body_box.lo[k]);
            const double hi =
                body_box.lo[k] + spec.region_hi[k] * (body_box.hi[k] - body_box.lo[k]);
            center[k] = rng.uniform(lo, hi);
        }
        const Rotation rot = random_rotation(rng);
        const std::array<double, 3> axes = {1.0, rng.uniform(spec.ecc_lo, spec.ecc_hi),
                                            rng.uniform(spec.ecc_lo, spec.ecc_hi)};
        const std::array<double, 3> inv_axis = {1.0 / axes[0], 1.0 / axes[1], 1.0 / axes[2]};

        const auto voxels = smallest_metric_voxels(cfg.dims, cfg.spacing_mm, center, rot,
                                                   inv_axis, n);
        bool ok = voxels.size() == n;
        for (std::size_t idx : voxels) {
            if (!body.bits[idx] || occupied[idx]) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        out = BinaryMask(cfg.dims, cfg.spacing_mm, false);
        for (std::size_t idx : voxels) out.bits[idx] = 1;
        return true;
    }
    return false;
}

// Builds one case from its (index, regeneration) sub-seed; returns false on
// placement failure so the caller can re-draw with the next sub-seed.
inline bool try_case(const CohortConfig& cfg, std::uint64_t seed, int case_index,
                     std::uint64_t sub, PhantomCase& out) {
    const auto ci = static_cast<std::uint64_t>(case_index);
    Rng body_rng = Rng::of(seed, "body", ci, sub);
    PhantomCase pc;
    pc.case_id = case_index;
    pc.body = make_body(cfg, body_rng);
    if (pc.body.count() == 0) return false;
    const Bbox body_box = mask_bbox(pc.body);
    const double v_body = volume_ml(pc.body);

    std::vector<std::uint8_t> occupied(pc.body.bits.size(), 0);
    for (std::size_t oi = 0; oi < cfg.organs.size(); ++oi) {
        const OrganSpec& spec = cfg.organs[oi];
        Rng vol_rng = Rng::of(seed, "volume", ci, sub, static_cast<std::uint64_t>(oi));
        Rng place_rng = Rng::of(seed, "place", ci, sub, static_cast<std::uint64_t>(oi));
        const double target_ml =
            spec.a_true * v_body + spec.b_true + spec.sigma_true * vol_rng.normal();
        BinaryMask mask;
        if (!place_organ(cfg, spec, body_box, pc.body, occupied, target_ml, place_rng, mask))
            return false;
        for (std::size_t i = 0; i < mask.bits.size(); ++i)
            if (mask.bits[i]) occupied[i] = 1;
        pc.organ_names.push_back(spec.name);
        pc.true_volumes.push_back(volume_ml(mask));
        pc.organ_masks.push_back(std::move(mask));
    }
    out = std::move(pc);
    return true;
}

}  // namespace detail

// Deterministic cohort generation; parallel across cases with per-case
// keyed streams, so output is identical for any thread count.
inline std::vector<PhantomCase> generate_cohort(const CohortConfig& cfg, std::uint64_t seed,
                                                int n_cases, int threads = 1) {
    cfg.validate();
    if (n_cases < 1) throw ConfigError("generate_cohort: n_cases must be >= 1");
    std::vector<PhantomCase> cases(static_cast<std::size_t>(n_cases));
    parallel_for(static_cast<std::size_t>(n_cases), threads, [&](std::size_t i, std::size_t) {
        PhantomCase pc;
        std::uint64_t sub = 0;
        for (;;) {
            if (detail::try_case(cfg, seed, static_cast<int>(i), sub, pc)) break;
            ++sub;
            if (sub > static_cast<std::uint64_t>(cfg.max_case_rejections))
                throw DataError("generate_cohort: case " + std::to_string(i) + " rejected " +
                                std::to_string(cfg.max_case_rejections) +
                                " times in a row; specs likely infeasible");
        }
        audit_case(pc);
        cases[i] = std::move(pc);
    });
    return cases;
}

inline std::vector<OrganSpec> shift_cohort_volumes(std::vector<OrganSpec> specs, double shift_ml,
                                                   const std::string& organ) {
    for (auto& s : specs) {
        if (s.name != organ) continue;
        s.b_true += shift_ml;
        return specs;
    }
    throw ConfigError("shift_cohort_volumes: unknown organ " + organ);
}

inline std::vector<double> body_volumes(const std::vector<PhantomCase>& cases) {
    std::vector<double> v;
    v.reserve(cases.size());
    for (const auto& c : cases) v.push_back(volume_ml(c.body));
    return v;
}

inline std::vector<double> organ_volumes(const std::vector<PhantomCase>& cases,
                                         const std::string& organ) {
    std::vector<double> v;
    v.reserve(cases.size());
    for (const auto& c : cases) {
        const int oi = c.organ_index(organ);
        if (oi < 0)
            throw DataError("organ_volumes: case " + std::to_string(c.case_id) +
                            " has no organ " + organ);
        v.push_back(c.true_volumes[static_cast<std::size_t>(oi)]);
    }
    return v;
}

// --- on-disk layout: <root>/case_XXXX/{body.vgf, organ_<name>.vgf,
// --- manifest.json} ---------------------------------------------------------

inline std::string case_dir_name(int case_id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "case_%04d", case_id);
    return buf;
}

inline void save_case(const std::string& dir, const PhantomCase& pc) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_vgf(dir + "/body.vgf", pc.body);
    for (std::size_t i = 0; i < pc.organ_names.size(); ++i)
        write_vgf(dir + "/organ_" + pc.organ_names[i] + ".vgf", pc.organ_masks[i]);
    nlohmann::json j{{"case_id", pc.case_id},
                     {"dims", {pc.body.dims.nx, pc.body.dims.ny, pc.body.dims.nz}},
                     {"spacing_mm", pc.body.spacing_mm},
                     {"organs", pc.organ_names}};
    nlohmann::json vols = nlohmann::json::object();
    for (std::size_t i = 0; i < pc.organ_names.size(); ++i)
        vols[pc.organ_names[i]] = pc.true_volumes[i];
    j["true_volumes"] = vols;
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    if (!f) throw DataError("save_case: cannot write " + dir + "/manifest.json");
    f << j.dump(2) << "\n";
}

inline PhantomCase load_case(const std::string& dir) {
    const std::string mpath = dir + "/manifest.json";
    std::ifstream f(mpath);
    if (!f) throw DataError("load_case: missing manifest " + mpath);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_case: malformed manifest " + mpath + ": " + e.what());
    }
    PhantomCase pc;
    GridDims dims;
    double spacing;
    try {
        pc.case_id = j.at("case_id").get<int>();
        const auto dv = j.at("dims").get<std::vector<int>>();
        if (dv.size() != 3) throw DataError("load_case: dims must have 3 entries in " + mpath);
        dims = GridDims{dv[0], dv[1], dv[2]};
        spacing = j.at("spacing_mm").get<double>();
        pc.organ_names = j.at("organs").get<std::vector<std::string>>();
        for (const auto& name : pc.organ_names)
            pc.true_volumes.push_back(j.at("true_volumes").at(name).get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_case: malformed manifest " + mpath + ": " + e.what());
    }

    auto read_mask = [&](const std::string& path) {
        if (!std::filesystem::exists(path))
            throw DataError("load_case: manifest references missing file " + path);
        BinaryMask m = read_vgf_mask(path);
        if (!(m.dims == dims))
            throw DataError("load_case: dims mismatch for " + path + ": manifest " +
                            dims.str() + " vs file " + m.dims.str());
        if (m.spacing_mm != spacing)
            throw DataError("load_case: spacing mismatch for " + path + ": manifest " +
                            std::to_string(spacing) + " vs file " +
                            std::to_string(m.spacing_mm));
        return m;
    };
    pc.body = read_mask(dir + "/body.vgf");
    for (const auto& name : pc.organ_names)
        pc.organ_masks.push_back(read_mask(dir + "/organ_" + name + ".vgf"));
    audit_case(pc);
    return pc;
}

inline void save_cohort(const std::string& root, const std::vector<PhantomCase>& cases) {
    std::filesystem::create_directories(root);
    for (const auto& pc : cases) save_case(root + "/" + case_dir_name(pc.case_id), pc);
}

inline std::vector<PhantomCase> load_cohort(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("load_cohort: not a directory: " + root);
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && e.path().filename().string().rfind("case_", 0) == 0)
            dirs.push_back(e.path().string());
    }
    if (dirs.empty()) throw DataError("load_cohort: no case_* directories under " + root);
    std::sort(dirs.begin(), dirs.end());
    std::vector<PhantomCase> cases;
    cases.reserve(dirs.size());
    for (const auto& d : dirs) cases.push_back(load_case(d));
    return cases;
}

}  // namespace organgen
