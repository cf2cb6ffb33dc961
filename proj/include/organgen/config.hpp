#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "organgen/cohort.hpp"
#include "organgen/denoiser.hpp"
#include "organgen/training.hpp"

namespace organgen {

using Json = nlohmann::json;

// Defaults for every recognised key. This document doubles as the schema:
// user configs may only set keys that exist here (typo protection), except
// for the free-form map sample.v and the organ list cohort.organs.
inline Json default_run_config() {
    Json j;
    j["cohort"] = {
        {"dims", {32, 32, 32}},
        {"spacing_mm", 4.0},
        {"body",
         {{"median_ml", 700.0}, {"sigma_log", 0.15}, {"axis_ratios", {1.0, 0.9, 1.1}}}},
        {"organs", Json::array()},  // empty -> built-in liver+spleen pair
        {"max_attempts", 500},
        {"shrink_after", 50},
        {"max_shrink", 0.2},
        {"max_case_rejections", 10},
    };
    j["vcs"] = {{"organ", ""}};
    j["schedule"] = {{"T", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}};
    j["model"] = {
        {"widths", {8, 16, 32}},
        {"t_embed_dim", 32},
        {"v_embed_dim", 32},
        {"io_scale", 10.0},
        {"sdf", {{"truncation", 10.0}, {"occupancy_sharpness", 10.0}}},
    };
    j["train"] = {
        {"epochs", 200},
        {"lr", 1e-4},
        {"weight_decay", 1e-4},
        {"dropout_p", 0.3},
        {"warmup_epochs", -1},
        {"val_fraction", 0.2},
        {"seed", 0},
        {"loss",
         {{"w_sdf", 1.0},
          {"w_bce", 1.0},
          {"w_overlap", 1.0},
          {"w_vcs", 1.0},
          {"bce_clamp", 1e-7},
          {"overlap_eps", 1e-6}}},
    };
    j["sample"] = {
        {"ddim_steps", 10},
        {"seed", 0},
        {"order", Json::array()},  // empty -> cohort organ order
        {"v", Json::object()},     // organ name -> requested volume scalar
    };
    j["metrics"] = {{"nn_realism", true}, {"diversity", true}};
    j["match"] = {
        {"v_lo", -3.0}, {"v_hi", 3.0}, {"step", 0.5}, {"ddim_steps", 10}, {"seed", 0}};
    return j;
}

// Per-organ schema for entries of cohort.organs; name/a/b/sigma are
// required, the rest default per OrganSpec.
inline Json organ_entry_schema() {
    return Json{{"name", ""},
                {"a", 0.0},
                {"b", 0.0},
                {"sigma", 0.0},
                {"ecc_lo", 0.7},
                {"ecc_hi", 1.4},
                {"region_lo", {0.3, 0.3, 0.3}},
                {"region_hi", {0.7, 0.7, 0.7}}};
}

namespace detail {

inline bool same_category(const Json& a, const Json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

inline const char* category_name(const Json& v) {
    if (v.is_object()) return "object";
    if (v.is_array()) return "array";
    if (v.is_string()) return "string";
    if (v.is_boolean()) return "boolean";
    if (v.is_number()) return "number";
    return "null";
}

inline void check_against_schema(const Json& user, const Json& schema, const std::string& path);

inline void check_organ_entries(const Json& arr, const std::string& path) {
    const Json schema = organ_entry_schema();
    int idx = 0;
    for (const auto& e : arr) {
        const std::string p = path + "[" + std::to_string(idx++) + "]";
        if (!e.is_object()) throw ConfigError("config: " + p + " must be an object");
        for (const char* req : {"name", "a", "b", "sigma"})
            if (!e.contains(req))
                throw ConfigError("config: " + p + " is missing required key '" + req + "'");
        check_against_schema(e, schema, p);
    }
}

inline void check_against_schema(const Json& user, const Json& schema,
                                 const std::string& path) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string p = path.empty() ? it.key() : path + "." + it.key();
        if (!schema.contains(it.key()))
            throw ConfigError("config: unknown key '" + p + "'");
        const Json& sv = schema.at(it.key());
        const Json& uv = it.value();
        if (!same_category(uv, sv))
            throw ConfigError("config: key '" + p + "' must be a " +
                              std::string(category_name(sv)) + ", got " +
                              category_name(uv));
        if (p == "cohort.organs") {
            check_organ_entries(uv, p);
        } else if (p == "sample.v") {
            for (auto vit = uv.begin(); vit != uv.end(); ++vit)
                if (!vit.value().is_number())
                    throw ConfigError("config: key '" + p + "." + vit.key() +
                                      "' must be a number");
        } else if (sv.is_object()) {
            check_against_schema(uv, sv, p);
        } else if (sv.is_array() && !sv.empty()) {
            int idx = 0;
            for (const auto& e : uv) {
                if (!same_category(e, sv.at(0)))
                    throw ConfigError("config: element " + p + "[" + std::to_string(idx) +
                                      "] must be a " + category_name(sv.at(0)));
                ++idx;
            }
        }
    }
}

// Deep merge: objects merge key-wise, everything else (arrays, scalars,
// free-form maps) is replaced by the user value.
inline Json merge_over(const Json& defaults, const Json& user) {
    if (!defaults.is_object() || !user.is_object()) return user;
    Json out = defaults;
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (it.key() == "organs" || it.key() == "v")
            out[it.key()] = it.value();
        else if (out.contains(it.key()) && out[it.key()].is_object())
            out[it.key()] = merge_over(out[it.key()], it.value());
        else
            out[it.key()] = it.value();
    }
    return out;
}

template <typename T, std::size_t N>
std::array<T, N> to_array(const Json& j, const std::string& path) {
    if (!j.is_array() || j.size() != N)
        throw ConfigError("config: '" + path + "' must be an array of " +
                          std::to_string(N) + " numbers");
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = j.at(i).get<T>();
    return out;
}

}  // namespace detail

// Typed view of the validated, defaults-merged document.
struct RunConfig {
    CohortConfig cohort;
    std::string vcs_organ;  // default organ for fit-vcs when --organ is omitted

    int schedule_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    DenoiserConfig model;
    SdfConfig sdf;
    TrainConfig train;

    int sample_steps = 10;
    std::uint64_t sample_seed = 0;
    std::vector<std::string> sample_order;        // empty -> cohort organ order
    std::map<std::string, double> sample_v;       // absent organ -> 0

    bool metrics_nn_realism = true;
    bool metrics_diversity = true;

    double match_lo = -3.0;
    double match_hi = 3.0;
    double match_step = 0.5;
    int match_steps = 10;
    std::uint64_t match_seed = 0;

    Json effective;  // the merged document, for echoing next to outputs

    void validate() const {
        cohort.validate();
        model.validate();
        sdf.validate();
        train.validate();
        make_schedule(schedule_T, beta_start, beta_end);  // range checks
        if (sample_steps < 1) throw ConfigError("config: sample.ddim_steps must be >= 1");
        if (match_steps < 1) throw ConfigError("config: match.ddim_steps must be >= 1");
        if (!(match_step > 0.0)) throw ConfigError("config: match.step must be > 0");
        if (!(match_lo <= match_hi))
            throw ConfigError("config: need match.v_lo <= match.v_hi");
    }
};

// Validates `user` against the schema, merges it over the defaults, and
// extracts the typed view. Throws ConfigError with the offending key path.
inline RunConfig run_config_from_json(const Json& user) {
    if (!user.is_object()) throw ConfigError("config: top level must be a JSON object");
    const Json defaults = default_run_config();
    detail::check_against_schema(user, defaults, "");
    const Json j = detail::merge_over(defaults, user);

    RunConfig rc;
    rc.effective = j;
    try {
        const Json& co = j.at("cohort");
        rc.cohort = CohortConfig::desk_default();
        const auto dims = detail::to_array<int, 3>(co.at("dims"), "cohort.dims");
        rc.cohort.dims = GridDims{dims[0], dims[1], dims[2]};
        rc.cohort.spacing_mm = co.at("spacing_mm").get<double>();
        rc.cohort.body.median_ml = co.at("body").at("median_ml").get<double>();
        rc.cohort.body.sigma_log = co.at("body").at("sigma_log").get<double>();
        rc.cohort.body.axis_ratios =
            detail::to_array<double, 3>(co.at("body").at("axis_ratios"),
                                        "cohort.body.axis_ratios");
        rc.cohort.max_attempts = co.at("max_attempts").get<int>();
        rc.cohort.shrink_after = co.at("shrink_after").get<int>();
        rc.cohort.max_shrink = co.at("max_shrink").get<double>();
        rc.cohort.max_case_rejections = co.at("max_case_rejections").get<int>();
        if (!co.at("organs").empty()) {
            rc.cohort.organs.clear();
            const Json entry_defaults = organ_entry_schema();
            for (const auto& e : co.at("organs")) {
                const Json m = detail::merge_over(entry_defaults, e);
                OrganSpec os;
                os.name = m.at("name").get<std::string>();
                os.a_true = m.at("a").get<double>();
                os.b_true = m.at("b").get<double>();
                os.sigma_true = m.at("sigma").get<double>();
                os.ecc_lo = m.at("ecc_lo").get<double>();
                os.ecc_hi = m.at("ecc_hi").get<double>();
                os.region_lo = detail::to_array<double, 3>(m.at("region_lo"),
                                                           "cohort.organs[].region_lo");
                os.region_hi = detail::to_array<double, 3>(m.at("region_hi"),
                                                           "cohort.organs[].region_hi");
                rc.cohort.organs.push_back(os);
            }
        }

        rc.vcs_organ = j.at("vcs").at("organ").get<std::string>();

        rc.schedule_T = j.at("schedule").at("T").get<int>();
        rc.beta_start = j.at("schedule").at("beta_start").get<double>();
        rc.beta_end = j.at("schedule").at("beta_end").get<double>();

        const Json& mo = j.at("model");
        rc.model.widths.clear();
        for (const auto& w : mo.at("widths")) rc.model.widths.push_back(w.get<int>());
        rc.model.t_embed_dim = mo.at("t_embed_dim").get<int>();
        rc.model.v_embed_dim = mo.at("v_embed_dim").get<int>();
        rc.model.io_scale = mo.at("io_scale").get<double>();
        rc.sdf.truncation = mo.at("sdf").at("truncation").get<double>();
        rc.sdf.occupancy_sharpness = mo.at("sdf").at("occupancy_sharpness").get<double>();

        const Json& tr = j.at("train");
        rc.train.epochs = tr.at("epochs").get<int>();
        rc.train.lr = tr.at("lr").get<double>();
        rc.train.weight_decay = tr.at("weight_decay").get<double>();
        rc.train.dropout_p = tr.at("dropout_p").get<double>();
        rc.train.warmup_epochs = tr.at("warmup_epochs").get<int>();
        rc.train.val_fraction = tr.at("val_fraction").get<double>();
        rc.train.seed = tr.at("seed").get<std::uint64_t>();
        const Json& lo = tr.at("loss");
        rc.train.loss.weights.sdf = lo.at("w_sdf").get<double>();
        rc.train.loss.weights.bce = lo.at("w_bce").get<double>();
        rc.train.loss.weights.overlap = lo.at("w_overlap").get<double>();
        rc.train.loss.weights.vcs = lo.at("w_vcs").get<double>();
        rc.train.loss.bce_clamp = lo.at("bce_clamp").get<double>();
        rc.train.loss.overlap_eps = lo.at("overlap_eps").get<double>();
        rc.train.loss.sdf = rc.sdf;

        const Json& sa = j.at("sample");
        rc.sample_steps = sa.at("ddim_steps").get<int>();
        rc.sample_seed = sa.at("seed").get<std::uint64_t>();
        for (const auto& o : sa.at("order")) rc.sample_order.push_back(o.get<std::string>());
        for (auto it = sa.at("v").begin(); it != sa.at("v").end(); ++it)
            rc.sample_v[it.key()] = it.value().get<double>();

        rc.metrics_nn_realism = j.at("metrics").at("nn_realism").get<bool>();
        rc.metrics_diversity = j.at("metrics").at("diversity").get<bool>();

        const Json& ma = j.at("match");
        rc.match_lo = ma.at("v_lo").get<double>();
        rc.match_hi = ma.at("v_hi").get<double>();
        rc.match_step = ma.at("step").get<double>();
        rc.match_steps = ma.at("ddim_steps").get<int>();
        rc.match_seed = ma.at("seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    rc.validate();
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path);
    Json user;
    try {
        in >> user;
    } catch (const Json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(user);
}

inline void write_effective_config(const RunConfig& rc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("config: cannot write " + path);
    out << rc.effective.dump(2) << "\n";
}

}  // namespace organgen
