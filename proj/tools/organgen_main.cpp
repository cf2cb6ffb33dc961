// Command-line surface for the phantom-generation pipeline: cohort
// synthesis, volume-model fitting, denoiser training, sequential sampling,
// evaluation, and volume-control sweeps. All commands are deterministic
// under fixed seeds; human-oriented progress goes to stderr, machine-read
// results go to files and stdout.

#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "organgen/cohort.hpp"
#include "organgen/config.hpp"
#include "organgen/denoiser.hpp"
#include "organgen/metrics.hpp"
#include "organgen/sequence.hpp"
#include "organgen/training.hpp"
#include "organgen/vgf.hpp"

namespace {

using namespace organgen;
namespace fs = std::filesystem;

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// Timestamped key=value record on stderr (kept off stdout and out of files
// so run artifacts stay byte-reproducible).
void elog(const std::string& kvs) {
    char ts[32];
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", &tm);
    std::cerr << ts << " " << kvs << "\n";
}

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return run_config_from_json(Json::object());
    return load_run_config(path);
}

// Every run echoes its defaults-merged config next to its outputs:
// <out>/effective_config.json for directory outputs, <out>.config.json for
// file outputs.
void echo_config(const RunConfig& rc, const std::string& out, bool out_is_dir) {
    if (out_is_dir) {
        fs::create_directories(out);
        write_effective_config(rc, out + "/effective_config.json");
    } else {
        if (const fs::path parent = fs::path(out).parent_path(); !parent.empty())
            fs::create_directories(parent);
        write_effective_config(rc, out + ".config.json");
    }
}

Json read_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw DataError(std::string(what) + ": cannot read " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw DataError(std::string(what) + ": " + path + " is not valid JSON: " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const Json& j, const char* what) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(std::string(what) + ": cannot write " + path);
    out << j.dump(2) << "\n";
}

void write_text_file(const std::string& path, const std::string& text, const char* what) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(std::string(what) + ": cannot write " + path);
    out << text;
}

std::pair<double, double> parse_range(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ConfigError("range: expected lo:hi, got '" + s + "'");
    try {
        const double lo = std::stod(s.substr(0, colon));
        const double hi = std::stod(s.substr(colon + 1));
        if (!(lo <= hi)) throw ConfigError("range: need lo <= hi in '" + s + "'");
        return {lo, hi};
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("range: expected lo:hi numbers, got '" + s + "'");
    }
}

std::vector<double> make_v_grid(double lo, double hi, double step) {
    if (!(step > 0.0)) throw ConfigError("sweep: step must be > 0");
    std::vector<double> vs;
    for (int k = 0;; ++k) {
        const double v = lo + static_cast<double>(k) * step;
        if (v > hi + 1e-9) break;
        // Snap near-zero grid points so the baseline entry is exact.
        vs.push_back(std::abs(v) < 1e-12 ? 0.0 : v);
    }
    if (vs.empty()) throw ConfigError("sweep: empty v grid");
    return vs;
}

// Shared CSV schema for sweep and match curves; blank fields where a
// quantity does not apply (delta_pct for match, w1 for sweep).
void write_curve_csv(const std::string& path, const std::vector<SweepPoint>& pts,
                     const std::vector<double>* w1) {
    std::string text = "v,mean_ml,ci_lo_ml,ci_hi_ml,delta_pct,w1_ml\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const SweepPoint& p = pts[i];
        text += fmt_g(p.v) + "," + fmt_g(p.mean_ml) + "," + fmt_g(p.ci_lo_ml) + "," +
                fmt_g(p.ci_hi_ml) + ",";
        if (std::isfinite(p.delta_pct)) text += fmt_g(p.delta_pct);
        text += ",";
        if (w1) text += fmt_g((*w1)[i]);
        text += "\n";
    }
    write_text_file(path, text, "curve csv");
}

std::vector<BinaryMask> cohort_bodies(const std::vector<PhantomCase>& cases) {
    std::vector<BinaryMask> bodies;
    bodies.reserve(cases.size());
    for (const auto& c : cases) bodies.push_back(c.body);
    return bodies;
}

// The volume model is fit on the same leading split train() uses, so the
// held-out validation tail never leaks into the regression.
VcsModel fit_vcs_on_train_split(const std::vector<PhantomCase>& cases, const std::string& organ,
                                double val_fraction) {
    const auto n_val =
        static_cast<std::size_t>(val_fraction * static_cast<double>(cases.size()));
    const std::size_t n_fit = cases.size() - n_val;
    if (n_fit < 3)
        throw DataError("fit-vcs: training split has " + std::to_string(n_fit) +
                        " cases, need at least 3");
    const std::vector<PhantomCase> head(cases.begin(),
                                        cases.begin() + static_cast<std::ptrdiff_t>(n_fit));
    return fit_vcs(body_volumes(head), organ_volumes(head, organ), organ);
}

// ---------------------------------------------------------------- commands

struct GenCohortArgs {
    std::string config, out;
    std::uint64_t seed = 1;
    int n = 16;
    int threads = 0;
};

int cmd_gen_cohort(const GenCohortArgs& a) {
    const RunConfig rc = load_config_or_default(a.config);
    const int threads = a.threads > 0 ? a.threads : default_threads();
    elog("event=gen-cohort-start n=" + std::to_string(a.n) + " seed=" + std::to_string(a.seed));
    const std::vector<PhantomCase> cases = generate_cohort(rc.cohort, a.seed, a.n, threads);
    echo_config(rc, a.out, /*out_is_dir=*/true);
    save_cohort(a.out, cases);

    const std::vector<double> vb = body_volumes(cases);
    std::cout << "cases=" << cases.size() << "\n";
    std::cout << "body_volume_mean_ml=" << fmt_g(mean(vb)) << "\n";
    for (const auto& spec : rc.cohort.organs) {
        const std::vector<double> vo = organ_volumes(cases, spec.name);
        std::cout << "organ=" << spec.name << " volume_mean_ml=" << fmt_g(mean(vo))
                  << " corr_body=" << fmt_g(pearson(vb, vo)) << "\n";
    }
    elog("event=gen-cohort-done out=" + a.out);
    return 0;
}

struct FitVcsArgs {
    std::string config, cohort, organ, out;
};

int cmd_fit_vcs(const FitVcsArgs& a) {
    const RunConfig rc = load_config_or_default(a.config);
    std::string organ = a.organ.empty() ? rc.vcs_organ : a.organ;
    if (organ.empty()) throw ConfigError("fit-vcs: no organ given (--organ or config vcs.organ)");
    const std::vector<PhantomCase> cases = load_cohort(a.cohort);
    const VcsModel m = fit_vcs(body_volumes(cases), organ_volumes(cases, organ), organ);
    echo_config(rc, a.out, /*out_is_dir=*/false);
    write_json_file(a.out, vcs_to_json(m), "fit-vcs");
    std::cout << "organ=" << m.organ << " a=" << fmt_g(m.a) << " b=" << fmt_g(m.b)
              << " mu=" << fmt_g(m.mu) << " sigma=" << fmt_g(m.sigma) << " n=" << m.n_fit
              << "\n";
    return 0;
}

struct TrainArgs {
    std::string config, cohort, organ, out;
    std::int64_t seed = -1;  // <0: use config
    int threads = 0;
};

int cmd_train(const TrainArgs& a) {
    const RunConfig rc = load_config_or_default(a.config);
    TrainConfig tc = rc.train;
    tc.threads = a.threads > 0 ? a.threads : default_threads();
    if (a.seed >= 0) tc.seed = static_cast<std::uint64_t>(a.seed);

    const std::vector<PhantomCase> cases = load_cohort(a.cohort);
    if (cases.empty()) throw DataError("train: empty cohort " + a.cohort);
    const int oi = cases.front().organ_index(a.organ);
    if (oi < 0) throw DataError("train: cohort has no organ " + a.organ);

    const VcsModel vcs = fit_vcs_on_train_split(cases, a.organ, tc.val_fraction);
    elog("event=vcs-fit organ=" + a.organ + " a=" + fmt_g(vcs.a) + " b=" + fmt_g(vcs.b) +
         " sigma=" + fmt_g(vcs.sigma));

    // Earlier organs in the cohort order are the ground-truth context
    // (teacher forcing); the organ being learned is the reference.
    std::vector<TrainItem> items;
    items.reserve(cases.size());
    for (const auto& c : cases) {
        std::vector<const BinaryMask*> priors;
        for (int k = 0; k < oi; ++k)
            priors.push_back(&c.organ_masks[static_cast<std::size_t>(k)]);
        items.push_back(make_train_item(c.body, priors,
                                        c.organ_masks[static_cast<std::size_t>(oi)], vcs,
                                        rc.sdf));
    }

    const NoiseSchedule sched = make_schedule(rc.schedule_T, rc.beta_start, rc.beta_end);
    DenoiserParams<double> params(rc.model);
    Rng init_rng = Rng::of(tc.seed, "init");
    init_params(params, init_rng);
    elog("event=train-start organ=" + a.organ + " cases=" + std::to_string(items.size()) +
         " epochs=" + std::to_string(tc.epochs) + " params=" + std::to_string(params.flat.size()));

    const TrainResult res = train(params, items, sched, vcs, tc, [](const EpochRecord& r) {
        std::string line = "event=epoch epoch=" + std::to_string(r.epoch) +
                           " train_loss=" + fmt_g(r.train.total);
        if (r.has_val) line += " val_loss=" + fmt_g(r.val.total);
        elog(line);
    });
    if (res.diverged) elog("event=train-diverged note=rolled-back-to-last-finite-params");

    const Checkpoint ck = make_checkpoint(params, sched, rc.sdf, vcs, a.organ,
                                          static_cast<int>(res.history.size()), res.history);
    echo_config(rc, a.out, /*out_is_dir=*/false);
    save_checkpoint(a.out, ck);
    const double final_loss =
        res.history.empty() ? 0.0 : res.history.back().train.total;
    std::cout << "organ=" << a.organ << " epochs=" << res.history.size()
              << " final_train_loss=" << fmt_g(final_loss)
              << " diverged=" << (res.diverged ? 1 : 0) << "\n";
    return 0;
}

struct SampleArgs {
    std::string config, body, out;
    std::vector<std::string> checkpoints;
    std::vector<double> vcs;
    std::int64_t seed = -1;
    int steps = 0;
    int threads = 0;
};

int cmd_sample(const SampleArgs& a) {
    const RunConfig rc = load_config_or_default(a.config);
    if (a.vcs.size() > a.checkpoints.size())
        throw ConfigError("sample: more --vcs values than --checkpoint files");
    const int steps = a.steps > 0 ? a.steps : rc.sample_steps;
    const std::uint64_t seed =
        a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : rc.sample_seed;

    const BinaryMask body = read_vgf_mask(a.body);
    std::vector<CheckpointSampler> samplers;
    samplers.reserve(a.checkpoints.size());
    GenerationPlan plan;
    plan.ddim_steps = steps;
    std::map<std::string, OrganSampler> by_name;
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
        const Checkpoint ck = load_checkpoint(a.checkpoints[i]);
        samplers.emplace_back(ck);
        double v = i < a.vcs.size() ? a.vcs[i] : 0.0;
        if (auto it = rc.sample_v.find(ck.organ); i >= a.vcs.size() && it != rc.sample_v.end())
            v = it->second;
        plan.order.push_back({ck.organ, v});
        by_name.emplace(ck.organ, samplers.back().sampler());
    }

    Rng rng = Rng::of(seed, "sample");
    elog("event=sample-start organs=" + std::to_string(plan.order.size()) +
         " steps=" + std::to_string(steps) + " seed=" + std::to_string(seed));
    const GeneratedAnatomy anat = generate_anatomy(body, plan, by_name, rng);

    echo_config(rc, a.out, /*out_is_dir=*/true);
    PhantomCase pc;
    pc.case_id = 0;
    pc.body = anat.body;
    Json report;
    report["body_volume_ml"] = volume_ml(anat.body);
    report["organs"] = Json::array();
    for (const auto& g : anat.organs) {
        pc.organ_names.push_back(g.name);
        pc.organ_masks.push_back(g.mask);
        pc.true_volumes.push_back(g.volume_ml);
        report["organs"].push_back({{"name", g.name},
                                    {"requested_v", g.requested_v},
                                    {"realized_v", g.realized_v},
                                    {"volume_ml", g.volume_ml},
                                    {"preclear_overlap_dice", g.preclear_overlap_dice},
                                    {"cleared_fraction", g.cleared_fraction},
                                    {"degenerate", g.degenerate}});
        if (g.degenerate)
            elog("event=degenerate-organ organ=" + g.name +
                 " cleared_fraction=" + fmt_g(g.cleared_fraction));
    }
    save_case(a.out, pc);
    write_json_file(a.out + "/anatomy.json", report, "sample");
    for (const auto& g : anat.organs)
        std::cout << "organ=" << g.name << " volume_ml=" << fmt_g(g.volume_ml)
                  << " realized_v=" << fmt_g(g.realized_v)
                  << " cleared_fraction=" << fmt_g(g.cleared_fraction) << "\n";
    return 0;
}

struct EvaluateArgs {
    std::string config, generated, reference, train_set, out;
    int threads = 0;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const RunConfig rc = load_config_or_default(a.config);
    const int threads = a.threads > 0 ? a.threads : default_threads();
    const std::vector<PhantomCase> gen = load_cohort(a.generated);
    const std::vector<PhantomCase> ref = load_cohort(a.reference);
    const std::vector<PhantomCase> trn = load_cohort(a.train_set);
    if (gen.size() != ref.size())
        throw DataError("evaluate: generated has " + std::to_string(gen.size()) +
                        " cases, reference has " + std::to_string(ref.size()));
    if (gen.empty()) throw DataError("evaluate: no cases in " + a.generated);

    const std::vector<std::string> organs = ref.front().organ_names;
    std::vector<MetricRow> rows;
    for (std::size_t ci = 0; ci < gen.size(); ++ci) {
        for (const auto& organ : organs) {
            const int gi = gen[ci].organ_index(organ);
            const int ri = ref[ci].organ_index(organ);
            if (gi < 0 || ri < 0)
                throw DataError("evaluate: case " + std::to_string(ci) + " lacks organ " +
                                organ);
            const BinaryMask& gm = gen[ci].organ_masks[static_cast<std::size_t>(gi)];
            const BinaryMask& rm = ref[ci].organ_masks[static_cast<std::size_t>(ri)];
            const std::string id = std::to_string(gen[ci].case_id);
            rows.push_back({id, organ, "dice", dice(gm, rm)});
            rows.push_back({id, organ, "volume_ml", volume_ml(gm)});
            if (gm.count() == 0 || rm.count() == 0) {
                elog("event=skip-surface-metrics case=" + id + " organ=" + organ +
                     " reason=empty-mask");
                continue;
            }
            const SurfaceDistances d = surface_distances(aligned_surface(gm), aligned_surface(rm));
            rows.push_back({id, organ, "assd_mm", d.assd_mm});
            rows.push_back({id, organ, "hd95_mm", d.hd95_mm});
            rows.push_back({id, organ, "chamfer_mm", d.chamfer_mm});
        }
    }

    for (const auto& organ : organs) {
        std::vector<BinaryMask> gen_masks;
        std::vector<std::string> gen_ids;
        for (const auto& c : gen) {
            const int gi = c.organ_index(organ);
            const BinaryMask& m = c.organ_masks[static_cast<std::size_t>(gi)];
            if (m.count() == 0) continue;
            gen_masks.push_back(m);
            gen_ids.push_back(std::to_string(c.case_id));
        }
        std::vector<BinaryMask> train_masks;
        for (const auto& c : trn) {
            const int ti = c.organ_index(organ);
            if (ti < 0) continue;
            const BinaryMask& m = c.organ_masks[static_cast<std::size_t>(ti)];
            if (m.count() != 0) train_masks.push_back(m);
        }
        if (rc.metrics_nn_realism && !gen_masks.empty() && !train_masks.empty()) {
            const auto realism = nn_realism(gen_masks, train_masks, threads);
            for (std::size_t i = 0; i < realism.size(); ++i) {
                rows.push_back({gen_ids[i], organ, "nn_chamfer_mm", realism[i].chamfer_mm});
                rows.push_back({gen_ids[i], organ, "nn_hd95_mm", realism[i].hd95_mm});
            }
        }
        if (rc.metrics_diversity && gen_masks.size() >= 2) {
            const DiversityReport div = pairwise_diversity(gen_masks, threads);
            rows.push_back({"all", organ, "div_dice_mean", div.dice.mean});
            rows.push_back({"all", organ, "div_dice_std", div.dice.stddev});
            rows.push_back({"all", organ, "div_chamfer_mean_mm", div.chamfer_mm.mean});
            rows.push_back({"all", organ, "div_chamfer_std_mm", div.chamfer_mm.stddev});
        }
        std::vector<double> gen_vols, ref_vols;
        for (const auto& c : gen)
            gen_vols.push_back(volume_ml(c.organ_masks[static_cast<std::size_t>(
                c.organ_index(organ))]));
        for (const auto& c : ref)
            ref_vols.push_back(volume_ml(c.organ_masks[static_cast<std::size_t>(
                c.organ_index(organ))]));
        rows.push_back({"all", organ, "w1_volume_ml", wasserstein1(gen_vols, ref_vols)});
    }

    echo_config(rc, a.out, /*out_is_dir=*/false);
    write_metrics_csv(a.out, rows);
    std::cout << "rows=" << rows.size() << " out=" << a.out << "\n";
    return 0;
}

struct SweepArgs {
    std::string config, checkpoint, cohort, range, out;
    double step = 1.0;
    std::int64_t seed = -1;
    int steps = 0;
    int threads = 0;
};

int cmd_sweep(const SweepArgs& a) {
    const RunConfig rc = load_config_or_default(a.config);
    const int threads = a.threads > 0 ? a.threads : default_threads();
    const auto [lo, hi] = parse_range(a.range);
    const std::vector<double> vs = make_v_grid(lo, hi, a.step);
    const int steps = a.steps > 0 ? a.steps : rc.match_steps;
    const std::uint64_t seed =
        a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : rc.match_seed;

    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const std::vector<PhantomCase> cases = load_cohort(a.cohort);
    const std::vector<BinaryMask> bodies = cohort_bodies(cases);
    elog("event=sweep-start organ=" + ck.organ + " points=" + std::to_string(vs.size()) +
         " cases=" + std::to_string(bodies.size()));
    const std::vector<SweepPoint> pts =
        vcs_sweep(bodies, ck, ck.organ, vs, steps, seed, threads);
    echo_config(rc, a.out, /*out_is_dir=*/false);
    write_curve_csv(a.out, pts, nullptr);
    for (const auto& p : pts)
        std::cout << "v=" << fmt_g(p.v) << " mean_ml=" << fmt_g(p.mean_ml)
                  << " delta_pct=" << fmt_g(p.delta_pct) << "\n";
    return 0;
}

struct MatchArgs {
    std::string config, checkpoint, cohort, target, out, range;
    double step = 0.0;
    std::int64_t seed = -1;
    int steps = 0;
    int threads = 0;
};

std::vector<double> load_target_volumes(const std::string& path) {
    const Json j = read_json_file(path, "match target");
    const Json* arr = nullptr;
    if (j.is_array()) arr = &j;
    else if (j.is_object() && j.contains("volumes_ml") && j.at("volumes_ml").is_array())
        arr = &j.at("volumes_ml");
    else
        throw DataError("match target: " + path +
                        " must be a JSON array or {\"volumes_ml\": [...]}");
    std::vector<double> v;
    for (const auto& e : *arr) {
        if (!e.is_number()) throw DataError("match target: non-numeric entry in " + path);
        v.push_back(e.get<double>());
    }
    if (v.empty()) throw DataError("match target: empty volume list in " + path);
    return v;
}

int cmd_match(const MatchArgs& a) {
    const RunConfig rc = load_config_or_default(a.config);
    const int threads = a.threads > 0 ? a.threads : default_threads();
    double lo = rc.match_lo, hi = rc.match_hi;
    if (!a.range.empty()) std::tie(lo, hi) = parse_range(a.range);
    const double step = a.step > 0.0 ? a.step : rc.match_step;
    const int steps = a.steps > 0 ? a.steps : rc.match_steps;
    const std::uint64_t seed =
        a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : rc.match_seed;

    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const std::vector<PhantomCase> cases = load_cohort(a.cohort);
    const std::vector<double> target = load_target_volumes(a.target);
    const std::vector<double> train_vols = organ_volumes(cases, ck.organ);
    elog("event=match-start organ=" + ck.organ + " grid=[" + fmt_g(lo) + "," + fmt_g(hi) +
         "] step=" + fmt_g(step));
    const MatchResult res = match_cohort(target, cohort_bodies(cases), ck, ck.organ,
                                         train_vols, lo, hi, step, steps, seed, threads);
    if (res.flat_warning)
        elog("event=flat-sweep-warning note=w1-curve-range-below-2x-noise-floor "
             "noise_floor_ml=" +
             fmt_g(res.noise_floor_ml));

    echo_config(rc, a.out, /*out_is_dir=*/false);
    const double reduction_pct =
        res.w1_before == 0.0 ? 0.0 : (1.0 - res.w1_after / res.w1_before) * 100.0;
    Json out{{"organ", ck.organ},
             {"v_star", res.v_star},
             {"w1_before_ml", res.w1_before},
             {"w1_after_ml", res.w1_after},
             {"reduction_pct", reduction_pct},
             {"noise_floor_ml", res.noise_floor_ml},
             {"flat_warning", res.flat_warning}};
    write_json_file(a.out, out, "match");
    const fs::path csv = fs::path(a.out).replace_extension(".csv");
    write_curve_csv(csv.string(), res.curve, &res.w1_curve);
    std::cout << "v_star=" << fmt_g(res.v_star) << " w1_before_ml=" << fmt_g(res.w1_before)
              << " w1_after_ml=" << fmt_g(res.w1_after)
              << " reduction_pct=" << fmt_g(reduction_pct)
              << " flat_warning=" << (res.flat_warning ? 1 : 0) << "\n";
    return 0;
}

template <class F>
int run_guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error (data): " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error (numeric): " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error (internal): " << e.what() << "\n";
        return 5;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential volume-conditioned generation of 3D organ phantoms"};
    app.require_subcommand(1);

    GenCohortArgs gc;
    CLI::App* c_gc = app.add_subcommand("gen-cohort", "Generate a synthetic phantom cohort");
    c_gc->add_option("--config", gc.config, "Run config JSON");
    c_gc->add_option("--out", gc.out, "Output cohort directory")->required();
    c_gc->add_option("--seed", gc.seed, "Cohort seed");
    c_gc->add_option("--n", gc.n, "Number of cases");
    c_gc->add_option("--threads", gc.threads, "Worker cap (default: cores)");

    FitVcsArgs fv;
    CLI::App* c_fv = app.add_subcommand("fit-vcs", "Fit the volume-control model on a cohort");
    c_fv->add_option("--config", fv.config, "Run config JSON");
    c_fv->add_option("--cohort", fv.cohort, "Cohort directory")->required();
    c_fv->add_option("--organ", fv.organ, "Organ name");
    c_fv->add_option("--out", fv.out, "Output model JSON")->required();

    TrainArgs tr;
    CLI::App* c_tr = app.add_subcommand("train", "Train the denoiser for one organ");
    c_tr->add_option("--config", tr.config, "Run config JSON");
    c_tr->add_option("--cohort", tr.cohort, "Cohort directory")->required();
    c_tr->add_option("--organ", tr.organ, "Organ name")->required();
    c_tr->add_option("--out", tr.out, "Output checkpoint path")->required();
    c_tr->add_option("--seed", tr.seed, "Training seed (overrides config)");
    c_tr->add_option("--threads", tr.threads, "Worker cap (default: cores)");

    SampleArgs sa;
    CLI::App* c_sa = app.add_subcommand("sample", "Sample organs sequentially into a body");
    c_sa->add_option("--config", sa.config, "Run config JSON");
    c_sa->add_option("--checkpoint", sa.checkpoints, "Checkpoint path (repeat per organ)")
        ->required();
    c_sa->add_option("--body", sa.body, "Body mask VGF")->required();
    c_sa->add_option("--vcs", sa.vcs, "Requested volume scalar per checkpoint (default 0)");
    c_sa->add_option("--out", sa.out, "Output case directory")->required();
    c_sa->add_option("--seed", sa.seed, "Sampling seed (overrides config)");
    c_sa->add_option("--steps", sa.steps, "DDIM steps (overrides config)");
    c_sa->add_option("--threads", sa.threads, "Worker cap (default: cores)");

    EvaluateArgs ev;
    CLI::App* c_ev = app.add_subcommand("evaluate", "Shape metrics against a reference cohort");
    c_ev->add_option("--config", ev.config, "Run config JSON");
    c_ev->add_option("--generated", ev.generated, "Generated cohort directory")->required();
    c_ev->add_option("--reference", ev.reference, "Reference cohort directory")->required();
    c_ev->add_option("--train-set", ev.train_set, "Training cohort directory")->required();
    c_ev->add_option("--out", ev.out, "Output metrics CSV")->required();
    c_ev->add_option("--threads", ev.threads, "Worker cap (default: cores)");

    SweepArgs sw;
    CLI::App* c_sw = app.add_subcommand("sweep", "Sweep the volume scalar across a cohort");
    c_sw->add_option("--config", sw.config, "Run config JSON");
    c_sw->add_option("--checkpoint", sw.checkpoint, "Checkpoint path")->required();
    c_sw->add_option("--cohort", sw.cohort, "Cohort directory (bodies)")->required();
    c_sw->add_option("--range", sw.range, "v range lo:hi")->default_val("-3:3");
    c_sw->add_option("--step", sw.step, "v grid step")->default_val(1.0);
    c_sw->add_option("--out", sw.out, "Output CSV")->required();
    c_sw->add_option("--seed", sw.seed, "Sampling seed (overrides config)");
    c_sw->add_option("--steps", sw.steps, "DDIM steps (overrides config)");
    c_sw->add_option("--threads", sw.threads, "Worker cap (default: cores)");

    MatchArgs ma;
    CLI::App* c_ma = app.add_subcommand("match", "Find the volume scalar matching a target");
    c_ma->add_option("--config", ma.config, "Run config JSON");
    c_ma->add_option("--checkpoint", ma.checkpoint, "Checkpoint path")->required();
    c_ma->add_option("--cohort", ma.cohort, "Cohort directory")->required();
    c_ma->add_option("--target", ma.target, "Target volumes JSON")->required();
    c_ma->add_option("--out", ma.out, "Output JSON (curve CSV written beside it)")->required();
    c_ma->add_option("--range", ma.range, "v range lo:hi (overrides config)");
    c_ma->add_option("--step", ma.step, "v grid step (overrides config)");
    c_ma->add_option("--seed", ma.seed, "Sampling seed (overrides config)");
    c_ma->add_option("--steps", ma.steps, "DDIM steps (overrides config)");
    c_ma->add_option("--threads", ma.threads, "Worker cap (default: cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems are config errors
    }

    if (c_gc->parsed()) return run_guarded([&] { return cmd_gen_cohort(gc); });
    if (c_fv->parsed()) return run_guarded([&] { return cmd_fit_vcs(fv); });
    if (c_tr->parsed()) return run_guarded([&] { return cmd_train(tr); });
    if (c_sa->parsed()) return run_guarded([&] { return cmd_sample(sa); });
    if (c_ev->parsed()) return run_guarded([&] { return cmd_evaluate(ev); });
    if (c_sw->parsed()) return run_guarded([&] { return cmd_sweep(sw); });
    if (c_ma->parsed()) return run_guarded([&] { return cmd_match(ma); });
    return 2;
}
