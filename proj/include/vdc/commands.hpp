#pragma once

#include <atomic>
#include <cmath>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "harness.hpp"

namespace vdc {

// ---------------------------------------------------------------------------
// Metrics.

struct EditSampleRow {
    std::size_t index;
    double latent_mse;
    double pixel_mse;
    double psnr;
    double variation;  // pixel distance to the unconditional reconstruction
    long nfe_inversion;
    long nfe_sampling;
};

struct MetricsReport {
    std::vector<EditSampleRow> rows;
    double latent_mse_mean = 0.0, latent_mse_std = 0.0;
    double pixel_mse_mean = 0.0, pixel_mse_std = 0.0;
    double psnr_mean = 0.0, psnr_std = 0.0;
    double variation_mean = 0.0, variation_std = 0.0;
    long nfe_per_edit = 0;
};

inline double psnr_from_mse(double mse_value, double peak) {
    if (mse_value <= 0.0) return 300.0;  // lossless; keep the scale finite
    return 10.0 * std::log10(peak * peak / mse_value);
}

namespace detail {
inline void mean_std(const std::vector<double>& xs, double& mean, double& stdev) {
    mean = 0.0;
    stdev = 0.0;
    if (xs.empty()) return;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    for (double x : xs) stdev += (x - mean) * (x - mean);
    stdev = std::sqrt(stdev / static_cast<double>(xs.size()));
}
}  // namespace detail

inline void finalize_report(MetricsReport& rep) {
    std::vector<double> l, p, q, v;
    for (const auto& r : rep.rows) {
        l.push_back(r.latent_mse);
        p.push_back(r.pixel_mse);
        q.push_back(r.psnr);
        v.push_back(r.variation);
    }
    detail::mean_std(l, rep.latent_mse_mean, rep.latent_mse_std);
    detail::mean_std(p, rep.pixel_mse_mean, rep.pixel_mse_std);
    detail::mean_std(q, rep.psnr_mean, rep.psnr_std);
    detail::mean_std(v, rep.variation_mean, rep.variation_std);
    rep.nfe_per_edit = rep.rows.empty() ? 0 : rep.rows.front().nfe_inversion +
                                                  rep.rows.front().nfe_sampling;
}

inline std::string report_csv(const MetricsReport& rep) {
    std::ostringstream os;
    os << "index,latent_mse,pixel_mse,psnr,variation,nfe_inversion,nfe_sampling\n";
    for (const auto& r : rep.rows)
        os << r.index << ',' << format_double(r.latent_mse) << ',' << format_double(r.pixel_mse)
           << ',' << format_double(r.psnr) << ',' << format_double(r.variation) << ','
           << r.nfe_inversion << ',' << r.nfe_sampling << '\n';
    return os.str();
}

inline json report_json(const MetricsReport& rep) {
    json j;
    j["n_samples"] = rep.rows.size();
    j["latent_mse"] = {{"mean", rep.latent_mse_mean}, {"std", rep.latent_mse_std}};
    j["pixel_mse"] = {{"mean", rep.pixel_mse_mean}, {"std", rep.pixel_mse_std}};
    j["psnr"] = {{"mean", rep.psnr_mean}, {"std", rep.psnr_std}};
    j["variation"] = {{"mean", rep.variation_mean}, {"std", rep.variation_std}};
    j["nfe_per_edit"] = rep.nfe_per_edit;
    return j;
}

/// Score a stack on freshly drawn held-out inputs. Each input also runs the
/// unconditional reconstruction, which supplies both the baseline comparison
/// and the variation metric.
inline MetricsReport evaluate_edit(const ConditionStack& stack, DenoiserModel& model,
                                   const RunContext& ctx, const OptimizerConfig& opt_cfg,
                                   std::size_t n_inputs, unsigned long seed,
                                   MetricsReport* baseline_out = nullptr) {
    MetricsReport rep, base_rep;
    std::mt19937_64 rng(seed);
    OptimizerConfig base_cfg = opt_cfg;
    base_cfg.use_steering = false;
    base_cfg.correct_inversions = opt_cfg.correct_inversions;
    for (std::size_t i = 0; i < n_inputs; ++i) {
        Tensor z_clean = ctx.world.sample(rng);
        Tensor R_A = decode(z_clean, ctx.codec).detach();
        Tensor R_B = ctx.task.degrade(R_A);
        Tensor Z_A = encode(R_A, ctx.codec).detach();

        EditResult edited = apply_edit(R_B, stack, model, ctx.codec, ctx.sched, opt_cfg);
        EditResult recon = apply_edit(R_B, stack, model, ctx.codec, ctx.sched, base_cfg);

        EditSampleRow row;
        row.index = i;
        row.latent_mse = mse(edited.Z_edit, Z_A);
        row.pixel_mse = mse(edited.R_edit, R_A);
        row.psnr = psnr_from_mse(row.pixel_mse, ctx.task.pixel_peak);
        row.variation = mse(edited.R_edit, recon.R_edit);
        row.nfe_inversion = edited.nfe_inversion;
        row.nfe_sampling = edited.nfe_sampling;
        rep.rows.push_back(row);

        if (baseline_out) {
            EditSampleRow brow;
            brow.index = i;
            brow.latent_mse = mse(recon.Z_edit, Z_A);
            brow.pixel_mse = mse(recon.R_edit, R_A);
            brow.psnr = psnr_from_mse(brow.pixel_mse, ctx.task.pixel_peak);
            brow.variation = 0.0;
            brow.nfe_inversion = recon.nfe_inversion;
            brow.nfe_sampling = recon.nfe_sampling;
            base_rep.rows.push_back(brow);
        }
    }
    finalize_report(rep);
    if (baseline_out) {
        finalize_report(base_rep);
        *baseline_out = std::move(base_rep);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Commands. Each writes only below `out` and finishes with a manifest.

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

inline fs::path cmd_train_toy(const RunConfig& cfg, const fs::path& out) {
    Timer timer;
    RunContext ctx = make_context(cfg);
    ToyDenoiserConfig dcfg = cfg.denoiser;
    dcfg.d_z = cfg.codec.d_z;
    std::mt19937_64 rng(dcfg.seed);
    auto model = ToyDenoiser::init(dcfg, ctx.sched.T_train, ctx.world.components.size(), rng);
    auto log = train_toy_denoiser(model, ctx.world, ctx.sched);

    auto eval = evaluate_vs_oracle(model, ctx.world, ctx.sched, 2000, 99);
    json cal;
    cal["mse_uncond"] = eval.mse_uncond;
    cal["mse_cond"] = eval.mse_cond;
    cal["cond_uncond_gap"] = eval.cond_uncond_gap;
    cal["ceiling"] = cfg.calibration_ceiling;
    cal["pass"] = eval.mse_uncond <= cfg.calibration_ceiling;

    fs::create_directories(out);
    save_denoiser_bundle(out / "denoiser", model);
    write_json(out / "calibration.json", cal);
    std::ostringstream csv;
    csv << "step,loss\n";
    for (const auto& row : log) csv << row.step << ',' << format_double(row.loss) << '\n';
    write_text(out / "train_loss.csv", csv.str());
    write_manifest(out, timer.seconds());

    if (eval.mse_uncond > cfg.calibration_ceiling)
        throw ValueError("cmd_train_toy: oracle MSE " + format_double(eval.mse_uncond) +
                         " exceeds the calibration ceiling " +
                         format_double(cfg.calibration_ceiling));
    return out / "denoiser";
}

/// Derive the per-seed optimizer configuration (stack suffix, seeds).
inline OptimizerConfig seeded_optimizer(const RunConfig& cfg, unsigned long seed) {
    OptimizerConfig o = cfg.optimizer;
    o.seed = seed;
    return o;
}

inline std::vector<ExamplePair> draw_examples(const RunConfig& cfg, const RunContext& ctx,
                                              unsigned long seed) {
    std::mt19937_64 rng(cfg.example_seed + seed);
    return make_pairs(ctx.task, ctx.world, ctx.codec, cfg.n_examples, rng);
}

inline void cmd_optimize(const RunConfig& cfg, const fs::path& out,
                         const fs::path& denoiser_dir) {
    Timer timer;
    RunContext ctx = make_context(cfg);
    auto model = load_denoiser_bundle(denoiser_dir);
    fs::create_directories(out);

    for (unsigned long seed : cfg.seeds) {
        OptimizerConfig opt = seeded_optimizer(cfg, seed);
        StackConfig scfg = cfg.stack;
        scfg.p = active_suffix(opt, ctx.sched);
        auto stack = init_stack(scfg, seed);
        auto pairs = draw_examples(cfg, ctx, seed);
        auto res = optimize_steering_condition(stack, model, pairs, ctx.codec, ctx.sched,
                                               ctx.policy, opt);

        fs::path sd = out / ("seed_" + std::to_string(seed));
        save_stack_bundle(sd / "stack", stack);
        std::ostringstream csv;
        csv << "iteration,lr,latent_loss,pixel_loss,total_loss\n";
        for (const auto& row : res.log)
            csv << row.iteration << ',' << format_double(row.lr) << ','
                << format_double(row.latent_loss) << ',' << format_double(row.pixel_loss) << ','
                << format_double(row.total_loss) << '\n';
        write_text(sd / "loss.csv", csv.str());
        // condition dump per active step, for external projection/clustering
        fs::create_directories(sd / "conditions");
        for (int t = 1; t <= scfg.p; ++t)
            save_vdct((sd / "conditions" / ("step_" + std::to_string(t) + ".vdct")).string(),
                      generate_condition(stack, t).detach());
        json r;
        r["seed"] = seed;
        r["initial_loss"] = res.initial_loss;
        r["final_loss"] = res.final_loss;
        r["nfe"] = res.nfe;
        r["n_examples"] = pairs.size();
        write_json(sd / "result.json", r);
    }
    write_manifest(out, timer.seconds());
}

inline void cmd_edit(const RunConfig& cfg, const fs::path& out, const fs::path& denoiser_dir,
                     const fs::path& stack_dir) {
    Timer timer;
    RunContext ctx = make_context(cfg);
    auto model = load_denoiser_bundle(denoiser_dir);
    OptimizerConfig opt = cfg.optimizer;

    ConditionStack stack;
    if (cfg.edit.baseline || stack_dir.empty()) {
        StackConfig scfg = cfg.stack;
        scfg.p = active_suffix(opt, ctx.sched);
        stack = init_stack(scfg, cfg.seeds.front());
    } else {
        stack = load_stack_bundle(stack_dir);
    }

    auto rep = evaluate_edit(stack, model, ctx, opt, cfg.edit.n_inputs, cfg.edit.seed);
    fs::create_directories(out);
    write_text(out / "report.csv", report_csv(rep));
    write_json(out / "report.json", report_json(rep));
    write_manifest(out, timer.seconds());
}

inline void cmd_dump_conditions(const fs::path& stack_dir, const fs::path& out) {
    Timer timer;
    auto stack = load_stack_bundle(stack_dir);
    fs::create_directories(out);
    std::ostringstream csv;
    csv << "step,token,dim,value\n";
    for (int t = 1; t <= stack.cfg.p; ++t) {
        Tensor c = generate_condition(stack, t).detach();
        save_vdct((out / ("step_" + std::to_string(t) + ".vdct")).string(), c);
        for (std::size_t tok = 0; tok < stack.cfg.n_tokens; ++tok)
            for (std::size_t d = 0; d < stack.cfg.d_c; ++d)
                csv << t << ',' << tok << ',' << d << ','
                    << format_double(c.data[tok * stack.cfg.d_c + d]) << '\n';
    }
    write_text(out / "conditions.csv", csv.str());
    write_manifest(out, timer.seconds());
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepCell {
    std::size_t index = 0;
    double p_fraction;
    double s;
    int k;
    std::size_t n_examples;
    StackSetup setup;
};

inline std::vector<SweepCell> enumerate_cells(const RunConfig& cfg) {
    if (cfg.sweep.empty()) throw ValueError("cmd_sweep: no sweep axes configured");
    auto pf = cfg.sweep.p_fraction.empty() ? std::vector<double>{cfg.optimizer.p_fraction}
                                           : cfg.sweep.p_fraction;
    auto sv = cfg.sweep.s.empty() ? std::vector<double>{cfg.optimizer.steering.s} : cfg.sweep.s;
    auto kv = cfg.sweep.k.empty() ? std::vector<int>{cfg.schedule.k} : cfg.sweep.k;
    auto nv = cfg.sweep.n_examples.empty() ? std::vector<std::size_t>{cfg.n_examples}
                                           : cfg.sweep.n_examples;
    auto gv = cfg.sweep.cg_setup.empty() ? std::vector<StackSetup>{cfg.stack.setup}
                                         : cfg.sweep.cg_setup;
    std::vector<SweepCell> cells;
    for (double p : pf)
        for (double s : sv)
            for (int k : kv)
                for (std::size_t n : nv)
                    for (StackSetup g : gv)
                        cells.push_back({cells.size(), p, s, k, n, g});
    return cells;
}

inline RunConfig apply_cell(const RunConfig& cfg, const SweepCell& cell) {
    RunConfig c = cfg;
    c.optimizer.p_fraction = cell.p_fraction;
    c.optimizer.steering.s = cell.s;
    c.schedule.k = cell.k;
    c.n_examples = cell.n_examples;
    c.stack.setup = cell.setup;
    return c;
}

struct SweepRow {
    SweepCell cell;
    unsigned long seed;
    double final_loss;
    double latent_mse_mean;
    double pixel_mse_mean;
    double psnr_mean;
    double variation_mean;
    long nfe_per_edit;
};

inline std::string sweep_csv_header() {
    return "cell,p_fraction,s,k,n_examples,setup,seed,final_loss,latent_mse_mean,"
           "pixel_mse_mean,psnr_mean,variation_mean,nfe_per_edit\n";
}

inline std::string sweep_csv_row(const SweepRow& r) {
    std::ostringstream os;
    os << r.cell.index << ',' << format_double(r.cell.p_fraction) << ','
       << format_double(r.cell.s) << ',' << r.cell.k << ',' << r.cell.n_examples << ','
       << setup_name(r.cell.setup) << ',' << r.seed << ',' << format_double(r.final_loss) << ','
       << format_double(r.latent_mse_mean) << ',' << format_double(r.pixel_mse_mean) << ','
       << format_double(r.psnr_mean) << ',' << format_double(r.variation_mean) << ','
       << r.nfe_per_edit << '\n';
    return os.str();
}

/// Run one cell across all seeds, writing only into its own directory.
inline std::vector<SweepRow> run_sweep_cell(const RunConfig& base, const SweepCell& cell,
                                            const fs::path& cell_dir,
                                            const fs::path& denoiser_dir) {
    RunConfig cfg = apply_cell(base, cell);
    RunContext ctx = make_context(cfg);
    auto model = load_denoiser_bundle(denoiser_dir);
    std::vector<SweepRow> rows;
    for (unsigned long seed : cfg.seeds) {
        OptimizerConfig opt = seeded_optimizer(cfg, seed);
        StackConfig scfg = cfg.stack;
        scfg.p = active_suffix(opt, ctx.sched);
        auto stack = init_stack(scfg, seed);
        auto pairs = draw_examples(cfg, ctx, seed);
        auto res = optimize_steering_condition(stack, model, pairs, ctx.codec, ctx.sched,
                                               ctx.policy, opt);
        auto rep = evaluate_edit(stack, model, ctx, opt, cfg.edit.n_inputs, cfg.edit.seed);
        rows.push_back({cell, seed, res.final_loss, rep.latent_mse_mean, rep.pixel_mse_mean,
                        rep.psnr_mean, rep.variation_mean, rep.nfe_per_edit});
    }
    std::ostringstream csv;
    csv << sweep_csv_header();
    for (const auto& r : rows) csv << sweep_csv_row(r);
    write_text(cell_dir / "metrics.csv", csv.str());
    return rows;
}

inline void cmd_sweep(const RunConfig& cfg, const fs::path& out,
                      const fs::path& denoiser_dir) {
    Timer timer;
    auto cells = enumerate_cells(cfg);
    fs::create_directories(out / "cells");

    std::vector<std::vector<SweepRow>> results(cells.size());
    std::vector<std::string> errors(cells.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            fs::path cell_dir = out / "cells" / ("cell_" + std::to_string(cells[i].index));
            fs::create_directories(cell_dir);
            try {
                results[i] = run_sweep_cell(cfg, cells[i], cell_dir, denoiser_dir);
            } catch (const std::exception& e) {
                // leave prior cells' outputs intact; record and move on
                errors[i] = e.what();
                write_text(cell_dir / "error.txt", std::string(e.what()) + "\n");
            }
        }
    };
    int n_threads = std::min<int>(worker_threads(), static_cast<int>(cells.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // deterministic merge ordered by cell index
    std::ostringstream csv;
    csv << sweep_csv_header();
    for (const auto& cell_rows : results)
        for (const auto& r : cell_rows) csv << sweep_csv_row(r);
    write_text(out / "sweep.csv", csv.str());

    // trend summary: fidelity-optimal cell (lowest mean pixel MSE over seeds)
    json summary;
    summary["n_cells"] = cells.size();
    json failed = json::array();
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (!errors[i].empty()) failed.push_back({{"cell", i}, {"error", errors[i]}});
    summary["failed_cells"] = failed;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_cell = 0;
    json table = json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (results[i].empty()) continue;
        double m = 0.0, var = 0.0;
        for (const auto& r : results[i]) {
            m += r.pixel_mse_mean;
            var += r.variation_mean;
        }
        m /= static_cast<double>(results[i].size());
        var /= static_cast<double>(results[i].size());
        table.push_back({{"cell", i},
                         {"p_fraction", cells[i].p_fraction},
                         {"s", cells[i].s},
                         {"k", cells[i].k},
                         {"n_examples", cells[i].n_examples},
                         {"setup", setup_name(cells[i].setup)},
                         {"pixel_mse_mean", m},
                         {"variation_mean", var}});
        if (m < best) {
            best = m;
            best_cell = i;
        }
    }
    summary["cells"] = table;
    summary["best_cell_by_pixel_mse"] = best_cell;
    write_json(out / "summary.json", summary);
    write_manifest(out, timer.seconds());
}

}  // namespace vdc
