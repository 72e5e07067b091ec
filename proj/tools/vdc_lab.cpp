#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vdc/commands.hpp"

namespace {

vdc::RunConfig load_run_config(const std::string& config_path, long seed_override,
                               const std::string& out_override) {
    vdc::RunConfig cfg = vdc::load_config(config_path);
    if (seed_override >= 0) cfg.seeds = {static_cast<unsigned long>(seed_override)};
    if (!out_override.empty()) cfg.out_dir = out_override;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy-scale visual diffusion conditioning lab"};
    app.require_subcommand(1);

    std::string config_path, out_dir, denoiser_dir, stack_dir;
    long seed_override = -1;

    auto add_common = [&](CLI::App* cmd, bool need_config = true) {
        auto* opt = cmd->add_option("--config", config_path, "run configuration JSON");
        if (need_config) opt->required();
        cmd->add_option("--seed", seed_override, "replace the config's seed list");
        cmd->add_option("--out", out_dir, "output directory (overrides config)");
    };

    auto* train = app.add_subcommand("train-toy", "train the toy denoiser and calibrate it");
    add_common(train);

    auto* optimize = app.add_subcommand("optimize", "fit steering conditions per seed");
    add_common(optimize);
    optimize->add_option("--denoiser", denoiser_dir, "trained denoiser bundle")->required();

    auto* edit = app.add_subcommand("edit", "apply a stack to held-out inputs and report metrics");
    add_common(edit);
    edit->add_option("--denoiser", denoiser_dir, "trained denoiser bundle")->required();
    edit->add_option("--stack", stack_dir, "fitted stack bundle (omit for the zero baseline)");

    auto* sweep = app.add_subcommand("sweep", "run the configured ablation grid");
    add_common(sweep);
    sweep->add_option("--denoiser", denoiser_dir, "trained denoiser bundle")->required();

    auto* dump = app.add_subcommand("dump-conditions", "export a stack's conditions per step");
    add_common(dump, false);
    dump->add_option("--stack", stack_dir, "fitted stack bundle")->required();
    dump->add_option("--out-dir", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            auto cfg = load_run_config(config_path, seed_override, out_dir);
            auto bundle = vdc::cmd_train_toy(cfg, cfg.out_dir);
            std::cout << "denoiser bundle: " << bundle.string() << "\n";
        } else if (optimize->parsed()) {
            auto cfg = load_run_config(config_path, seed_override, out_dir);
            vdc::cmd_optimize(cfg, cfg.out_dir, denoiser_dir);
            std::cout << "stacks written to " << cfg.out_dir << "\n";
        } else if (edit->parsed()) {
            auto cfg = load_run_config(config_path, seed_override, out_dir);
            vdc::cmd_edit(cfg, cfg.out_dir, denoiser_dir, stack_dir);
            std::cout << "report written to " << cfg.out_dir << "\n";
        } else if (sweep->parsed()) {
            auto cfg = load_run_config(config_path, seed_override, out_dir);
            vdc::cmd_sweep(cfg, cfg.out_dir, denoiser_dir);
            std::cout << "sweep written to " << cfg.out_dir << "\n";
        } else if (dump->parsed()) {
            vdc::cmd_dump_conditions(stack_dir, out_dir);
            std::cout << "conditions written to " << out_dir << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
