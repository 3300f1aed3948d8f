#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikegrid/harness.hpp"

using namespace spikegrid;

int main(int argc, char** argv)
{
    CLI::App app{"Event-driven neuromorphic controller simulation for AC microgrids"};
    app.require_subcommand(1);

    std::string scenario_path, checkpoint, adapted, out, dataset_dir;
    std::vector<std::string> sets;
    std::vector<std::string> bundles;
    std::uint64_t seed = 0;
    bool seed_given = false;
    unsigned jobs = 1;

    auto add_scenario_opts = [&](CLI::App* c) {
        c->add_option("--scenario", scenario_path, "scenario JSON file")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--out", out, "output directory");
        c->add_option("--seed", seed, "override the scenario seed")
            ->each([&](const std::string&) { seed_given = true; });
        c->add_option("--set", sets, "dotted-key override, e.g. train.epochs=10");
        c->add_option("--jobs", jobs, "worker pool width");
    };

    CLI::App* gen = app.add_subcommand(
        "generate", "Run the direct controller and record the gated dataset");
    add_scenario_opts(gen);

    CLI::App* tr =
        app.add_subcommand("train", "Train a controller network on a dataset");
    tr->add_option("dataset", dataset_dir, "dataset directory from generate")
        ->required();
    add_scenario_opts(tr);

    CLI::App* rp = app.add_subcommand("replay", "Closed-loop run with a checkpoint");
    add_scenario_opts(rp);
    rp->add_option("--checkpoint", checkpoint, "controller checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    rp->add_option("--adapted", adapted,
                   "checkpoint swapped in at the first post-reconfiguration event")
        ->check(CLI::ExistingFile);

    CLI::App* en = app.add_subcommand("energy", "Aggregate bundle activity into a "
                                                "power comparison table");
    en->add_option("bundles", bundles, "trace bundle directories")->required();
    en->add_option("--out", out, "report CSV path");
    en->add_option("--jobs", jobs, "worker pool width");

    app.add_subcommand("selftest", "Quick built-in numeric checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (seed_given) sets.push_back("seed=" + std::to_string(seed));
        if (gen->parsed()) {
            const RunConfigFile cfg = load_run_config(scenario_path, sets);
            const std::string o =
                out.empty() ? default_out_root() + "/generate/" + cfg.scenario.name
                            : out;
            return cmd_generate(cfg, o);
        }
        if (tr->parsed()) {
            const RunConfigFile cfg = load_run_config(scenario_path, sets);
            const std::string o =
                out.empty() ? default_out_root() + "/train/" + cfg.scenario.name : out;
            return cmd_train(cfg, dataset_dir, o);
        }
        if (rp->parsed()) {
            const RunConfigFile cfg = load_run_config(scenario_path, sets);
            const std::string o =
                out.empty() ? default_out_root() + "/replay/" + cfg.scenario.name : out;
            return cmd_replay(cfg, checkpoint, adapted, o);
        }
        if (en->parsed()) {
            const std::string o =
                out.empty() ? default_out_root() + "/energy.csv" : out;
            return cmd_energy(bundles, o, jobs);
        }
        return cmd_selftest();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    }
}
