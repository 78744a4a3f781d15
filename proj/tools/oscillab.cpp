// oscillab: run one experiment described by a JSON config.
//
//   oscillab run --config exp.json [--seed S] [--output-dir DIR]
//   oscillab <command> --config exp.json ...
//
// Exit status: 0 when the experiment's check passes, 2 when it is refuted, 1 on error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "oscillab/config.hpp"
#include "oscillab/run.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    bool quiet = false;
};

void add_common(CLI::App* app, Options& o) {
    app->add_option("-c,--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--seed", o.seed, "base seed; multi-starts use seed, seed+1, ..., seed+7");
    app->add_option("-o,--output-dir", o.output_dir, "directory for CSV and JSON reports");
    app->add_flag("-q,--quiet", o.quiet, "suppress the summary on stdout");
}

int execute(const Options& o, const std::string& forced_command) {
    auto cfg = oscillab::load_config(o.config, forced_command);
    if (o.seed) {
        cfg.seeds.clear();
        for (std::uint64_t s = 0; s < 8; ++s) cfg.seeds.push_back(*o.seed + s);
    }
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;

    const auto out = oscillab::run_experiment(cfg);
    oscillab::write_outputs(out, cfg, oscillab::run_metadata(o.config));
    if (!o.quiet) std::cout << out.summary.dump(2) << "\n";
    return out.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"oscillab: homogenization and two-scale Young measure experiments"};
    app.require_subcommand(1);
    Options opts;
    std::string chosen;

    auto* run = app.add_subcommand("run", "run the command named in the config");
    add_common(run, opts);
    run->callback([&] { chosen = "run"; });
    for (const auto& name : oscillab::command_names()) {
        auto* sub = app.add_subcommand(name, "run '" + name + "' with the given config");
        add_common(sub, opts);
        sub->callback([&chosen, name] { chosen = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        return execute(opts, chosen == "run" ? "" : chosen);
    } catch (const std::exception& e) {
        std::cerr << "oscillab: " << e.what() << "\n";
        return 1;
    }
}
