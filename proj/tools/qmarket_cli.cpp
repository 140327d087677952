// Command-line front end: train policy tables, run evaluation episodes, and
// aggregate reports, driven by a single JSON config.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qmarket/config.hpp"
#include "qmarket/harness.hpp"
#include "qmarket/io.hpp"

namespace {

int dispatch(const std::string& verb_name, const std::string& config_path, int seed_offset,
             const std::string& out_override) {
    qmarket::ExperimentConfig cfg;
    if (!config_path.empty())
        cfg = qmarket::parse_config_text(qmarket::read_text_file(config_path));
    if (!out_override.empty()) cfg.out_dir = out_override;
    cfg.validate();
    qmarket::run_experiment(cfg, qmarket::parse_verb(verb_name), seed_offset);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wireless scheduling market simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    int seed_offset = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON experiment config (defaults when omitted)");
        sub->add_option("--seed-offset", seed_offset, "offset added to every evaluation seed");
        sub->add_option("--out", out_override, "output directory (overrides config)");
    };
    add_common(app.add_subcommand("train", "fit kernels and solve policy tables"));
    add_common(app.add_subcommand("run", "evaluate policies using saved tables"));
    add_common(app.add_subcommand("report", "aggregate run outputs into report tables"));
    add_common(app.add_subcommand("all", "train, run, and report in one pass"));

    CLI11_PARSE(app, argc, argv);

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        return dispatch(verb, config_path, seed_offset, out_override);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
